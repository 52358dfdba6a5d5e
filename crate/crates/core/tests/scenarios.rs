mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use restore_core::scenarios::{enumerate_cases, home_microgrid_load, PlacementName, HOME_LOAD_FLOOR};
use restore_core::{apply_der_mode, CoreError, DerMode, DerPlacement, GeneratorKind};

use common::*;

#[test]
fn netting_floor_branch() {
    // 68 kW average load against a 75 kW DER leaves the 1% floor
    assert_relative_eq!(home_microgrid_load(0.068, 0.075).unwrap(), 0.00068, max_relative = 1e-12);
}

#[test]
fn netting_subtraction_branch() {
    assert_relative_eq!(home_microgrid_load(0.200, 0.075).unwrap(), 0.125, max_relative = 1e-12);
}

#[test]
fn netting_zero_load() {
    assert_eq!(home_microgrid_load(0.0, 0.075).unwrap(), 0.0);
}

#[test]
fn netting_rejects_negative_input() {
    assert!(matches!(home_microgrid_load(-0.1, 0.075), Err(CoreError::NegativeInput(_))));
    assert!(matches!(home_microgrid_load(0.1, -0.075), Err(CoreError::NegativeInput(_))));
}

#[test]
fn bundled_placements() {
    let uniform = placement("uniform");
    let clustered = placement("clustered");
    assert_eq!(uniform.name, PlacementName::Uniform);
    assert_eq!(uniform.der_nodes.len(), 29, "the uniform list is kept verbatim, duplicates included");
    assert_eq!(clustered.der_nodes.len(), 16);
    for p in [&uniform, &clustered] {
        assert_relative_eq!(p.p_max, 0.075);
        assert_relative_eq!(p.q_min, -0.05);
        assert_relative_eq!(p.q_max, 0.05);
    }
    assert!(uniform.units_per_bus().values().any(|&k| k > 1));
}

#[test]
fn community_mode_adds_one_generator_per_entry() {
    let net = bundled_case();
    let p = placement("uniform");
    let case = apply_der_mode(&net, &p, DerMode::CommunityMicrogrid).unwrap();
    let ders: Vec<_> = case.network.generators.iter().filter(|g| g.kind == GeneratorKind::CustomerDer).collect();
    assert_eq!(ders.len(), p.der_nodes.len());
    for g in ders {
        assert_relative_eq!(g.p_min, 0.0);
        assert_relative_eq!(g.p_max, 0.075);
        assert_relative_eq!(g.q_min, -0.05);
        assert_relative_eq!(g.q_max, 0.05);
        assert!(!g.damaged);
    }
    assert_eq!(case.network.demands.iter().map(|d| d.p).collect::<Vec<_>>(), net.demands.iter().map(|d| d.p).collect::<Vec<_>>());
}

#[test]
fn base_mode_leaves_the_network_alone() {
    let net = bundled_case();
    for name in ["uniform", "clustered"] {
        let case = apply_der_mode(&net, &placement(name), DerMode::Base).unwrap();
        assert_eq!(case.network, net);
        assert!(!case.der_demand_ids.is_empty());
    }
}

#[test]
fn home_mode_on_a_toy_case() {
    let mut net = three_bus_chain();
    net.demands = vec![demand(1, 3, 0.100)];
    let p = DerPlacement { name: PlacementName::Custom, der_nodes: vec![3], p_max: 0.075, q_min: -0.05, q_max: 0.05 };
    let case = apply_der_mode(&net, &p, DerMode::HomeMicrogrid).unwrap();
    assert_relative_eq!(case.network.demands[0].p, 0.025, max_relative = 1e-12);
    assert!(case.network.demands[0].has_der);
    assert!(case.network.generators.iter().all(|g| g.kind != GeneratorKind::CustomerDer));
}

#[test]
fn repeated_nodes_stack_before_netting() {
    let mut net = three_bus_chain();
    net.demands = vec![demand(1, 3, 0.200)];
    let p = DerPlacement { name: PlacementName::Custom, der_nodes: vec![3, 3], p_max: 0.075, q_min: -0.05, q_max: 0.05 };
    let home = apply_der_mode(&net, &p, DerMode::HomeMicrogrid).unwrap();
    assert_relative_eq!(home.network.demands[0].p, 0.050, max_relative = 1e-12);
    let community = apply_der_mode(&net, &p, DerMode::CommunityMicrogrid).unwrap();
    assert_eq!(community.network.generators.iter().filter(|g| g.bus == 3).count(), 2);
}

#[test]
fn unknown_der_bus() {
    let net = three_bus_chain();
    let p = DerPlacement { name: PlacementName::Custom, der_nodes: vec![42], p_max: 0.075, q_min: -0.05, q_max: 0.05 };
    assert!(matches!(apply_der_mode(&net, &p, DerMode::Base), Err(CoreError::UnknownId { kind: "bus", id: 42 })));
}

#[test]
fn transformed_case_is_not_a_valid_input() {
    let net = bundled_case();
    let p = placement("clustered");
    let home = apply_der_mode(&net, &p, DerMode::HomeMicrogrid).unwrap();
    assert!(matches!(apply_der_mode(&home.network, &p, DerMode::HomeMicrogrid), Err(CoreError::AlreadyTransformed)));
    let base = apply_der_mode(&net, &p, DerMode::Base).unwrap();
    assert_eq!(apply_der_mode(&base.network, &p, DerMode::Base).unwrap().network, base.network);
}

#[test]
fn six_cases_in_order() {
    let net = bundled_case();
    let placements = [placement("uniform"), placement("clustered")];
    let cases = enumerate_cases(&net, &placements, &DerMode::ALL).unwrap();
    let labels: Vec<String> = cases.iter().map(|c| c.label()).collect();
    assert_eq!(
        labels,
        ["uniform-base", "uniform-home", "uniform-community", "clustered-base", "clustered-home", "clustered-community"]
    );
    assert_eq!(enumerate_cases(&net, &placements[..1], &[DerMode::Base]).unwrap().len(), 1);
    assert!(enumerate_cases(&net, &[], &[DerMode::Base]).unwrap().is_empty());
}

#[test]
fn mode_names_parse() {
    assert_eq!("home".parse::<DerMode>().unwrap(), DerMode::HomeMicrogrid);
    assert_eq!("community_microgrid".parse::<DerMode>().unwrap(), DerMode::CommunityMicrogrid);
    assert!("island".parse::<DerMode>().is_err());
}

fn arb_placement(n_bus: usize) -> impl Strategy<Value = DerPlacement> {
    (proptest::collection::vec(1..=n_bus, 0..12), 0.0f64..0.3).prop_map(|(der_nodes, p_max)| DerPlacement {
        name: PlacementName::Custom,
        der_nodes,
        p_max,
        q_min: -0.05,
        q_max: 0.05,
    })
}

proptest! {
    #[test]
    fn home_netting_stays_within_bounds(d in 0.0f64..5.0, p in 0.0f64..5.0) {
        let n = home_microgrid_load(d, p).unwrap();
        prop_assert!(HOME_LOAD_FLOOR * d <= n + 1e-15);
        prop_assert!(n <= d);
    }

    #[test]
    fn mode_invariants_on_the_bundled_case(p in arb_placement(56)) {
        let net = bundled_case();
        let base = apply_der_mode(&net, &p, DerMode::Base).unwrap();
        let home = apply_der_mode(&net, &p, DerMode::HomeMicrogrid).unwrap();
        let community = apply_der_mode(&net, &p, DerMode::CommunityMicrogrid).unwrap();

        prop_assert!(base.network.generators.iter().all(|g| g.kind != GeneratorKind::CustomerDer));
        prop_assert!(home.network.generators.iter().all(|g| g.kind != GeneratorKind::CustomerDer));
        prop_assert_eq!(
            community.network.generators.iter().filter(|g| g.kind == GeneratorKind::CustomerDer).count(),
            p.der_nodes.len()
        );
        for (orig, new) in net.demands.iter().zip(&home.network.demands) {
            prop_assert!(HOME_LOAD_FLOOR * orig.p <= new.p + 1e-15);
            prop_assert!(new.p <= orig.p);
        }
        prop_assert!(home.network.total_demand_mw() <= base.network.total_demand_mw() + 1e-12);
        prop_assert_eq!(&community.network.demands.iter().map(|d| d.p).collect::<Vec<_>>(),
                        &net.demands.iter().map(|d| d.p).collect::<Vec<_>>());
        prop_assert_eq!(&community.network.lines, &net.lines);
        prop_assert_eq!(&base.der_demand_ids, &home.der_demand_ids);
    }
}
