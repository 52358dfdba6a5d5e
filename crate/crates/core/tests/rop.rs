mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use proptest::prelude::*;
use restore_core::model::Network;
use restore_core::rop::{build_rop_with, plan_order, solve_rop_with, RopConfig, RopOptions};
use restore_core::{
    apply_damage, apply_der_mode, build_rop, compute_big_m, solve_rop, BuiltinBackend, ComponentId, CoreError, DamageSets,
    DerMode, MilpBackend, MilpOptions, RestorationPlan, RopInstance, Status, TimeGrid,
};
use restore_milp::solve_lp;

use common::*;

const INF: f64 = f64::INFINITY;

fn base_case(net: &Network) -> restore_core::EffectiveCase {
    apply_der_mode(net, &no_ders(), DerMode::Base).unwrap()
}

fn chain_instance(config: RopConfig) -> RopInstance {
    let net = apply_damage(&three_bus_chain(), &[1, 2]).unwrap();
    let case = base_case(&net);
    build_rop_with(&case, &DamageSets::from_network(&net), TimeGrid { n_periods: 3, step_hours: 1.0 }, config).unwrap()
}

/// Rows of an instance keyed by name: bounds and coefficients by column name.
fn rows_by_name(inst: &RopInstance) -> BTreeMap<String, (f64, f64, BTreeMap<String, f64>)> {
    let lp = &inst.problem.lp;
    let mut rows: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); lp.num_rows()];
    for &(r, c, v) in &lp.triplets {
        *rows[r].entry(lp.col_names[c].clone()).or_insert(0.0) += v;
    }
    lp.row_names
        .iter()
        .zip(rows)
        .enumerate()
        .map(|(r, (name, coefs))| (name.clone(), (lp.row_lower[r], lp.row_upper[r], coefs)))
        .collect()
}

#[test]
fn big_m_sums_angle_bounds() {
    let mut net = three_bus_chain();
    net.buses = (1..=55).map(|i| bus(i, i == 1)).collect();
    net.lines = (2..=55).map(|i| line(i - 1, i - 1, i, 0.01, 0.02, 1.0)).collect();
    net.demands.clear();
    assert_eq!(net.lines.len(), 54);
    assert_relative_eq!(compute_big_m(&base_case(&net)), 54.0 * 0.52, max_relative = 1e-12);

    let two = two_bus(1.0);
    assert_relative_eq!(compute_big_m(&base_case(&two)), 0.52);

    let mut single = two_bus(0.0);
    single.buses.truncate(1);
    single.lines.clear();
    single.demands.clear();
    assert_eq!(compute_big_m(&base_case(&single)), 0.0);
}

#[test]
fn bundled_instance_dimensions() {
    let net = bundled_damaged_case();
    let case = base_case(&net);
    let damage = DamageSets::from_network(&net);
    let time = TimeGrid::for_damage(damage.len(), 1);
    assert_eq!(time.n_periods, 19);
    let inst = build_rop(&case, &damage, time).unwrap();
    assert_eq!(inst.problem.integer_columns.len(), 18 * 19);
    assert_eq!(inst.z.len(), 19);
    assert!(inst.z.iter().all(|zt| zt.len() == 18));
    // one DC-flow block per period: a balance row per bus and a reference row
    let names = &inst.problem.lp.row_names;
    assert_eq!(names.iter().filter(|n| n.starts_with("ref[")).count(), 19);
    assert_eq!(names.iter().filter(|n| n.starts_with("bal[")).count(), 19 * 56);
    // every column map is a bijection onto distinct columns
    let mut all: Vec<usize> =
        [&inst.theta, &inst.pg, &inst.pl, &inst.x, &inst.z].iter().flat_map(|m| m.iter().flatten().copied()).collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), n);
    // undamaged components have no status column
    let z_names: Vec<&String> = inst.problem.integer_columns.iter().map(|&c| &inst.problem.lp.col_names[c]).collect();
    assert!(z_names.iter().all(|n| n.starts_with("z[L")));
}

#[test]
fn short_horizon_is_rejected() {
    let net = apply_damage(&three_bus_chain(), &[1, 2]).unwrap();
    let r = build_rop(&base_case(&net), &DamageSets::from_network(&net), TimeGrid { n_periods: 2, step_hours: 1.0 });
    assert!(matches!(r, Err(CoreError::Horizon { needed: 3, given: 2 })));
}

#[test]
fn unknown_damaged_component_is_rejected() {
    let net = three_bus_chain();
    let r = build_rop(&base_case(&net), &DamageSets::lines_only(&[9]), TimeGrid { n_periods: 2, step_hours: 1.0 });
    assert!(matches!(r, Err(CoreError::UnknownId { kind: "line", id: 9 })));
}

/// The three-bus chain with both lines damaged over three periods, written
/// out by hand and compared row by row.
#[test]
fn three_bus_chain_matrix() {
    let inst = chain_instance(RopConfig { repairs_per_period: 1, supply_cuts: false });
    let lp = &inst.problem.lp;
    assert_eq!(lp.num_cols(), 3 * 10);

    let m = 2.0 * 0.52;
    // r = 0.01, x = 0.02 gives b = -40; flow rows are divided by |b|
    let b = -40.0;
    let mut expected: BTreeMap<String, (f64, f64, Vec<(String, f64)>)> = BTreeMap::new();
    let mut row = |name: String, lo: f64, hi: f64, coefs: Vec<(String, f64)>| {
        expected.insert(name, (lo, hi, coefs));
    };
    for t in 0..3 {
        let c = |s: &str| format!("{s}[{t}]");
        let th = |i: usize| format!("theta[{i},{t}]");
        let pl = |k: usize| format!("pl[{k},{t}]");
        let z = |k: usize| format!("z[L{k},{t}]");
        row(c("ref"), 0.0, 0.0, vec![(th(1), 1.0)]);
        row(format!("bal[1,{t}]"), 0.0, 0.0, vec![(format!("pg[1,{t}]"), 1.0), (pl(1), -1.0)]);
        row(format!("bal[2,{t}]"), 0.0, 0.0, vec![(pl(1), 1.0), (pl(2), -1.0), (format!("x[1,{t}]"), -1.0)]);
        row(format!("bal[3,{t}]"), 0.0, 0.0, vec![(pl(2), 1.0), (format!("x[2,{t}]"), -2.0)]);
        for (k, i, j) in [(1, 1, 2), (2, 2, 3)] {
            let flow = vec![(pl(k), 1.0 / 40.0), (th(i), b / 40.0), (th(j), -b / 40.0)];
            let mut hi = flow.clone();
            hi.push((z(k), m));
            row(format!("flow_hi[{k},{t}]"), -INF, m, hi);
            let mut lo = flow;
            lo.push((z(k), -m));
            row(format!("flow_lo[{k},{t}]"), -m, INF, lo);
            row(format!("therm_hi[{k},{t}]"), -INF, 0.0, vec![(pl(k), 1.0), (z(k), -10.0)]);
            row(format!("therm_lo[{k},{t}]"), 0.0, INF, vec![(pl(k), 1.0), (z(k), 10.0)]);
        }
        row(c("budget"), -INF, t.min(2) as f64, vec![(z(1), 1.0), (z(2), 1.0)]);
    }
    for t in 0..2 {
        for k in [1, 2] {
            row(format!("mono[L{k},{t}]"), -INF, 0.0, vec![(format!("z[L{k},{t}]"), 1.0), (format!("z[L{k},{}]", t + 1), -1.0)]);
        }
    }

    let actual = rows_by_name(&inst);
    assert_eq!(actual.len(), lp.num_rows(), "row names are unique");
    assert_eq!(actual.keys().collect::<Vec<_>>(), expected.keys().collect::<Vec<_>>());
    for (name, (lo, hi, coefs)) in &expected {
        let (alo, ahi, acoefs) = &actual[name];
        assert_eq!((alo, ahi), (lo, hi), "bounds of {name}");
        assert_eq!(acoefs.len(), coefs.len(), "support of {name}: {acoefs:?}");
        for (col, v) in coefs {
            let got = acoefs.get(col).unwrap_or_else(|| panic!("{name} lacks {col}"));
            assert!((got - v).abs() <= 1e-12 * v.abs().max(1.0), "{name}/{col}: {got} vs {v}");
        }
    }

    // objective prices served energy, and only the final-period statuses are fixed
    for (c, name) in lp.col_names.iter().enumerate() {
        let obj = match name.as_str() {
            n if n.starts_with("x[1,") => 1.0,
            n if n.starts_with("x[2,") => 2.0,
            _ => 0.0,
        };
        assert_eq!(lp.objective[c], obj, "{name}");
        if name.starts_with("z[") {
            let lower = if name.ends_with(",2]") { 1.0 } else { 0.0 };
            assert_eq!((lp.col_lower[c], lp.col_upper[c]), (lower, 1.0), "{name}");
        }
        if name.starts_with("x[") {
            assert_eq!((lp.col_lower[c], lp.col_upper[c]), (0.0, 1.0));
        }
        if name.starts_with("pl[") {
            assert_eq!((lp.col_lower[c], lp.col_upper[c]), (-10.0, 10.0));
        }
    }
}

#[test]
fn supply_rows_are_extra_rows_only() {
    let plain = chain_instance(RopConfig { repairs_per_period: 1, supply_cuts: false });
    let tight = chain_instance(RopConfig::default());
    assert_eq!(plain.problem.lp.num_cols(), tight.problem.lp.num_cols());
    let plain_rows = rows_by_name(&plain);
    let tight_rows = rows_by_name(&tight);
    for (name, row) in &plain_rows {
        assert_eq!(tight_rows.get(name), Some(row), "{name}");
    }
    assert!(tight_rows.len() > plain_rows.len());
}

#[test]
fn three_bus_chain_plan() {
    let inst = chain_instance(RopConfig::default());
    let sol = solve_rop(&inst).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert_eq!(sol.plan.schedule, vec![vec![], vec![ComponentId::Line(1)], vec![ComponentId::Line(2)]]);
    assert_eq!(plan_order(&sol.plan), [ComponentId::Line(1), ComponentId::Line(2)]);
    // by enumeration: L1 then L2 serves 0 + 1 + 3, L2 then L1 serves 0 + 0 + 3
    let net = apply_damage(&three_bus_chain(), &[1, 2]).unwrap();
    let oracle = brute_force_served(&net, &[1, 2], 3);
    assert_relative_eq!(oracle, 4.0, max_relative = 1e-12);
    assert_relative_eq!(sol.plan.objective_mwh, oracle, max_relative = 1e-6);
    sol.plan.check(&inst.damage, 1).unwrap();
}

#[test]
fn no_damage_serves_everything() {
    let net = three_bus_chain();
    let inst = build_rop(&base_case(&net), &DamageSets::default(), TimeGrid { n_periods: 1, step_hours: 1.0 }).unwrap();
    assert!(inst.problem.integer_columns.is_empty());
    let sol = solve_rop(&inst).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert_eq!(sol.plan.schedule, vec![Vec::<ComponentId>::new()]);
    assert!(sol.plan.energization.is_empty());
    assert_relative_eq!(sol.plan.objective_mwh, 3.0, max_relative = 1e-9);
    assert!(sol.plan.served_fraction.iter().flatten().all(|&x| (x - 1.0).abs() < 1e-9));
}

fn plan_from(energization: &[(ComponentId, usize)], n_t: usize) -> RestorationPlan {
    let mut schedule = vec![Vec::new(); n_t];
    for &(c, t) in energization {
        schedule[t].push(c);
    }
    RestorationPlan {
        schedule,
        energization: energization.iter().copied().collect(),
        demand_ids: vec![],
        served_fraction: vec![],
        objective_mwh: 0.0,
        step_hours: 1.0,
    }
}

#[test]
fn order_follows_energization_period() {
    let plan = plan_from(&[(ComponentId::Line(5), 1), (ComponentId::Line(2), 2)], 3);
    assert_eq!(plan_order(&plan), [ComponentId::Line(5), ComponentId::Line(2)]);
}

#[test]
fn order_ties_break_by_id() {
    let plan = plan_from(&[(ComponentId::Line(9), 1), (ComponentId::Line(4), 1)], 2);
    assert_eq!(plan_order(&plan), [ComponentId::Line(4), ComponentId::Line(9)]);
    assert!(plan.check(&DamageSets::lines_only(&[4, 9]), 2).is_ok());
    assert!(plan.check(&DamageSets::lines_only(&[4, 9]), 1).is_err());
}

#[test]
fn plan_json_shape() {
    let plan = plan_from(&[(ComponentId::Line(5), 1), (ComponentId::Line(2), 2)], 3);
    let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
    assert_eq!(v["schedule"], serde_json::json!([[], ["L5"], ["L2"]]));
    assert_eq!(v["energization"], serde_json::json!({"L2": 2, "L5": 1}));
    assert!(v["objective_mwh"].is_number());
    let back: RestorationPlan = serde_json::from_value(v).unwrap();
    assert_eq!(back, plan);
}

#[test]
fn component_ids_parse() {
    for s in ["B3", "L17", "G2", "D40"] {
        assert_eq!(s.parse::<ComponentId>().unwrap().to_string(), s);
    }
    assert!("X1".parse::<ComponentId>().is_err());
    assert!("L".parse::<ComponentId>().is_err());
}

#[test]
fn damaged_bus_gates_its_lines_and_loads() {
    let mut net = apply_damage(&three_bus_chain(), &[2]).unwrap();
    net.buses[1].damaged = true;
    let case = base_case(&net);
    let damage = DamageSets::from_network(&net);
    assert_eq!(damage.components(), [ComponentId::Bus(2), ComponentId::Line(2)]);
    let inst = build_rop(&case, &damage, TimeGrid::for_damage(2, 1)).unwrap();
    let sol = solve_rop(&inst).unwrap();
    // bus 2 first reconnects its 1 MW load; line 2 then reaches bus 3
    assert_eq!(plan_order(&sol.plan), [ComponentId::Bus(2), ComponentId::Line(2)]);
    assert_relative_eq!(sol.plan.objective_mwh, 4.0, max_relative = 1e-6);
    let rows = rows_by_name(&inst);
    assert!(rows.contains_key("prec[2,0]"), "a line cannot return before its end bus");
}

// ---------------------------------------------------------------------------
// random radial networks

fn solve_random(rc: &RandomCase) -> (RopInstance, restore_core::rop::RopSolution) {
    let case = base_case(&rc.net);
    let damage = DamageSets::from_network(&rc.net);
    let inst = build_rop(&case, &damage, TimeGrid::for_damage(damage.len(), 1)).unwrap();
    let sol = solve_rop(&inst).unwrap();
    (inst, sol)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn matches_permutation_oracle(rc in arb_radial()) {
        let (inst, sol) = solve_random(&rc);
        prop_assert_eq!(sol.status, Status::Optimal);
        let oracle = brute_force_served(&rc.net, &rc.damaged, inst.time.n_periods);
        let tol = 1e-6 * oracle.abs().max(1e-6);
        prop_assert!((sol.plan.objective_mwh - oracle).abs() <= tol, "rop {} oracle {}", sol.plan.objective_mwh, oracle);
    }

    #[test]
    fn solutions_satisfy_structural_invariants(rc in arb_radial()) {
        let case = base_case(&rc.net);
        let damage = DamageSets::from_network(&rc.net);
        let inst = build_rop(&case, &damage, TimeGrid::for_damage(damage.len(), 1)).unwrap();
        let sol = BuiltinBackend.solve(&inst.problem, &MilpOptions::default()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        let v = &sol.values;
        let tol = 1e-7;
        prop_assert!(inst.problem.lp.max_violation(v) <= 1e-6);
        let n_t = inst.time.n_periods;
        for t in 0..n_t {
            let on: f64 = inst.z[t].iter().map(|&c| v[c]).sum();
            prop_assert!(on <= t as f64 + tol, "budget in period {}", t);
            for (c, &col) in inst.z[t].iter().enumerate() {
                prop_assert!(v[col] < tol || v[col] > 1.0 - tol, "integral status");
                if t + 1 < n_t {
                    prop_assert!(v[col] <= v[inst.z[t + 1][c]] + tol, "monotone status");
                } else {
                    prop_assert!(v[col] > 1.0 - tol, "complete by the final period");
                }
            }
            for &col in &inst.x[t] {
                prop_assert!((-tol..=1.0 + tol).contains(&v[col]));
            }
            for (k, l) in rc.net.lines.iter().enumerate() {
                let status = inst.components.iter().position(|&c| c == ComponentId::Line(l.id)).map_or(1.0, |c| v[inst.z[t][c]]);
                prop_assert!(v[inst.pl[t][k]].abs() <= l.thermal_limit * status + 1e-6);
            }
        }
        // relaxation sandwich
        let relaxed = solve_lp(&inst.problem.lp, 1e-7).unwrap();
        prop_assert!(relaxed.objective >= sol.objective - 1e-6);
        let plan = solve_rop(&inst).unwrap().plan;
        plan.check(&damage, 1).unwrap();
        prop_assert!(plan.served_fraction.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
    }

    /// With a line out, its flow rows hold for every angle pair within the
    /// decoupling constant: the big-M makes them slack.
    #[test]
    fn open_line_rows_are_slack(th1 in -0.52f64..0.52, th2 in -0.52f64..0.52, th3 in -0.52f64..0.52) {
        let inst = chain_instance(RopConfig { repairs_per_period: 1, supply_cuts: false });
        let lp = &inst.problem.lp;
        let mut x = vec![0.0; lp.num_cols()];
        for t in 0..3 {
            x[inst.theta[t][0]] = th1;
            x[inst.theta[t][1]] = th2;
            x[inst.theta[t][2]] = th3;
        }
        let act = lp.row_activity(&x);
        for (r, name) in lp.row_names.iter().enumerate() {
            if name.starts_with("flow_") || name.starts_with("therm_") {
                prop_assert!(act[r] >= lp.row_lower[r] - 1e-12 && act[r] <= lp.row_upper[r] + 1e-12, "{}", name);
            }
        }
    }
}

#[test]
fn larger_budget_allows_parallel_repairs() {
    let net = apply_damage(&three_bus_chain(), &[1, 2]).unwrap();
    let case = base_case(&net);
    let config = RopConfig { repairs_per_period: 2, supply_cuts: true };
    let time = TimeGrid::for_damage(2, 2);
    assert_eq!(time.n_periods, 2);
    let inst = build_rop_with(&case, &DamageSets::from_network(&net), time, config).unwrap();
    let sol = solve_rop_with(&inst, &RopOptions::default(), &BuiltinBackend).unwrap();
    assert_eq!(sol.plan.schedule[1].len(), 2);
    assert_eq!(plan_order(&sol.plan), [ComponentId::Line(1), ComponentId::Line(2)]);
    assert_relative_eq!(sol.plan.objective_mwh, 3.0, max_relative = 1e-6);
}
