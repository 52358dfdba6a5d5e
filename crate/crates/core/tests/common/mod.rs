//! Shared fixtures: hand-built feeders, the bundled case and a max-flow
//! oracle for the DC load-shed problem on radial networks.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use proptest::prelude::*;
use restore_core::model::{Bus, Demand, Generator, GeneratorKind, Line, Network};
use restore_core::scenarios::{load_damage, load_scenario, DerPlacement, PlacementName};
use restore_core::{apply_damage, load_case};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn bundled_case() -> Network {
    load_case(data_dir().join("ieee123_1ph.json")).expect("bundled case loads")
}

pub fn bundled_damage() -> Vec<usize> {
    load_damage(data_dir().join("damage.json")).expect("bundled damage loads").damaged_lines
}

pub fn bundled_damaged_case() -> Network {
    apply_damage(&bundled_case(), &bundled_damage()).unwrap()
}

pub fn placement(name: &str) -> DerPlacement {
    load_scenario(data_dir().join(format!("{name}.json"))).expect("bundled scenario loads").placement
}

pub fn bus(id: usize, reference: bool) -> Bus {
    Bus { id, is_reference: reference, v_min: 0.9, v_max: 1.1, damaged: false }
}

/// A distribution line with series impedance `r + j x` (per-unit).
pub fn line(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64, limit: f64) -> Line {
    let z2 = r * r + x * x;
    Line {
        id,
        from_bus,
        to_bus,
        b: -x / z2,
        g: r / z2,
        g_fr: 0.0,
        b_fr: 0.0,
        g_to: 0.0,
        b_to: 0.0,
        t_m: 1.0,
        t_r: 1.0,
        t_i: 0.0,
        thermal_limit: limit,
        angle_diff_min: -0.52,
        angle_diff_max: 0.52,
        damaged: false,
        transformer: false,
    }
}

pub fn substation(id: usize, bus: usize, p_max: f64) -> Generator {
    Generator { id, bus, p_min: -p_max, p_max, q_min: -p_max, q_max: p_max, kind: GeneratorKind::Substation, damaged: false }
}

pub fn demand(id: usize, bus: usize, p: f64) -> Demand {
    Demand { id, bus, p, q: 0.3 * p, has_der: false, damaged: false }
}

/// The chain `1 -L1- 2 -L2- 3` with 1 MW at bus 2 and 2 MW at bus 3.
pub fn three_bus_chain() -> Network {
    Network {
        name: "chain3".into(),
        base_mva: 1.0,
        buses: vec![bus(1, true), bus(2, false), bus(3, false)],
        lines: vec![line(1, 1, 2, 0.01, 0.02, 10.0), line(2, 2, 3, 0.01, 0.02, 10.0)],
        generators: vec![substation(1, 1, 10.0)],
        demands: vec![demand(1, 2, 1.0), demand(2, 3, 2.0)],
    }
}

/// A substation bus feeding one load over a single line.
pub fn two_bus(load: f64) -> Network {
    Network {
        name: "two".into(),
        base_mva: 1.0,
        buses: vec![bus(1, true), bus(2, false)],
        lines: vec![line(1, 1, 2, 0.001, 0.002, 10.0)],
        generators: vec![substation(1, 1, 10.0)],
        demands: vec![demand(1, 2, load)],
    }
}

pub fn no_ders() -> DerPlacement {
    DerPlacement { name: PlacementName::Custom, der_nodes: vec![], p_max: 0.0, q_min: 0.0, q_max: 0.0 }
}

/// Maximum load (per-unit) a radial network can serve under the DC model
/// when only the lines in `line_on` carry power. On a tree the angles can
/// always be chosen to realise any flow within the thermal limits, so the
/// answer is a maximum flow from the generators to the demands.
pub fn max_served(net: &Network, line_on: &[bool]) -> f64 {
    let pos = net.bus_index();
    let n = net.buses.len() + 2;
    let (src, sink) = (n - 2, n - 1);
    let mut cap = vec![vec![0.0f64; n]; n];
    for g in &net.generators {
        cap[src][pos[&g.bus]] += g.p_max.max(0.0);
    }
    for d in &net.demands {
        cap[pos[&d.bus]][sink] += d.p;
    }
    for (l, on) in net.lines.iter().zip(line_on) {
        if *on {
            let (a, b) = (pos[&l.from_bus], pos[&l.to_bus]);
            cap[a][b] += l.thermal_limit;
            cap[b][a] += l.thermal_limit;
        }
    }
    edmonds_karp(cap, src, sink)
}

fn edmonds_karp(mut cap: Vec<Vec<f64>>, s: usize, t: usize) -> f64 {
    let n = cap.len();
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[s] = s;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-12 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while v != s {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            cap[prev[v]][v] -= push;
            cap[v][prev[v]] += push;
            v = prev[v];
        }
        total += push;
    }
}

/// All orderings of `items`.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Best served energy (MWh) over every repair order, one repair per
/// period, periods of one hour, `n_t` periods in total.
pub fn brute_force_served(net: &Network, damaged: &[usize], n_t: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for order in permutations(damaged) {
        let mut served = 0.0;
        for t in 0..n_t {
            let repaired = &order[..t.min(order.len())];
            let on: Vec<bool> = net.lines.iter().map(|l| !damaged.contains(&l.id) || repaired.contains(&l.id)).collect();
            served += max_served(net, &on) * net.base_mva;
        }
        best = best.max(served);
    }
    best
}

/// A random radial feeder with its damaged line ids.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub net: Network,
    pub damaged: Vec<usize>,
}

pub fn arb_radial() -> impl Strategy<Value = RandomCase> {
    (4usize..=10)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec(prop_oneof![Just(0.0), 0.05f64..1.0], n - 1),
                proptest::collection::vec((0.002f64..0.05, 0.005f64..0.1, prop_oneof![0.2f64..1.5, Just(10.0)]), n - 1),
                proptest::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.05f64..0.6], n - 1),
                0.5f64..6.0,
                proptest::collection::btree_set(1..n, 0..=3usize.min(n - 1)),
            )
        })
        .prop_map(|(n, parents, loads, params, ders, sub_cap, damaged)| {
            let buses = (1..=n).map(|i| bus(i, i == 1)).collect();
            let lines = (2..=n)
                .map(|i| {
                    let (r, x, lim) = params[i - 2];
                    line(i - 1, 1 + parents[i - 2].index(i - 1), i, r, x, lim)
                })
                .collect();
            let demands = (2..=n).map(|i| demand(i - 1, i, loads[i - 2])).collect();
            let mut generators = vec![substation(1, 1, sub_cap)];
            for (k, &cap) in ders.iter().enumerate() {
                if cap > 0.0 {
                    generators.push(Generator {
                        id: generators.len() + 1,
                        bus: k + 2,
                        p_min: 0.0,
                        p_max: cap,
                        q_min: -0.1,
                        q_max: 0.1,
                        kind: GeneratorKind::UtilityDer,
                        damaged: false,
                    });
                }
            }
            let net = Network { name: "random".into(), base_mva: 1.0, buses, lines, generators, demands };
            let damaged: Vec<usize> = damaged.into_iter().collect();
            RandomCase { net: apply_damage(&net, &damaged).unwrap(), damaged }
        })
}

