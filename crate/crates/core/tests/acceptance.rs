//! End-to-end acceptance run on the bundled feeder. Prints one PASS/FAIL
//! line per criterion and exits nonzero when any criterion fails.

mod common;

use std::cell::{Cell, RefCell};
use std::process::ExitCode;
use std::time::Instant;

use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use restore_core::metrics::{energy_not_served, reconnection_times};
use restore_core::rip::simulate_plan;
use restore_core::rop::plan_order;
use restore_core::scenarios::home_microgrid_load;
use restore_core::sweep::{run_sweep, SweepOptions, SweepResult};
use restore_core::{
    apply_damage, apply_der_mode, build_rop, solve_rop, ComponentId, DamageSets, DerMode, EffectiveCase, Network,
    RestorationPlan, Status, TimeGrid,
};

use common::*;

const PLACEMENTS: [&str; 2] = ["uniform", "clustered"];

/// Collects the sub-checks of one criterion and prints a single line.
struct Criterion {
    id: u8,
    title: &'static str,
    notes: Vec<String>,
    failed: Vec<String>,
}

impl Criterion {
    fn new(id: u8, title: &'static str) -> Self {
        Criterion { id, title, notes: Vec::new(), failed: Vec::new() }
    }

    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }

    fn finish(self) -> bool {
        let ok = self.failed.is_empty();
        let detail = if ok { self.notes.join("; ") } else { format!("failed: {}", self.failed.join("; ")) };
        println!("criterion {} {}: {} [{}]", self.id, if ok { "PASS" } else { "FAIL" }, self.title, detail);
        ok
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn rop_ens(sweep: &SweepResult, placement: &str, mode: DerMode) -> f64 {
    sweep.case(placement, mode).map_or(f64::NAN, |c| c.rop_ens.total_ens)
}

fn effective(net: &Network, placement: &str, mode: DerMode) -> EffectiveCase {
    apply_der_mode(net, &common::placement(placement), mode).unwrap()
}

fn criterion_1(sweep: &SweepResult, net: &Network) -> bool {
    let mut c = Criterion::new(1, "six-case ROP ENS within 10%, total demand within 1%, batch under 30 min");
    let targets = [
        ("uniform", DerMode::Base, 27.7),
        ("uniform", DerMode::HomeMicrogrid, 18.7),
        ("uniform", DerMode::CommunityMicrogrid, 11.5),
        ("clustered", DerMode::Base, 27.7),
        ("clustered", DerMode::HomeMicrogrid, 19.2),
        ("clustered", DerMode::CommunityMicrogrid, 16.4),
    ];
    for (p, m, target) in targets {
        let status = sweep.case(p, m).map(|c| c.status);
        let ens = rop_ens(sweep, p, m);
        c.expect(within(ens, target, 0.10), format!("{p}-{m} {ens:.3} vs {target} ({status:?})"));
    }
    let total = effective(net, "uniform", DerMode::Base).network.total_demand_mw() * 19.0;
    c.expect(within(total, 66.31, 0.01), format!("demand {total:.2} MWh"));
    let seconds: f64 = sweep.cases.iter().map(|c| c.seconds).sum();
    c.expect(sweep.cases.len() == 6 && seconds < 1800.0, format!("{} ROPs in {seconds:.0} s", sweep.cases.len()));
    c.finish()
}

fn criterion_2(sweep: &SweepResult) -> bool {
    let mut c = Criterion::new(2, "strict ENS orderings");
    for p in PLACEMENTS {
        let (b, h, m) = (
            rop_ens(sweep, p, DerMode::Base),
            rop_ens(sweep, p, DerMode::HomeMicrogrid),
            rop_ens(sweep, p, DerMode::CommunityMicrogrid),
        );
        c.expect(b > h && h > m, format!("{p}: {b:.3} > {h:.3} > {m:.3}"));
        let fraction = sweep.case(p, DerMode::Base).map_or(f64::NAN, |c| c.rop_ens.ens_fraction);
        c.expect(fraction > 0.4, format!("{p} base fraction {fraction:.3}"));
    }
    let (u, k) = (rop_ens(sweep, "uniform", DerMode::CommunityMicrogrid), rop_ens(sweep, "clustered", DerMode::CommunityMicrogrid));
    c.expect(u < k, format!("community uniform {u:.3} < clustered {k:.3}"));
    c.finish()
}

fn criterion_3(sweep: &SweepResult) -> bool {
    let mut c = Criterion::new(3, "matched RIP vs ROP ENS");
    for p in PLACEMENTS {
        for m in DerMode::ALL {
            let rop = rop_ens(sweep, p, m);
            let rip = sweep.rip_ens(p, m).unwrap_or(f64::NAN);
            if m == DerMode::CommunityMicrogrid {
                c.expect(rip > rop, format!("{p}-{m} rip {rip:.4} > rop {rop:.4}"));
            } else {
                c.expect(within(rip, rop, 1e-4), format!("{p}-{m} rip {rip:.4} = rop {rop:.4}"));
            }
        }
    }
    c.expect(sweep.all_converged(), "all replays converged");
    c.finish()
}

fn criterion_4(sweep: &SweepResult) -> bool {
    let mut c = Criterion::new(4, "sensitivity: matched plan minimal per column, clustered spread larger");
    let mut spread = Vec::new();
    for p in PLACEMENTS {
        let Some(grid) = sweep.sensitivity.iter().find(|s| s.placement == p) else {
            c.expect(false, format!("{p} grid missing"));
            continue;
        };
        for m in DerMode::ALL {
            let own = grid.ens(m, m).unwrap_or(f64::NAN);
            c.expect(grid.matched_is_min(m, 1e-6) == Some(true), format!("{p} actual {m}: matched {own:.3} minimal"));
        }
        spread.push(DerMode::ALL.iter().filter_map(|&m| grid.column_spread(m)).fold(f64::NEG_INFINITY, f64::max));
    }
    if let [u, k] = spread[..] {
        c.expect(k > u, format!("max spread clustered {k:.3} > uniform {u:.3}"));
    }
    c.finish()
}

fn criterion_5(sweep: &SweepResult) -> bool {
    let mut c = Criterion::new(5, "reconnection delay and group ENS directions");
    for (m, target) in [(DerMode::Base, -3.0), (DerMode::HomeMicrogrid, 7.0), (DerMode::CommunityMicrogrid, 10.0)] {
        let delay = sweep.case("clustered", m).and_then(|c| c.reconnection.der_delay()).unwrap_or(f64::NAN);
        c.expect((delay - target).abs() <= 2.0, format!("clustered-{m} delay {delay:+.2} h vs {target:+}"));
    }
    for p in PLACEMENTS {
        let Some(base) = sweep.case(p, DerMode::Base) else {
            c.expect(false, format!("{p}-base missing"));
            continue;
        };
        let base = base.rop_ens.ens_by_group;
        for m in DerMode::ALL {
            let Some(case) = sweep.case(p, m) else { continue };
            let g = case.rop_ens.ens_by_group;
            c.expect(g.der <= g.non_der, format!("{p}-{m} der {:.2} <= non-der {:.2}", g.der, g.non_der));
            if m != DerMode::Base {
                c.expect(g.der <= base.der + 1e-9 && g.non_der <= base.non_der + 1e-9, format!("{p}-{m} groups <= base"));
            }
        }
    }
    c.finish()
}

/// Monotone energization, the per-period budget, completeness by the final
/// period and served fractions in [0, 1], checked from the plan alone.
fn plan_invariants(plan: &RestorationPlan, damage: &DamageSets) -> Result<(), String> {
    let n_t = plan.n_periods();
    let comps = damage.components();
    for t in 0..n_t {
        let on = comps.iter().filter(|&&c| plan.in_service(c, t)).count();
        if on > t {
            return Err(format!("{on} components in service in period {t}"));
        }
        if t + 1 < n_t {
            if let Some(c) = comps.iter().find(|&&c| plan.in_service(c, t) && !plan.in_service(c, t + 1)) {
                return Err(format!("{c} switched off after period {t}"));
            }
        }
    }
    if let Some(c) = comps.iter().find(|&&c| n_t > 0 && !plan.in_service(c, n_t - 1)) {
        return Err(format!("{c} still out in the final period"));
    }
    if plan.served_fraction.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
        return Err("served fraction outside [0, 1]".into());
    }
    plan.check(damage, 1).map_err(|e| e.to_string())
}

fn criterion_6(failures: &mut Vec<String>) -> bool {
    let mut c = Criterion::new(6, "ROP matches the permutation oracle on random radial feeders");
    let cases = 60;
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let start = Instant::now();
    let worst = Cell::new(0.0f64);
    let violations = RefCell::new(Vec::new());
    let result = runner.run(&arb_radial(), |rc| {
        let case = apply_der_mode(&rc.net, &no_ders(), DerMode::Base).unwrap();
        let damage = DamageSets::from_network(&rc.net);
        let inst = build_rop(&case, &damage, TimeGrid::for_damage(damage.len(), 1)).unwrap();
        let sol = solve_rop(&inst).unwrap();
        let oracle = brute_force_served(&rc.net, &rc.damaged, inst.time.n_periods);
        let rel = (sol.plan.objective_mwh - oracle).abs() / oracle.abs().max(1e-6);
        worst.set(worst.get().max(rel));
        proptest::prop_assert_eq!(sol.status, Status::Optimal);
        proptest::prop_assert!(rel <= 1e-6, "rop {} oracle {}", sol.plan.objective_mwh, oracle);
        if let Err(e) = plan_invariants(&sol.plan, &damage) {
            violations.borrow_mut().push(format!("random feeder: {e}"));
        }
        Ok(())
    });
    failures.extend(violations.into_inner());
    let worst = worst.get();
    let seconds = start.elapsed().as_secs_f64();
    c.expect(result.is_ok(), format!("{cases} feeders, worst relative error {worst:.1e}{}", result.err().map_or(String::new(), |e| format!(" ({e})"))));
    c.expect(seconds < 120.0, format!("{seconds:.1} s"));
    c.finish()
}

fn criterion_7(sweep: &SweepResult, net: &Network, mut failures: Vec<String>) -> bool {
    let mut c = Criterion::new(7, "plan and replay invariants on every acceptance run");
    let mut periods = 0;
    let mut worst = 0.0f64;
    for case in &sweep.cases {
        let eff = effective(net, &case.placement, case.mode);
        let damage = DamageSets::from_network(&eff.network);
        if let Err(e) = plan_invariants(&case.plan, &damage) {
            failures.push(format!("{}: {e}", case.label));
        }
        let rip = match simulate_plan(&eff, &case.plan) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{}: replay failed: {e}", case.label));
                continue;
            }
        };
        for (t, state) in rip.periods.iter().enumerate() {
            if !rip.converged[t] {
                continue;
            }
            periods += 1;
            worst = worst.max(rip.residuals[t].max());
            if rip.residuals[t].max() > 1e-6 {
                failures.push(format!("{} period {t}: residual {:.1e}", case.label, rip.residuals[t].max()));
            }
            if state.x.iter().any(|x| !(0.0..=1.0).contains(x)) {
                failures.push(format!("{} period {t}: x outside [0, 1]", case.label));
            }
            for (k, line) in eff.network.lines.iter().enumerate() {
                let off = !case.plan.in_service(ComponentId::Line(line.id), t);
                if off && [state.p_fr[k], state.q_fr[k], state.p_to[k], state.q_to[k]] != [0.0; 4] {
                    failures.push(format!("{} period {t}: flow on open line {}", case.label, line.id));
                }
            }
        }
    }
    c.expect(!sweep.cases.is_empty(), format!("{} plans, {periods} converged periods, worst residual {worst:.1e}", sweep.cases.len()));
    c.expect(failures.is_empty(), failures.first().cloned().unwrap_or_else(|| "no violations".into()));
    c.finish()
}

fn criterion_8(net: &Network) -> bool {
    let mut c = Criterion::new(8, "netting, reconnection averages and ENS on hand examples");
    c.expect(home_microgrid_load(0.068, 0.075).unwrap() == 0.01 * 0.068, "netting floor branch");
    c.expect((home_microgrid_load(0.200, 0.075).unwrap() - 0.125).abs() < 1e-15, "netting subtraction branch");
    c.expect(home_microgrid_load(0.0, 0.075).unwrap() == 0.0, "netting zero load");

    let two = [demand(1, 2, 1.0), demand(2, 3, 2.0)];
    let ens = energy_not_served(&[vec![1.0, 1.0], vec![0.0, 1.0]], &two, 1.0, 1.0).unwrap();
    c.expect(ens.total_ens == 2.0, format!("two-demand ENS {}", ens.total_ens));
    let bundled = effective(net, "uniform", DerMode::Base);
    let zeros = vec![vec![0.0; 19]; bundled.network.demands.len()];
    let all = energy_not_served(&zeros, &bundled.network.demands, bundled.network.base_mva, 1.0).unwrap();
    c.expect(within(all.total_ens, 66.31, 0.01), format!("bundled x = 0 ENS {:.2}", all.total_ens));
    let ones = vec![vec![1.0; 19]; bundled.network.demands.len()];
    c.expect(energy_not_served(&ones, &bundled.network.demands, 1.0, 1.0).unwrap().total_ens == 0.0, "x = 1 ENS 0");

    // chain 1-2-3 with both lines out: L1 then L2, one demand per bus, DER at bus 3
    let chain = apply_damage(&three_bus_chain(), &[1, 2]).unwrap();
    let p = restore_core::DerPlacement { der_nodes: vec![3], p_max: 0.0, ..no_ders() };
    let case = apply_der_mode(&chain, &p, DerMode::Base).unwrap();
    let inst = build_rop(&case, &DamageSets::from_network(&chain), TimeGrid { n_periods: 3, step_hours: 1.0 }).unwrap();
    let plan = solve_rop(&inst).unwrap().plan;
    let order = plan_order(&plan);
    let rec = reconnection_times(&plan, &case).unwrap();
    c.expect(order == [ComponentId::Line(1), ComponentId::Line(2)] && rec.t_d == [1, 2], format!("chain T_d {:?}", rec.t_d));
    c.expect(rec.t_der == Some(2.0) && rec.t_0 == Some(1.0) && rec.der_delay() == Some(1.0), "chain group averages");
    c.finish()
}

fn main() -> ExitCode {
    let net = bundled_damaged_case();
    let placements = [placement("uniform"), placement("clustered")];
    let start = Instant::now();
    let sweep = run_sweep(&net, &placements, &SweepOptions::default()).expect("sweep runs");
    for f in &sweep.failures {
        println!("case {}-{} failed: {}", f.placement, f.mode, f.error);
    }
    for case in &sweep.cases {
        println!(
            "  {:<20} {:?} ROP ENS {:7.3} RIP ENS {:7.3} delay {:+.2} h  {:.0} s",
            case.label,
            case.status,
            case.rop_ens.total_ens,
            sweep.rip_ens(&case.placement, case.mode).unwrap_or(f64::NAN),
            case.reconnection.der_delay().unwrap_or(f64::NAN),
            case.seconds
        );
    }
    println!("  sweep wall time {:.0} s", start.elapsed().as_secs_f64());

    let mut invariant_failures = Vec::new();
    let results = [
        criterion_1(&sweep, &net),
        criterion_2(&sweep),
        criterion_3(&sweep),
        criterion_4(&sweep),
        criterion_5(&sweep),
        criterion_6(&mut invariant_failures),
        criterion_7(&sweep, &net, invariant_failures),
        criterion_8(&net),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
