//! Restoration implementation problem (RIP).
//!
//! A restoration plan is replayed one period at a time. With the
//! energization status of every component fixed, each period is an AC
//! optimal power flow that maximizes served load minus a penalty on
//! lower-voltage violations. Periods are independent and solved in
//! parallel.
//!
//! Parts of the network that cannot carry power are removed before the
//! nonlinear solve: de-energized components carry nothing, and islands
//! without a source have all voltages and served fractions fixed at zero.

mod ipm;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Line, Network, Topology};
use crate::rop::{ComponentId, DamageSets, RestorationPlan};
use crate::scenarios::EffectiveCase;
use crate::CoreError;

/// Penalty per per-unit lower-voltage violation per hour.
pub const DEFAULT_VOLTAGE_PENALTY: f64 = 1.0;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-6;

/// One period of the RIP with all component statuses fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcOpfProblem {
    pub case: EffectiveCase,
    pub period: usize,
    pub step_hours: f64,
    /// Status of every damaged component; components not listed are in
    /// service.
    pub status: BTreeMap<ComponentId, bool>,
    pub penalty: f64,
}

/// Primal solution of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcState {
    pub period: usize,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Lower-voltage violation per bus.
    pub v_violation: Vec<f64>,
    pub p_fr: Vec<f64>,
    pub q_fr: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// Served fraction per demand.
    pub x: Vec<f64>,
    /// Served energy minus the voltage penalty over the period.
    pub objective: f64,
    pub served_mwh: f64,
    pub iterations: usize,
}

/// Largest violation per constraint family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub balance_p: f64,
    pub balance_q: f64,
    pub flow: f64,
    pub voltage: f64,
    pub thermal: f64,
    pub angle: f64,
    /// Generator limits and served-fraction box.
    pub bounds: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        [self.balance_p, self.balance_q, self.flow, self.voltage, self.thermal, self.angle, self.bounds]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn mismatched() -> Self {
        let inf = f64::INFINITY;
        ResidualReport { balance_p: inf, balance_q: inf, flow: inf, voltage: inf, thermal: inf, angle: inf, bounds: inf }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RipResult {
    pub case_label: String,
    pub periods: Vec<AcState>,
    pub residuals: Vec<ResidualReport>,
    pub converged: Vec<bool>,
    pub demand_ids: Vec<usize>,
    /// Served fraction `[demand][period]`.
    pub served_fraction: Vec<Vec<f64>>,
    pub served_mwh: f64,
    pub ens_mwh: f64,
    pub total_demand_mwh: f64,
    pub step_hours: f64,
}

impl RipResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.max()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RipOptions {
    pub tol: f64,
    pub penalty: f64,
    pub max_iter: usize,
}

impl Default for RipOptions {
    fn default() -> Self {
        RipOptions { tol: DEFAULT_RESIDUAL_TOL, penalty: DEFAULT_VOLTAGE_PENALTY, max_iter: 200 }
    }
}

/// Builds the AC problem of period `t` from a plan.
pub fn build_rip_step(case: &EffectiveCase, plan: &RestorationPlan, t: usize) -> Result<AcOpfProblem, CoreError> {
    check_plan(case, plan)?;
    if t >= plan.n_periods() {
        return Err(CoreError::PlanMismatch(format!("period {t} outside a horizon of {}", plan.n_periods())));
    }
    let status = plan.energization.keys().map(|&c| (c, plan.in_service(c, t))).collect();
    Ok(AcOpfProblem { case: case.clone(), period: t, step_hours: plan.step_hours, status, penalty: DEFAULT_VOLTAGE_PENALTY })
}

fn check_plan(case: &EffectiveCase, plan: &RestorationPlan) -> Result<(), CoreError> {
    let damaged = DamageSets::from_network(&case.network).components();
    let planned: Vec<ComponentId> = plan.energization.keys().copied().collect();
    if damaged != planned {
        return Err(CoreError::PlanMismatch(format!(
            "plan schedules {} components but the case has {} damaged",
            planned.len(),
            damaged.len()
        )));
    }
    let ids: Vec<usize> = case.network.demands.iter().map(|d| d.id).collect();
    if ids != plan.demand_ids {
        return Err(CoreError::PlanMismatch("demand ids differ between plan and case".into()));
    }
    Ok(())
}

/// Which parts of the network carry power in one period.
#[derive(Debug, Clone)]
struct Energization {
    bus_on: Vec<bool>,
    line_on: Vec<bool>,
    gen_on: Vec<bool>,
    demand_on: Vec<bool>,
    /// Bus is in an island that contains an energized source.
    sourced: Vec<bool>,
    /// Bus whose angle is fixed at zero.
    angle_ref: Vec<bool>,
    bus_pos: BTreeMap<usize, usize>,
}

impl AcOpfProblem {
    fn status_of(&self, c: ComponentId) -> bool {
        self.status.get(&c).copied().unwrap_or(true)
    }

    fn energization(&self) -> Energization {
        let net = &self.case.network;
        let topo = Topology::new(net);
        let bus_on: Vec<bool> = net.buses.iter().map(|b| self.status_of(ComponentId::Bus(b.id))).collect();
        let line_on: Vec<bool> = net
            .lines
            .iter()
            .map(|l| {
                self.status_of(ComponentId::Line(l.id)) && bus_on[topo.bus_pos[&l.from_bus]] && bus_on[topo.bus_pos[&l.to_bus]]
            })
            .collect();
        let gen_on: Vec<bool> = net
            .generators
            .iter()
            .map(|g| self.status_of(ComponentId::Generator(g.id)) && bus_on[topo.bus_pos[&g.bus]])
            .collect();
        let demand_on =
            net.demands.iter().map(|d| self.status_of(ComponentId::Demand(d.id)) && bus_on[topo.bus_pos[&d.bus]]).collect();
        let labels = topo.components(&|l| line_on[l]);
        let n_isl = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut has_source = vec![false; n_isl];
        for (k, g) in net.generators.iter().enumerate() {
            if gen_on[k] {
                has_source[labels[topo.bus_pos[&g.bus]]] = true;
            }
        }
        let sourced: Vec<bool> = (0..net.buses.len()).map(|b| bus_on[b] && has_source[labels[b]]).collect();
        // one fixed angle per island: the reference bus if present, else the first bus
        let mut root: Vec<Option<usize>> = vec![None; n_isl];
        if bus_on[topo.reference] {
            root[labels[topo.reference]] = Some(topo.reference);
        }
        for b in 0..net.buses.len() {
            if root[labels[b]].is_none() {
                root[labels[b]] = Some(b);
            }
        }
        let angle_ref = (0..net.buses.len()).map(|b| root[labels[b]] == Some(b)).collect();
        Energization { bus_on, line_on, gen_on, demand_on, sourced, angle_ref, bus_pos: topo.bus_pos }
    }

    /// Ids of the lines whose flows are modeled in this period. Every other
    /// line carries exactly zero flow.
    pub fn modeled_lines(&self) -> Vec<usize> {
        let e = self.energization();
        self.case
            .network
            .lines
            .iter()
            .enumerate()
            .filter(|(k, l)| e.line_on[*k] && e.sourced[e.bus_pos[&l.from_bus]])
            .map(|(_, l)| l.id)
            .collect()
    }
}

/// `k V_side^2 + a Vi Vj cos(θi - θj) + b Vi Vj sin(θi - θj)`
#[derive(Debug, Clone, Copy)]
struct Term {
    k: f64,
    from_side: bool,
    a: f64,
    b: f64,
}

impl Term {
    /// Value, gradient and Hessian with respect to `(Vi, Vj, θi, θj)`.
    fn eval(&self, vi: f64, vj: f64, ti: f64, tj: f64) -> (f64, [f64; 4], [[f64; 4]; 4]) {
        let (s, c) = (ti - tj).sin_cos();
        let vv = vi * vj;
        let cs = self.a * c + self.b * s;
        let dc = -self.a * s + self.b * c;
        let vs = if self.from_side { vi } else { vj };
        let val = self.k * vs * vs + vv * cs;
        let mut grad = [vj * cs, vi * cs, vv * dc, -vv * dc];
        let mut h = [[0.0; 4]; 4];
        if self.from_side {
            grad[0] += 2.0 * self.k * vi;
            h[0][0] = 2.0 * self.k;
        } else {
            grad[1] += 2.0 * self.k * vj;
            h[1][1] = 2.0 * self.k;
        }
        h[0][1] = cs;
        h[1][0] = cs;
        h[0][2] = vj * dc;
        h[2][0] = h[0][2];
        h[0][3] = -vj * dc;
        h[3][0] = h[0][3];
        h[1][2] = vi * dc;
        h[2][1] = h[1][2];
        h[1][3] = -vi * dc;
        h[3][1] = h[1][3];
        h[2][2] = -vv * cs;
        h[3][3] = -vv * cs;
        h[2][3] = vv * cs;
        h[3][2] = vv * cs;
        (val, grad, h)
    }
}

/// Directed flow terms of a branch: `[p_fr, q_fr, p_to, q_to]`.
fn branch_terms(l: &Line) -> [Term; 4] {
    let tm2 = l.t_m * l.t_m;
    let (g, b, tr, ti) = (l.g, l.b, l.t_r, l.t_i);
    [
        Term { k: (g + l.g_fr) / tm2, from_side: true, a: (-g * tr + b * ti) / tm2, b: (-b * tr - g * ti) / tm2 },
        Term { k: -(b + l.b_fr) / tm2, from_side: true, a: (b * tr + g * ti) / tm2, b: (-g * tr + b * ti) / tm2 },
        Term { k: (g + l.g_to) / tm2, from_side: false, a: (-g * tr - b * ti) / tm2, b: (b * tr - g * ti) / tm2 },
        Term { k: -(b + l.b_to) / tm2, from_side: false, a: (b * tr - g * ti) / tm2, b: (g * tr + b * ti) / tm2 },
    ]
}

/// Flows `[p_fr, q_fr, p_to, q_to]` for given terminal voltages.
fn branch_flows(l: &Line, vi: f64, vj: f64, ti: f64, tj: f64) -> [f64; 4] {
    branch_terms(l).map(|t| t.eval(vi, vj, ti, tj).0)
}

#[derive(Debug, Clone)]
struct LineModel {
    pos: usize,
    i: usize,
    j: usize,
    terms: [Term; 4],
    thermal: f64,
}

#[derive(Debug, Clone)]
enum Ineq {
    /// `coefs . x - rhs <= 0`
    Linear { coefs: Vec<(usize, f64)>, rhs: f64 },
    /// `p^2 + q^2 - T^2 <= 0` on one end of a modeled line.
    Thermal { line: usize, to_side: bool },
}

/// The reduced nonlinear program of one period.
struct PeriodModel<'a> {
    net: &'a Network,
    n: usize,
    vm: Vec<Option<usize>>,
    va: Vec<Option<usize>>,
    vt: Vec<Option<usize>>,
    pg: Vec<Option<usize>>,
    qg: Vec<Option<usize>>,
    pg_const: Vec<f64>,
    qg_const: Vec<f64>,
    xd: Vec<Option<usize>>,
    lines: Vec<LineModel>,
    bal_buses: Vec<usize>,
    bal_row: Vec<Option<usize>>,
    ineqs: Vec<Ineq>,
    cost: DVector<f64>,
    x0: DVector<f64>,
}

impl<'a> PeriodModel<'a> {
    fn new(p: &'a AcOpfProblem, e: &Energization) -> Self {
        let net = &p.case.network;
        let nb = net.buses.len();
        let mut n = 0;
        let mut next = || {
            n += 1;
            n - 1
        };
        let mut vm = vec![None; nb];
        let mut va = vec![None; nb];
        let mut vt = vec![None; nb];
        for b in 0..nb {
            if e.sourced[b] {
                vm[b] = Some(next());
                vt[b] = Some(next());
                if !e.angle_ref[b] {
                    va[b] = Some(next());
                }
            }
        }
        let ng = net.generators.len();
        let (mut pg, mut qg) = (vec![None; ng], vec![None; ng]);
        let (mut pg_const, mut qg_const) = (vec![0.0; ng], vec![0.0; ng]);
        for (k, g) in net.generators.iter().enumerate() {
            if e.gen_on[k] {
                if g.p_max - g.p_min > 1e-12 {
                    pg[k] = Some(next());
                } else {
                    pg_const[k] = g.p_min;
                }
                if g.q_max - g.q_min > 1e-12 {
                    qg[k] = Some(next());
                } else {
                    qg_const[k] = g.q_min;
                }
            }
        }
        let xd: Vec<Option<usize>> = net
            .demands
            .iter()
            .enumerate()
            .map(|(k, d)| if e.demand_on[k] && e.sourced[e.bus_pos[&d.bus]] { Some(next()) } else { None })
            .collect();

        let lines: Vec<LineModel> = net
            .lines
            .iter()
            .enumerate()
            .filter(|(k, l)| e.line_on[*k] && e.sourced[e.bus_pos[&l.from_bus]])
            .map(|(k, l)| LineModel {
                pos: k,
                i: e.bus_pos[&l.from_bus],
                j: e.bus_pos[&l.to_bus],
                terms: branch_terms(l),
                thermal: l.thermal_limit,
            })
            .collect();

        let bal_buses: Vec<usize> = (0..nb).filter(|&b| e.sourced[b]).collect();
        let mut bal_row = vec![None; nb];
        for (r, &b) in bal_buses.iter().enumerate() {
            bal_row[b] = Some(r);
        }

        let mut ineqs = Vec::new();
        let lin = |coefs: Vec<(usize, f64)>, rhs: f64| Ineq::Linear { coefs, rhs };
        for (b, bus) in net.buses.iter().enumerate() {
            if let (Some(v), Some(t)) = (vm[b], vt[b]) {
                ineqs.push(lin(vec![(v, -1.0), (t, -1.0)], -bus.v_min));
                ineqs.push(lin(vec![(v, 1.0)], bus.v_max));
                ineqs.push(lin(vec![(v, -1.0)], 0.0));
                ineqs.push(lin(vec![(t, -1.0)], 0.0));
            }
        }
        for (k, g) in net.generators.iter().enumerate() {
            if let Some(c) = pg[k] {
                ineqs.push(lin(vec![(c, 1.0)], g.p_max));
                ineqs.push(lin(vec![(c, -1.0)], -g.p_min));
            }
            if let Some(c) = qg[k] {
                ineqs.push(lin(vec![(c, 1.0)], g.q_max));
                ineqs.push(lin(vec![(c, -1.0)], -g.q_min));
            }
        }
        for c in xd.iter().flatten() {
            ineqs.push(lin(vec![(*c, 1.0)], 1.0));
            ineqs.push(lin(vec![(*c, -1.0)], 0.0));
        }
        for (m, lm) in lines.iter().enumerate() {
            let l = &net.lines[lm.pos];
            let mut diff = Vec::new();
            if let Some(c) = va[lm.i] {
                diff.push((c, 1.0));
            }
            if let Some(c) = va[lm.j] {
                diff.push((c, -1.0));
            }
            if !diff.is_empty() {
                ineqs.push(lin(diff.clone(), l.angle_diff_max));
                ineqs.push(lin(diff.iter().map(|&(c, v)| (c, -v)).collect(), -l.angle_diff_min));
            }
            if lm.thermal.is_finite() {
                ineqs.push(Ineq::Thermal { line: m, to_side: false });
                ineqs.push(Ineq::Thermal { line: m, to_side: true });
            }
        }

        let mut cost = DVector::zeros(n);
        for (k, d) in net.demands.iter().enumerate() {
            if let Some(c) = xd[k] {
                cost[c] = -d.p;
            }
        }
        for c in vt.iter().flatten() {
            cost[*c] = p.penalty;
        }

        let mut x0 = DVector::zeros(n);
        for (b, bus) in net.buses.iter().enumerate() {
            if let Some(c) = vm[b] {
                x0[c] = 1.0f64.clamp(bus.v_min, bus.v_max);
            }
        }
        for (k, g) in net.generators.iter().enumerate() {
            if let Some(c) = pg[k] {
                x0[c] = 0.5 * (g.p_min + g.p_max);
            }
            if let Some(c) = qg[k] {
                x0[c] = 0.5 * (g.q_min + g.q_max);
            }
        }
        for c in xd.iter().flatten() {
            x0[*c] = 0.5;
        }

        PeriodModel { net, n, vm, va, vt, pg, qg, pg_const, qg_const, xd, lines, bal_buses, bal_row, ineqs, cost, x0 }
    }

    fn local(&self, lm: &LineModel) -> [Option<usize>; 4] {
        [self.vm[lm.i], self.vm[lm.j], self.va[lm.i], self.va[lm.j]]
    }

    fn local_values(&self, lm: &LineModel, x: &DVector<f64>) -> [f64; 4] {
        self.local(lm).map(|c| c.map_or(0.0, |c| x[c]))
    }

    fn flow(&self, lm: &LineModel, which: usize, x: &DVector<f64>) -> (f64, [f64; 4], [[f64; 4]; 4]) {
        let [vi, vj, ti, tj] = self.local_values(lm, x);
        lm.terms[which].eval(vi, vj, ti, tj)
    }

    fn add_hess(&self, h: &mut DMatrix<f64>, idx: &[Option<usize>; 4], hl: &[[f64; 4]; 4], w: f64) {
        for a in 0..4 {
            if let Some(ca) = idx[a] {
                for b in 0..4 {
                    if let Some(cb) = idx[b] {
                        h[(ca, cb)] += w * hl[a][b];
                    }
                }
            }
        }
    }

    fn values(&self, x: &DVector<f64>) -> Vec<f64> {
        x.iter().copied().collect()
    }
}

impl ipm::Nlp for PeriodModel<'_> {
    fn n(&self) -> usize {
        self.n
    }

    fn n_eq(&self) -> usize {
        2 * self.bal_buses.len()
    }

    fn n_in(&self) -> usize {
        self.ineqs.len()
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.cost.dot(x), self.cost.clone())
    }

    fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.n_eq();
        let mut g = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, self.n);
        for (k, gen) in self.net.generators.iter().enumerate() {
            let Some(r) = self.bal_row[self.bus_index(gen.bus)] else { continue };
            match self.pg[k] {
                Some(c) => {
                    g[2 * r] += x[c];
                    j[(2 * r, c)] += 1.0;
                }
                None => g[2 * r] += self.pg_const[k],
            }
            match self.qg[k] {
                Some(c) => {
                    g[2 * r + 1] += x[c];
                    j[(2 * r + 1, c)] += 1.0;
                }
                None => g[2 * r + 1] += self.qg_const[k],
            }
        }
        for (k, d) in self.net.demands.iter().enumerate() {
            if let Some(c) = self.xd[k] {
                let r = self.bal_row[self.bus_index(d.bus)].expect("served demand sits on a modeled bus");
                g[2 * r] -= d.p * x[c];
                g[2 * r + 1] -= d.q * x[c];
                j[(2 * r, c)] -= d.p;
                j[(2 * r + 1, c)] -= d.q;
            }
        }
        for lm in &self.lines {
            let idx = self.local(lm);
            for which in 0..4 {
                let bus = if which < 2 { lm.i } else { lm.j };
                let r = 2 * self.bal_row[bus].unwrap() + which % 2;
                let (val, grad, _) = self.flow(lm, which, x);
                g[r] -= val;
                for a in 0..4 {
                    if let Some(c) = idx[a] {
                        j[(r, c)] -= grad[a];
                    }
                }
            }
        }
        (g, j)
    }

    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.ineqs.len();
        let mut h = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, self.n);
        for (r, q) in self.ineqs.iter().enumerate() {
            match q {
                Ineq::Linear { coefs, rhs } => {
                    h[r] = coefs.iter().map(|&(c, v)| v * x[c]).sum::<f64>() - rhs;
                    for &(c, v) in coefs {
                        j[(r, c)] += v;
                    }
                }
                Ineq::Thermal { line, to_side } => {
                    let lm = &self.lines[*line];
                    let base = if *to_side { 2 } else { 0 };
                    let (p, gp, _) = self.flow(lm, base, x);
                    let (qv, gq, _) = self.flow(lm, base + 1, x);
                    h[r] = p * p + qv * qv - lm.thermal * lm.thermal;
                    let idx = self.local(lm);
                    for a in 0..4 {
                        if let Some(c) = idx[a] {
                            j[(r, c)] += 2.0 * (p * gp[a] + qv * gq[a]);
                        }
                    }
                }
            }
        }
        (h, j)
    }

    fn hessian(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for lm in &self.lines {
            let idx = self.local(lm);
            for which in 0..4 {
                let bus = if which < 2 { lm.i } else { lm.j };
                let r = 2 * self.bal_row[bus].unwrap() + which % 2;
                let (_, _, hl) = self.flow(lm, which, x);
                self.add_hess(&mut h, &idx, &hl, -lam[r]);
            }
        }
        for (r, q) in self.ineqs.iter().enumerate() {
            if let Ineq::Thermal { line, to_side } = q {
                if mu[r] == 0.0 {
                    continue;
                }
                let lm = &self.lines[*line];
                let idx = self.local(lm);
                let base = if *to_side { 2 } else { 0 };
                let (p, gp, hp) = self.flow(lm, base, x);
                let (qv, gq, hq) = self.flow(lm, base + 1, x);
                let mut hl = [[0.0; 4]; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        hl[a][b] = 2.0 * (gp[a] * gp[b] + p * hp[a][b] + gq[a] * gq[b] + qv * hq[a][b]);
                    }
                }
                self.add_hess(&mut h, &idx, &hl, mu[r]);
            }
        }
        h
    }
}

impl PeriodModel<'_> {
    fn bus_index(&self, id: usize) -> usize {
        self.net.buses.iter().position(|b| b.id == id).expect("bus ids are validated")
    }
}

/// Solves one period. A non-converged solve returns the best iterate inside
/// [`CoreError::NotConverged`].
pub fn solve_ac_opf(p: &AcOpfProblem, tol: f64) -> Result<AcState, CoreError> {
    solve_ac_opf_with(p, &RipOptions { tol, penalty: p.penalty, ..Default::default() })
}

fn solve_ac_opf_with(p: &AcOpfProblem, opts: &RipOptions) -> Result<AcState, CoreError> {
    let e = p.energization();
    let model = PeriodModel::new(p, &e);
    let ipm_opts = ipm::IpmOptions { feas_tol: (tol_inner(opts.tol)), max_iter: opts.max_iter, ..Default::default() };
    let res = if model.n > 0 {
        ipm::solve(&model, model.x0.clone(), &ipm_opts)
    } else {
        ipm::IpmResult { x: DVector::zeros(0), converged: true, iterations: 0 }
    };
    let state = assemble_state(p, &e, &model, &model.values(&res.x), res.iterations);
    let report = residuals(&state, p);
    if res.converged && report.max() <= opts.tol {
        Ok(state)
    } else {
        Err(CoreError::NotConverged { period: p.period, residual: report.max(), state: Box::new(state) })
    }
}

fn tol_inner(tol: f64) -> f64 {
    (tol * 1e-3).max(1e-12)
}

fn assemble_state(p: &AcOpfProblem, e: &Energization, m: &PeriodModel<'_>, x: &[f64], iterations: usize) -> AcState {
    let net = &p.case.network;
    let val = |c: Option<usize>| c.map_or(0.0, |c| x[c]);
    let v: Vec<f64> = (0..net.buses.len()).map(|b| val(m.vm[b])).collect();
    let theta: Vec<f64> = (0..net.buses.len()).map(|b| val(m.va[b])).collect();
    let v_violation: Vec<f64> = net
        .buses
        .iter()
        .enumerate()
        .map(|(b, bus)| match m.vt[b] {
            Some(c) => x[c].max(0.0),
            // an energized bus without a source sits at zero voltage
            None if e.bus_on[b] => bus.v_min,
            None => 0.0,
        })
        .collect();
    let nl = net.lines.len();
    let (mut p_fr, mut q_fr, mut p_to, mut q_to) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; nl], vec![0.0; nl]);
    for lm in &m.lines {
        let f = branch_flows(&net.lines[lm.pos], v[lm.i], v[lm.j], theta[lm.i], theta[lm.j]);
        p_fr[lm.pos] = f[0];
        q_fr[lm.pos] = f[1];
        p_to[lm.pos] = f[2];
        q_to[lm.pos] = f[3];
    }
    let pg: Vec<f64> = (0..net.generators.len()).map(|k| m.pg[k].map_or(m.pg_const[k], |c| x[c])).collect();
    let qg: Vec<f64> = (0..net.generators.len()).map(|k| m.qg[k].map_or(m.qg_const[k], |c| x[c])).collect();
    let xs: Vec<f64> = (0..net.demands.len()).map(|k| val(m.xd[k]).clamp(0.0, 1.0)).collect();
    let served_pu: f64 = net.demands.iter().zip(&xs).map(|(d, x)| d.p * x).sum();
    let served_mwh = served_pu * net.base_mva * p.step_hours;
    let penalty = p.penalty * v_violation.iter().sum::<f64>() * p.step_hours;
    AcState {
        period: p.period,
        v,
        theta,
        v_violation,
        p_fr,
        q_fr,
        p_to,
        q_to,
        pg,
        qg,
        x: xs,
        objective: served_mwh - penalty,
        served_mwh,
        iterations,
    }
}

/// Largest constraint violation of a state, per family, recomputed from
/// the voltages and injections it carries.
pub fn residuals(state: &AcState, p: &AcOpfProblem) -> ResidualReport {
    let net = &p.case.network;
    let (nb, nl, ng, nd) = (net.buses.len(), net.lines.len(), net.generators.len(), net.demands.len());
    let dims_ok = [state.v.len(), state.theta.len(), state.v_violation.len()].iter().all(|&n| n == nb)
        && [state.p_fr.len(), state.q_fr.len(), state.p_to.len(), state.q_to.len()].iter().all(|&n| n == nl)
        && state.pg.len() == ng
        && state.qg.len() == ng
        && state.x.len() == nd;
    if !dims_ok {
        return ResidualReport::mismatched();
    }
    let e = p.energization();
    let mut r = ResidualReport::default();
    let mut bal_p = vec![0.0; nb];
    let mut bal_q = vec![0.0; nb];

    for (k, l) in net.lines.iter().enumerate() {
        let (i, j) = (e.bus_pos[&l.from_bus], e.bus_pos[&l.to_bus]);
        let stored = [state.p_fr[k], state.q_fr[k], state.p_to[k], state.q_to[k]];
        let expected = if e.line_on[k] {
            branch_flows(l, state.v[i], state.v[j], state.theta[i], state.theta[j])
        } else {
            [0.0; 4]
        };
        for (s, x) in stored.iter().zip(&expected) {
            r.flow = r.flow.max((s - x).abs());
        }
        bal_p[i] -= stored[0];
        bal_q[i] -= stored[1];
        bal_p[j] -= stored[2];
        bal_q[j] -= stored[3];
        if e.line_on[k] {
            for (p, q) in [(stored[0], stored[1]), (stored[2], stored[3])] {
                r.thermal = r.thermal.max((p.hypot(q) - l.thermal_limit).max(0.0));
            }
            let d = state.theta[i] - state.theta[j];
            r.angle = r.angle.max((d - l.angle_diff_max).max(l.angle_diff_min - d).max(0.0));
        }
    }
    for (k, g) in net.generators.iter().enumerate() {
        let b = e.bus_pos[&g.bus];
        bal_p[b] += state.pg[k];
        bal_q[b] += state.qg[k];
        let viol = if e.gen_on[k] {
            (state.pg[k] - g.p_max)
                .max(g.p_min - state.pg[k])
                .max(state.qg[k] - g.q_max)
                .max(g.q_min - state.qg[k])
                .max(0.0)
        } else {
            state.pg[k].abs().max(state.qg[k].abs())
        };
        r.bounds = r.bounds.max(viol);
    }
    for (k, d) in net.demands.iter().enumerate() {
        let b = e.bus_pos[&d.bus];
        bal_p[b] -= state.x[k] * d.p;
        bal_q[b] -= state.x[k] * d.q;
        let viol = if e.demand_on[k] { (state.x[k] - 1.0).max(-state.x[k]).max(0.0) } else { state.x[k].abs() };
        r.bounds = r.bounds.max(viol);
    }
    for (b, bus) in net.buses.iter().enumerate() {
        r.balance_p = r.balance_p.max(bal_p[b].abs());
        r.balance_q = r.balance_q.max(bal_q[b].abs());
        let z = if e.bus_on[b] { 1.0 } else { 0.0 };
        let (v, vt) = (state.v[b], state.v_violation[b]);
        let viol = (v - z * bus.v_max).max(z * (bus.v_min - vt) - v).max(-vt).max(-v).max(0.0);
        r.voltage = r.voltage.max(viol);
    }
    r
}

/// Replays a plan on the actual operating conditions with default options.
pub fn simulate_plan(actual: &EffectiveCase, plan: &RestorationPlan) -> Result<RipResult, CoreError> {
    simulate_plan_with(actual, plan, &RipOptions::default())
}

pub fn simulate_plan_with(actual: &EffectiveCase, plan: &RestorationPlan, opts: &RipOptions) -> Result<RipResult, CoreError> {
    check_plan(actual, plan)?;
    let n_t = plan.n_periods();
    let outcomes: Vec<(AcState, ResidualReport, bool)> = (0..n_t)
        .into_par_iter()
        .map(|t| {
            let mut p = build_rip_step(actual, plan, t)?;
            p.penalty = opts.penalty;
            let (state, ok) = match solve_ac_opf_with(&p, opts) {
                Ok(s) => (s, true),
                Err(CoreError::NotConverged { state, .. }) => {
                    log::warn!("period {t} of {} did not converge", actual.label());
                    (*state, false)
                }
                Err(e) => return Err(e),
            };
            let report = residuals(&state, &p);
            Ok((state, report, ok))
        })
        .collect::<Result<_, CoreError>>()?;

    let net = &actual.network;
    let dt = plan.step_hours;
    let total_demand_mwh = net.total_demand_mw() * dt * n_t as f64;
    let served_fraction: Vec<Vec<f64>> =
        (0..net.demands.len()).map(|d| outcomes.iter().map(|(s, _, _)| s.x[d]).collect()).collect();
    let served_mwh: f64 = net
        .demands
        .iter()
        .zip(&served_fraction)
        .map(|(d, xs)| xs.iter().sum::<f64>() * d.p * net.base_mva * dt)
        .sum();
    let (periods, rest): (Vec<AcState>, Vec<(ResidualReport, bool)>) = outcomes.into_iter().map(|(s, r, c)| (s, (r, c))).unzip();
    let (residuals, converged): (Vec<ResidualReport>, Vec<bool>) = rest.into_iter().unzip();
    Ok(RipResult {
        case_label: actual.label(),
        periods,
        residuals,
        converged,
        demand_ids: net.demands.iter().map(|d| d.id).collect(),
        served_fraction,
        served_mwh,
        ens_mwh: total_demand_mwh - served_mwh,
        total_demand_mwh,
        step_hours: dt,
    })
}
