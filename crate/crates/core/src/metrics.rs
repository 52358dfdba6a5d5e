//! Energy not served, group reconnection times and the assumption/actual
//! sensitivity grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Demand, Network, Topology};
use crate::rip::{simulate_plan_with, RipOptions};
use crate::rop::{ComponentId, RestorationPlan};
use crate::scenarios::{apply_der_mode, DerMode, DerPlacement, EffectiveCase};
use crate::CoreError;

/// A quantity split between demands with and without DERs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub der: f64,
    pub non_der: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsReport {
    pub total_ens: f64,
    pub ens_by_group: GroupSplit,
    pub ens_fraction: f64,
    pub total_demand_mwh: f64,
    pub demand_ids: Vec<usize>,
    pub per_demand_ens: Vec<f64>,
}

/// ENS in MWh from a served-fraction matrix `x[demand][period]`. Demand
/// powers are per-unit on `base_mva`.
pub fn energy_not_served(x: &[Vec<f64>], demands: &[Demand], base_mva: f64, step_hours: f64) -> Result<EnsReport, CoreError> {
    if x.len() != demands.len() {
        return Err(CoreError::DimensionMismatch(format!("{} rows for {} demands", x.len(), demands.len())));
    }
    let n_t = x.first().map_or(0, |r| r.len());
    if let Some(r) = x.iter().find(|r| r.len() != n_t) {
        return Err(CoreError::DimensionMismatch(format!("ragged matrix: rows of {} and {} periods", n_t, r.len())));
    }
    if let Some(v) = x.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CoreError::OutOfRange(format!("served fraction {v} outside [0, 1]")));
    }
    let per_demand_ens: Vec<f64> = demands
        .iter()
        .zip(x)
        .map(|(d, row)| row.iter().map(|xt| (1.0 - xt) * d.p * base_mva * step_hours).sum())
        .collect();
    let mut groups = GroupSplit::default();
    for (d, e) in demands.iter().zip(&per_demand_ens) {
        if d.has_der {
            groups.der += e;
        } else {
            groups.non_der += e;
        }
    }
    let total_ens: f64 = per_demand_ens.iter().sum();
    let total_demand_mwh: f64 = demands.iter().map(|d| d.p * base_mva * step_hours * n_t as f64).sum();
    let ens_fraction = if total_demand_mwh > 0.0 { total_ens / total_demand_mwh } else { 0.0 };
    Ok(EnsReport {
        total_ens,
        ens_by_group: groups,
        ens_fraction,
        total_demand_mwh,
        demand_ids: demands.iter().map(|d| d.id).collect(),
        per_demand_ens,
    })
}

/// ENS of a plan's own (DC) served fractions on the case it was built for,
/// grouped by the case's DER placement.
pub fn plan_ens(plan: &RestorationPlan, case: &EffectiveCase) -> Result<EnsReport, CoreError> {
    let net = &case.network;
    energy_not_served(&plan.served_fraction, &case.grouped_demands(), net.base_mva, plan.step_hours)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconnectionReport {
    pub demand_ids: Vec<usize>,
    pub buses: Vec<usize>,
    pub has_der: Vec<bool>,
    /// Period in which each demand first has an energized path to the
    /// substation.
    pub t_d: Vec<usize>,
    pub step_hours: f64,
    /// Group averages in hours; `None` for an empty group.
    pub t_der: Option<f64>,
    pub t_0: Option<f64>,
}

impl ReconnectionReport {
    pub fn hours(&self, k: usize) -> f64 {
        self.t_d[k] as f64 * self.step_hours
    }

    /// `t_der - t_0` in hours, when both groups are non-empty.
    pub fn der_delay(&self) -> Option<f64> {
        Some(self.t_der? - self.t_0?)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Reconnection period of every demand: the first period in which its bus
/// reaches the reference bus through in-service lines and buses, with the
/// demand itself in service.
pub fn reconnection_times(plan: &RestorationPlan, case: &EffectiveCase) -> Result<ReconnectionReport, CoreError> {
    let net = &case.network;
    let topo = Topology::new(net);
    let n_t = plan.n_periods();
    let mut t_d = vec![usize::MAX; net.demands.len()];
    for t in 0..n_t {
        let reached = energized_from_substation(net, &topo, &|c| plan.in_service(c, t));
        for (k, d) in net.demands.iter().enumerate() {
            if t_d[k] == usize::MAX && reached[topo.bus_pos[&d.bus]] && plan.in_service(ComponentId::Demand(d.id), t) {
                t_d[k] = t;
            }
        }
        if t_d.iter().all(|&v| v != usize::MAX) {
            break;
        }
    }
    if let Some(k) = t_d.iter().position(|&v| v == usize::MAX) {
        return Err(CoreError::NeverReconnected(net.demands[k].id));
    }
    let dt = plan.step_hours;
    let has_der: Vec<bool> = net.demands.iter().map(|d| case.der_demand_ids.contains(&d.id)).collect();
    let group = |der: bool| mean(t_d.iter().zip(&has_der).filter(|(_, &h)| h == der).map(|(&t, _)| t as f64 * dt));
    Ok(ReconnectionReport {
        demand_ids: net.demands.iter().map(|d| d.id).collect(),
        buses: net.demands.iter().map(|d| d.bus).collect(),
        t_der: group(true),
        t_0: group(false),
        has_der,
        t_d,
        step_hours: dt,
    })
}

/// Buses reachable from the reference bus over in-service components.
fn energized_from_substation(net: &Network, topo: &Topology, on: &dyn Fn(ComponentId) -> bool) -> Vec<bool> {
    let bus_on: Vec<bool> = net.buses.iter().map(|b| on(ComponentId::Bus(b.id))).collect();
    let mut seen = vec![false; net.buses.len()];
    if !bus_on[topo.reference] {
        return seen;
    }
    seen[topo.reference] = true;
    let mut stack = vec![topo.reference];
    while let Some(u) = stack.pop() {
        for &(l, v) in &topo.adj[u] {
            if !seen[v] && bus_on[v] && on(ComponentId::Line(net.lines[l].id)) {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub assumed: DerMode,
    pub actual: DerMode,
    pub ens_mwh: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// ENS of each plan (built under an assumed mode) replayed under each
/// actual mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub placement: String,
    pub assumed: Vec<DerMode>,
    pub actual: Vec<DerMode>,
    /// `cells[assumed][actual]`
    pub cells: Vec<Vec<SensitivityCell>>,
}

impl SensitivityMatrix {
    pub fn ens(&self, assumed: DerMode, actual: DerMode) -> Option<f64> {
        let a = self.assumed.iter().position(|&m| m == assumed)?;
        let b = self.actual.iter().position(|&m| m == actual)?;
        Some(self.cells[a][b].ens_mwh)
    }

    /// Largest minus smallest ENS in the column of one actual mode.
    pub fn column_spread(&self, actual: DerMode) -> Option<f64> {
        let b = self.actual.iter().position(|&m| m == actual)?;
        let col: Vec<f64> = self.cells.iter().map(|r| r[b].ens_mwh).collect();
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    /// Whether the plan built for the actual mode has the lowest ENS in
    /// that column, up to `tol` MWh.
    pub fn matched_is_min(&self, actual: DerMode, tol: f64) -> Option<bool> {
        let b = self.actual.iter().position(|&m| m == actual)?;
        let own = self.ens(actual, actual)?;
        Some(self.cells.iter().all(|r| own <= r[b].ens_mwh + tol))
    }
}

/// Replays each `(assumed mode, plan)` pair under every actual mode.
pub fn sensitivity_matrix(
    network: &Network,
    placement: &DerPlacement,
    plans: &[(DerMode, RestorationPlan)],
    actual_modes: &[DerMode],
    opts: &RipOptions,
) -> Result<SensitivityMatrix, CoreError> {
    let cases: Vec<EffectiveCase> = actual_modes.iter().map(|&m| apply_der_mode(network, placement, m)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..plans.len()).flat_map(|a| (0..cases.len()).map(move |b| (a, b))).collect();
    let results: Vec<SensitivityCell> = jobs
        .par_iter()
        .map(|&(a, b)| {
            let (assumed, plan) = &plans[a];
            let actual = actual_modes[b];
            match simulate_plan_with(&cases[b], plan, opts) {
                Ok(r) => SensitivityCell { assumed: *assumed, actual, ens_mwh: r.ens_mwh, converged: r.all_converged(), error: None },
                Err(e) => SensitivityCell { assumed: *assumed, actual, ens_mwh: f64::NAN, converged: false, error: Some(e.to_string()) },
            }
        })
        .collect();
    let mut it = results.into_iter();
    let cells = (0..plans.len()).map(|_| it.by_ref().take(cases.len()).collect()).collect();
    Ok(SensitivityMatrix {
        placement: placement.name.to_string(),
        assumed: plans.iter().map(|(m, _)| *m).collect(),
        actual: actual_modes.to_vec(),
        cells,
    })
}
