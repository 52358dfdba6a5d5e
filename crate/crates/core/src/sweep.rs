//! The full placement x mode experiment: one restoration plan per case,
//! its metrics, and the replay of every plan under every actual mode.

use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{plan_ens, reconnection_times, sensitivity_matrix, EnsReport, ReconnectionReport, SensitivityMatrix};
use crate::model::{Network, TimeGrid};
use crate::rip::RipOptions;
use crate::rop::{build_rop_with, plan_order, solve_rop_with, DamageSets, RestorationPlan, RopConfig, RopOptions};
use crate::scenarios::{apply_der_mode, DerMode, DerPlacement};
use crate::{CoreError, Status};
use restore_milp::BuiltinBackend;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub rop: RopOptions,
    pub config: RopConfig,
    pub rip: RipOptions,
    /// Number of periods; defaults to one more than the damaged count
    /// divided by the per-period budget.
    pub horizon: Option<usize>,
    pub modes: Vec<DerMode>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            rop: RopOptions::default(),
            config: RopConfig::default(),
            rip: RipOptions::default(),
            horizon: None,
            modes: DerMode::ALL.to_vec(),
        }
    }
}

/// Outcome of one placement/mode case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub label: String,
    pub placement: String,
    pub mode: DerMode,
    pub status: Status,
    pub gap: f64,
    pub nodes: u64,
    pub seconds: f64,
    pub plan: RestorationPlan,
    pub order: Vec<String>,
    pub rop_ens: EnsReport,
    pub reconnection: ReconnectionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFailure {
    pub placement: String,
    pub mode: DerMode,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub cases: Vec<CaseOutcome>,
    /// Cases whose plan could not be produced, with the error message.
    pub failures: Vec<CaseFailure>,
    pub sensitivity: Vec<SensitivityMatrix>,
}

impl SweepResult {
    pub fn case(&self, placement: &str, mode: DerMode) -> Option<&CaseOutcome> {
        self.cases.iter().find(|c| c.placement == placement && c.mode == mode)
    }

    /// Matched-mode replay ENS of one case.
    pub fn rip_ens(&self, placement: &str, mode: DerMode) -> Option<f64> {
        self.sensitivity.iter().find(|s| s.placement == placement)?.ens(mode, mode)
    }

    pub fn all_converged(&self) -> bool {
        self.sensitivity.iter().flat_map(|s| s.cells.iter().flatten()).all(|c| c.converged)
    }

    /// No failed plan and no failed or non-converged replay.
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.all_converged()
    }
}

/// Plans one case. The network must already carry its damage flags.
pub fn plan_case(network: &Network, placement: &DerPlacement, mode: DerMode, opts: &SweepOptions) -> Result<CaseOutcome, CoreError> {
    let case = apply_der_mode(network, placement, mode)?;
    let damage = DamageSets::from_network(&case.network);
    let per = opts.config.repairs_per_period.max(1);
    let time = match opts.horizon {
        Some(n) => TimeGrid { n_periods: n, step_hours: 1.0 },
        None => TimeGrid::for_damage(damage.len(), per),
    };
    let inst = build_rop_with(&case, &damage, time, opts.config)?;
    let start = Instant::now();
    let sol = solve_rop_with(&inst, &opts.rop, &BuiltinBackend)?;
    let seconds = start.elapsed().as_secs_f64();
    info!("{}: {:?} after {} nodes in {seconds:.1} s", case.label(), sol.status, sol.stats.nodes);
    let rop_ens = plan_ens(&sol.plan, &case)?;
    let reconnection = reconnection_times(&sol.plan, &case)?;
    Ok(CaseOutcome {
        label: case.label(),
        placement: placement.name.to_string(),
        mode,
        status: sol.status,
        gap: sol.gap,
        nodes: sol.stats.nodes,
        seconds,
        order: plan_order(&sol.plan).iter().map(|c| c.to_string()).collect(),
        plan: sol.plan,
        rop_ens,
        reconnection,
    })
}

/// Plans every placement/mode case in parallel, then replays each
/// placement's plans under every actual mode. A case that fails is recorded
/// and left out of the replays; the rest of the sweep carries on.
pub fn run_sweep(network: &Network, placements: &[DerPlacement], opts: &SweepOptions) -> Result<SweepResult, CoreError> {
    let jobs: Vec<(&DerPlacement, DerMode)> = placements.iter().flat_map(|p| opts.modes.iter().map(move |&m| (p, m))).collect();
    let outcomes: Vec<Result<CaseOutcome, CoreError>> = jobs.par_iter().map(|&(p, m)| plan_case(network, p, m, opts)).collect();
    let mut cases = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for ((p, m), r) in jobs.iter().zip(outcomes) {
        match r {
            Ok(c) => cases.push(c),
            Err(e) => failures.push(CaseFailure { placement: p.name.to_string(), mode: *m, error: e.to_string() }),
        }
    }
    let mut sensitivity = Vec::with_capacity(placements.len());
    for p in placements {
        let name = p.name.to_string();
        let plans: Vec<(DerMode, RestorationPlan)> =
            cases.iter().filter(|c| c.placement == name).map(|c| (c.mode, c.plan.clone())).collect();
        sensitivity.push(sensitivity_matrix(network, p, &plans, &opts.modes, &opts.rip)?);
    }
    Ok(SweepResult { cases, failures, sensitivity })
}
