//! Linear and mixed-integer programming for restoration planning.
//!
//! The crate provides a canonical problem representation
//! ([`LinearProgram`], [`MilpProblem`]), a built-in bounded revised simplex
//! solver and a best-bound branch-and-bound driver. External solvers can be
//! plugged in through the [`MilpBackend`] trait.
//!
//! ```
//! use restore_milp::{solve_lp, LinearProgram, Sense, Status};
//!
//! let mut lp = LinearProgram::new(Sense::Maximize);
//! let x = lp.add_col("x", 1.0, 0.0, 10.0);
//! lp.add_row("cap", f64::NEG_INFINITY, 3.0, &[(x, 1.0)]);
//! let sol = solve_lp(&lp, 1e-7).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.objective - 3.0).abs() < 1e-9);
//! ```

mod bnb;
mod lp_format;
mod lu;
mod presolve;
mod problem;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lp_format::write_lp;
pub use problem::{LinearProgram, MilpProblem, Sense};

use simplex::{LpStatus, Simplex};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("node budget exhausted after {nodes} nodes without a feasible solution")]
    NoIncumbent { nodes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    /// The node budget ran out; the best known solution is returned.
    IncumbentWithGap,
}

/// Global bound and incumbent after a given node, in the problem's own sense.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub node: u64,
    pub bound: f64,
    pub incumbent: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_iterations: u64,
    pub cuts_added: u64,
    pub cut_pool: u64,
    pub root_bound: f64,
    pub final_bound: f64,
    pub bound_history: Vec<BoundRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    /// Objective in the problem's own sense. NaN when infeasible.
    pub objective: f64,
    /// Column values; empty unless a feasible point is available.
    pub values: Vec<f64>,
    /// Relative gap between the objective and the best proven bound.
    pub gap: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpOptions {
    pub rel_gap: f64,
    pub node_budget: u64,
    pub feasibility_tol: f64,
    /// Probe binaries at the root and separate the implied-bound cuts found.
    pub probing: bool,
    /// Optional starting point. Only its integer entries are used; the
    /// continuous part is recomputed with those entries fixed.
    pub initial_solution: Option<Vec<f64>>,
    pub lp_iteration_limit: u64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            rel_gap: 1e-6,
            node_budget: 1_000_000,
            feasibility_tol: 1e-7,
            probing: true,
            initial_solution: None,
            lp_iteration_limit: 5_000_000,
        }
    }
}

impl MilpOptions {
    pub(crate) fn simplex_tol(&self) -> f64 {
        (self.feasibility_tol * 1e-2).clamp(1e-10, 1e-7)
    }
}

/// Solves a linear program with the built-in simplex method.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<Solution, SolveError> {
    lp.validate()?;
    let n = lp.num_cols();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    if lp.col_lower.iter().zip(&lp.col_upper).any(|(l, u)| l > u) {
        return Ok(Solution { status: Status::Infeasible, objective: f64::NAN, values: Vec::new(), gap: 0.0, stats: SolveStats::default() });
    }
    let inner_tol = (tol * 1e-2).clamp(1e-10, 1e-7);
    let mut spx = Simplex::new(n, &lp.min_costs(), &lp.col_lower, &lp.col_upper, &lp.row_lower, &lp.row_upper, &lp.triplets, inner_tol);
    spx.iteration_limit = 50 * (n as u64 + lp.num_rows() as u64) + 10_000;
    let status = spx.solve(f64::INFINITY)?;
    let stats = SolveStats { lp_iterations: spx.iterations, ..Default::default() };
    match status {
        LpStatus::Infeasible => Ok(Solution { status: Status::Infeasible, objective: f64::NAN, values: Vec::new(), gap: 0.0, stats }),
        LpStatus::Unbounded => Ok(Solution { status: Status::Unbounded, objective: sign * f64::NEG_INFINITY, values: Vec::new(), gap: 0.0, stats }),
        LpStatus::Cutoff => unreachable!("no cutoff was given"),
        LpStatus::Optimal => {
            let values: Vec<f64> = spx.values().iter().enumerate().map(|(j, v)| v.clamp(lp.col_lower[j], lp.col_upper[j])).collect();
            let viol = lp.max_violation(&values);
            if viol > tol {
                return Err(SolveError::Numerical(format!("LP solution violates constraints by {viol:e}")));
            }
            let objective = lp.objective_value(&values);
            Ok(Solution { status: Status::Optimal, objective, values, gap: 0.0, stats })
        }
    }
}

/// Solves a mixed-binary program by branch and bound with default options.
pub fn solve_milp(p: &MilpProblem, rel_gap: f64, node_budget: u64) -> Result<Solution, SolveError> {
    let opts = MilpOptions { rel_gap, node_budget, ..Default::default() };
    solve_milp_with(p, &opts)
}

pub fn solve_milp_with(p: &MilpProblem, opts: &MilpOptions) -> Result<Solution, SolveError> {
    let sol = bnb::branch_and_bound(p, opts)?;
    if matches!(sol.status, Status::Optimal | Status::IncumbentWithGap) {
        let viol = p.lp.max_violation(&sol.values);
        let frac = p.max_integrality_violation(&sol.values);
        if viol > opts.feasibility_tol || frac > 0.0 {
            return Err(SolveError::Numerical(format!(
                "incumbent failed re-verification (violation {viol:e}, fractionality {frac:e})"
            )));
        }
    }
    Ok(sol)
}

/// A mixed-integer solver that can stand in for the built-in one.
pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, p: &MilpProblem, opts: &MilpOptions) -> Result<Solution, SolveError>;
}

/// The simplex and branch-and-bound implementation in this crate.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinBackend;

impl MilpBackend for BuiltinBackend {
    fn name(&self) -> &str {
        "builtin"
    }

    fn solve(&self, p: &MilpProblem, opts: &MilpOptions) -> Result<Solution, SolveError> {
        solve_milp_with(p, opts)
    }
}
