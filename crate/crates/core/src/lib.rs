//! Post-disaster restoration planning for distribution networks with
//! distributed energy resources.
//!
//! The crate is organised as a pipeline:
//!
//! * [`model`] holds the network data model, case parsing and validation.
//! * [`scenarios`] turns a base network into an effective case for one DER
//!   placement and operating mode.
//! * [`rop`] builds and solves the restoration ordering MILP.
//! * [`rip`] replays a repair order under AC power flow.
//! * [`metrics`] computes energy not served, reconnection times and the
//!   sensitivity matrix.
//! * [`sweep`] runs the whole placement and mode experiment.

pub mod metrics;
pub mod model;
pub mod rip;
pub mod rop;
pub mod scenarios;
pub mod sweep;

use thiserror::Error;

pub use model::{apply_damage, load_case, parse_case, Bus, Demand, Generator, GeneratorKind, Line, Network, TimeGrid, ValidationReport};
pub use restore_milp::{BuiltinBackend, MilpBackend, MilpOptions, SolveError, Status};
pub use rop::{build_rop, compute_big_m, solve_rop, ComponentId, DamageSets, RestorationPlan, RopInstance};
pub use scenarios::{apply_der_mode, DerMode, DerPlacement, EffectiveCase};

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid network: {0}")]
    Invalid(ValidationReport),
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("network already carries customer DERs")]
    AlreadyTransformed,
    #[error("horizon of {given} periods is too short; at least {needed} are needed")]
    Horizon { needed: usize, given: usize },
    #[error("{0} is infeasible")]
    Infeasible(String),
    #[error("restoration problem is unbounded")]
    Unbounded,
    #[error("plan does not match the case: {0}")]
    PlanMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("period {period} did not converge (max residual {residual:e})")]
    NotConverged { period: usize, residual: f64, state: Box<rip::AcState> },
    #[error("demand {0} is never reconnected")]
    NeverReconnected(usize),
    #[error("solver failure: {0}")]
    Solver(#[from] SolveError),
}
