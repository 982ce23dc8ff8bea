//! Semi-Lagrangian HJB value functions used to initialize indirect shooting
//! for optimal control problems.
//!
//! The value function on a grid gives a global but coarse picture: costate
//! candidates from maximal-decrease directions, a final-time estimate and the
//! arc structure of a feedback trajectory. Shooting then refines one extremal
//! per candidate to high accuracy.

pub mod benchmarks;
pub mod costate;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod pipeline;
pub mod problem;
pub mod shooting;

pub use benchmarks::{make_problem, make_problem_named, BenchmarkBundle, ProblemId, ReferenceSolution};
pub use costate::{CostateGuess, StructureEstimate, Trajectory};
pub use error::{Error, Result};
pub use grid::Grid;
pub use hjb::{solve_value, NodeUpdate, SolverConfig, TimeField, ValueField};
pub use pipeline::{run_basin, run_pipeline, BasinConfig, BasinReport, OutcomeClass, PipelineConfig, PipelineReport};
pub use problem::{
    BoxDomain, ControlProblem, ControlSet, ControlSystem, HamiltonianForm, StateConstraint, TargetKind, TargetSet,
};
pub use shooting::{
    solve_shooting, ArcMode, FinalTime, IntegratorConfig, IntegratorKind, ShootingSolution, ShootingSpec,
    TerminalCondition,
};
