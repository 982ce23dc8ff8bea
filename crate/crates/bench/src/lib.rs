//! Shared fixtures for the solver benchmarks.

use hjbshoot::{make_problem, Grid, ProblemId, Result, SolverConfig, TimeField};

/// Default-resolution time field of a reference problem.
pub fn time_field(id: ProblemId) -> Result<TimeField> {
    let b = make_problem(id)?;
    let problem = b.problem.as_ref().clone().with_control_count(b.control_count);
    let grid = Grid::anisotropic(b.domain(), &b.grid_counts)?;
    Ok(hjbshoot::solve_value(&problem, &grid, &SolverConfig::default())?.to_time_field())
}

/// Published initialization of a reference problem as a packed unknown vector.
pub fn published_guess(id: ProblemId) -> Result<Vec<f64>> {
    let b = make_problem(id)?;
    let init = &b.initializations[0];
    let layout = b.shooting.layout();
    let costate: Vec<f64> = init.costate.iter().map(|p| p * b.costate_scale).collect();
    let multipliers = init.multiplier.map(|m| vec![m; layout.multipliers]).unwrap_or_default();
    layout.pack(init.final_time, &costate, init.junctions, &multipliers)
}
