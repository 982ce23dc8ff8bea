//! The four reference problems with their default discretizations and
//! published reference solutions.

pub mod systems;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::problem::{BoxDomain, ControlProblem, ControlSet, HamiltonianForm, TargetSet};
use crate::shooting::{ArcMode, FinalTime, IntegratorConfig, IntegratorKind, ShootingSpec, TerminalCondition};
use systems::{Goddard, PlanarDoubleIntegrator, VanDerPol, VelocityBound, ZermeloArc, GODDARD_B, GODDARD_TMAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemId {
    P1,
    P2,
    P3,
    P4,
}

impl ProblemId {
    pub const ALL: [ProblemId; 4] = [ProblemId::P1, ProblemId::P2, ProblemId::P3, ProblemId::P4];
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemId::P1 => "P1",
            ProblemId::P2 => "P2",
            ProblemId::P3 => "P3",
            ProblemId::P4 => "P4",
        };
        f.write_str(s)
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P1" => Ok(ProblemId::P1),
            "P2" => Ok(ProblemId::P2),
            "P3" => Ok(ProblemId::P3),
            "P4" => Ok(ProblemId::P4),
            _ => Err(Error::UnknownId(s.to_string())),
        }
    }
}

/// Published solution or initialization, used for regression and for
/// classifying shooting outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub label: &'static str,
    pub initial_state: &'static [f64],
    pub final_time: f64,
    pub costate: &'static [f64],
    pub junctions: &'static [f64],
    pub multiplier: Option<f64>,
}

/// Row of the grid study for the value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStudyRow {
    pub counts: &'static [usize],
    pub control_count: usize,
    pub final_time: f64,
    pub costate: &'static [f64],
}

#[derive(Clone)]
pub struct BenchmarkBundle {
    pub id: ProblemId,
    pub problem: Arc<ControlProblem>,
    pub shooting: ShootingSpec,
    pub grid_counts: Vec<usize>,
    pub control_count: usize,
    pub initial_state: Vec<f64>,
    /// Converged shooting solutions.
    pub references: Vec<ReferenceSolution>,
    /// Initializations obtained from the value function.
    pub initializations: Vec<ReferenceSolution>,
    pub grid_study: Vec<GridStudyRow>,
    /// Factor from the recorded costates to this formulation's costates.
    /// The fuel cost here is the mass consumed, `b·T_max` times the thrust
    /// integral the recorded P3 values are normalized by.
    pub costate_scale: f64,
}

impl BenchmarkBundle {
    pub fn domain(&self) -> &BoxDomain {
        &self.problem.domain
    }

    /// Same bundle started from another point.
    pub fn with_initial_state(mut self, x: Vec<f64>) -> Result<Self> {
        let d = self.problem.state_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x.len() });
        }
        self.shooting.initial_state = x.clone();
        self.initial_state = x;
        Ok(self)
    }

    /// Reference solutions recorded for the current initial state.
    pub fn references_here(&self) -> Vec<&ReferenceSolution> {
        self.references.iter().filter(|r| r.initial_state == self.initial_state.as_slice()).collect()
    }
}

// Reference values, transcribed verbatim from the published tables.

const P1_X: &[f64] = &[-2.5, 0.0];
const P1_X_KINK: &[f64] = &[-1.835, 0.0];
const P2_X: &[f64] = &[1.0, -0.8];
const P2_X_A: &[f64] = &[1.5, -0.67];
const P2_X_B: &[f64] = &[1.0, -0.57];
const P3_X: &[f64] = &[1.0, 0.0, 1.0];
const P4_X: &[f64] = &[-3.0, -4.0, 0.0, 0.0];

fn plain(label: &'static str, x: &'static [f64], tf: f64, p: &'static [f64]) -> ReferenceSolution {
    ReferenceSolution { label, initial_state: x, final_time: tf, costate: p, junctions: &[], multiplier: None }
}

fn p1_references() -> Vec<ReferenceSolution> {
    vec![
        // P1 PMP table
        plain("global", P1_X, 4.868, &[-5.552e-2, -9.985e-1]),
        // local solutions of the basin study
        plain("straight", P1_X, 5.5, &[-1.0, 0.0]),
        plain("other", P1_X, 6.06, &[]),
        // two global solutions table
        plain("cap", P1_X_KINK, 4.8246, &[-7.67e-2, -9.97e-1]),
        plain("straight", P1_X_KINK, 4.835, &[-1.0, -6.2137e-16]),
    ]
}

fn p1_initializations() -> Vec<ReferenceSolution> {
    vec![
        plain("global", P1_X, 4.89, &[-0.05, -1.0]),
        plain("cap", P1_X_KINK, 4.84, &[-0.05, -1.0]),
        plain("straight", P1_X_KINK, 4.84, &[-0.99, 0.0]),
    ]
}

fn p1_grid_study() -> Vec<GridStudyRow> {
    vec![
        GridStudyRow { counts: &[25, 25], control_count: 16, final_time: 4.895, costate: &[-0.049, -1.000] },
        GridStudyRow { counts: &[50, 50], control_count: 16, final_time: 4.895, costate: &[-0.048, -1.000] },
        GridStudyRow { counts: &[200, 200], control_count: 32, final_time: 4.878, costate: &[-0.051, -1.000] },
    ]
}

fn p2_references() -> Vec<ReferenceSolution> {
    vec![
        plain("global", P2_X, 3.837, &[1.249, -3.787]),
        plain("global", P2_X_A, 2.9594, &[1.487, 2.309e-3]),
        plain("global", P2_X_B, 2.1351, &[1.715, 1.111e-2]),
    ]
}

fn p2_initializations() -> Vec<ReferenceSolution> {
    vec![
        plain("global", P2_X, 4.2, &[1.2, -4.2]),
        plain("global", P2_X_A, 3.0, &[1.62, -0.87]),
        plain("global", P2_X_B, 2.2, &[1.96, -0.10]),
    ]
}

/// Builds the bundle for `id` with its default parameters.
pub fn make_problem(id: ProblemId) -> Result<BenchmarkBundle> {
    match id {
        ProblemId::P1 => p1(),
        ProblemId::P2 => p2(),
        ProblemId::P3 => p3(),
        ProblemId::P4 => p4(),
    }
}

/// [`make_problem`] from a textual id such as `"P3"`.
pub fn make_problem_named(id: &str) -> Result<BenchmarkBundle> {
    make_problem(id.parse()?)
}

fn events() -> IntegratorConfig {
    IntegratorConfig::with_kind(IntegratorKind::Rk4Events)
}

fn p1() -> Result<BenchmarkBundle> {
    let domain = BoxDomain::new(vec![-6.0, -6.0], vec![6.0, 6.0])?;
    let problem = ControlProblem::new(
        "P1",
        Arc::new(ZermeloArc),
        ControlSet::Angle { count: 16 },
        TargetSet::point(vec![3.0, 0.0], 0.5),
        domain,
    )?
    .with_form(HamiltonianForm::Direction { axes: (0, 1) });
    let problem = Arc::new(problem);
    let shooting = ShootingSpec::new(
        problem.clone(),
        P1_X.to_vec(),
        vec![ArcMode::Regular],
        vec![TerminalCondition::Fixed(3.0), TerminalCondition::Fixed(0.0)],
    )?
    // the curvature of c above the band needs finer steps to hold H = 0 to 1e-6
    .with_integrator(IntegratorConfig { steps: 400, ..events() });
    Ok(BenchmarkBundle {
        id: ProblemId::P1,
        problem,
        shooting,
        grid_counts: vec![25, 25],
        control_count: 16,
        initial_state: P1_X.to_vec(),
        references: p1_references(),
        initializations: p1_initializations(),
        grid_study: p1_grid_study(),
        costate_scale: 1.0,
    })
}

fn p2() -> Result<BenchmarkBundle> {
    let domain = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0])?;
    let problem = ControlProblem::new(
        "P2",
        Arc::new(VanDerPol),
        ControlSet::Interval { lower: -1.0, upper: 1.0, count: 2 },
        TargetSet::point(vec![0.0, 0.0], 4.0 / 199.0),
        domain,
    )?
    .with_form(HamiltonianForm::Affine);
    let problem = Arc::new(problem);
    let shooting = ShootingSpec::new(
        problem.clone(),
        P2_X.to_vec(),
        vec![ArcMode::Regular],
        vec![TerminalCondition::Fixed(0.0), TerminalCondition::Fixed(0.0)],
    )?
    .with_integrator(events());
    Ok(BenchmarkBundle {
        id: ProblemId::P2,
        problem,
        shooting,
        grid_counts: vec![200, 200],
        control_count: 2,
        initial_state: P2_X.to_vec(),
        references: p2_references(),
        initializations: p2_initializations(),
        grid_study: Vec::new(),
        costate_scale: 1.0,
    })
}

/// Altitude to reach in P3.
pub const P3_TARGET_ALTITUDE: f64 = 1.01;

fn p3() -> Result<BenchmarkBundle> {
    let domain = BoxDomain::new(vec![0.998, -0.02, 0.1], vec![1.012, 0.18, 1.8])?;
    let problem = ControlProblem::new(
        "P3",
        Arc::new(Goddard),
        ControlSet::Interval { lower: 0.0, upper: 1.0, count: 20 },
        TargetSet::half_space(|y| P3_TARGET_ALTITUDE - y[0], 0.0),
        domain,
    )?
    .with_form(HamiltonianForm::Affine);
    let problem = Arc::new(problem);
    let shooting = ShootingSpec::new(
        problem.clone(),
        P3_X.to_vec(),
        vec![ArcMode::BangUpper, ArcMode::Singular, ArcMode::BangLower],
        vec![TerminalCondition::Fixed(P3_TARGET_ALTITUDE), TerminalCondition::Free, TerminalCondition::Free],
    )?
    .with_integrator(events());
    Ok(BenchmarkBundle {
        id: ProblemId::P3,
        problem,
        shooting,
        grid_counts: vec![20, 20, 20],
        control_count: 20,
        initial_state: P3_X.to_vec(),
        references: vec![ReferenceSolution {
            label: "global",
            initial_state: P3_X,
            final_time: 0.1741,
            costate: &[-7.275, -0.2773, 0.04382],
            junctions: &[0.02351, 0.06685],
            multiplier: None,
        }],
        initializations: vec![ReferenceSolution {
            label: "global",
            initial_state: P3_X,
            final_time: 0.17,
            costate: &[-7.79, -0.31, 0.04],
            junctions: &[0.02, 0.06],
            multiplier: None,
        }],
        grid_study: Vec::new(),
        costate_scale: GODDARD_B * GODDARD_TMAX,
    })
}

fn p4() -> Result<BenchmarkBundle> {
    let domain = BoxDomain::new(vec![-5.0, -5.0, -2.0, -2.0], vec![5.0, 5.0, 4.0, 4.0])?;
    let problem = ControlProblem::new(
        "P4",
        Arc::new(PlanarDoubleIntegrator),
        ControlSet::Angle { count: 16 },
        TargetSet::point(vec![3.0, 4.0, 0.0, 0.0], 0.5),
        domain,
    )?
    .with_form(HamiltonianForm::Direction { axes: (2, 3) })
    .with_constraint(Arc::new(VelocityBound { axis: 2, bound: 1.0, other: 3 }));
    let problem = Arc::new(problem);
    let shooting = ShootingSpec::new(
        problem.clone(),
        P4_X.to_vec(),
        vec![ArcMode::Regular, ArcMode::Constrained(0), ArcMode::Regular],
        vec![
            TerminalCondition::Fixed(3.0),
            TerminalCondition::Fixed(4.0),
            TerminalCondition::Fixed(0.0),
            TerminalCondition::Fixed(0.0),
        ],
    )?
    .with_integrator(events())
    .with_final_time(FinalTime::Free);
    Ok(BenchmarkBundle {
        id: ProblemId::P4,
        problem,
        shooting,
        grid_counts: vec![20, 20, 20, 20],
        control_count: 16,
        initial_state: P4_X.to_vec(),
        references: vec![ReferenceSolution {
            label: "global",
            initial_state: P4_X,
            final_time: 7.0356,
            costate: &[-0.867, -0.047, -0.986, -0.167],
            junctions: &[1.137, 5.899],
            // multiplier of the jump at entry, quoted in the text
            multiplier: Some(4.1294),
        }],
        initializations: vec![ReferenceSolution {
            label: "global",
            initial_state: P4_X,
            final_time: 7.5,
            costate: &[-0.51, -0.24, -0.89, -0.61],
            junctions: &[1.35, 5.6],
            multiplier: Some(0.1),
        }],
        grid_study: Vec::new(),
        costate_scale: 1.0,
    })
}
