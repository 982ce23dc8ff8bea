//! State-costate dynamics along extremals and their integration.
//!
//! The control is recovered from `(y, p)` according to the arc mode: minimizer
//! of the Hamiltonian on regular arcs, a fixed bound on bang arcs, the
//! solution of `ψ̈ = 0` on singular arcs and the boundary law of a state
//! constraint on constrained arcs.

use std::fmt;

use crate::error::{Error, Result};
use crate::problem::{ControlProblem, HamiltonianForm};

/// Control regime on an arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcMode {
    Regular,
    BangUpper,
    BangLower,
    Singular,
    /// Boundary arc of the constraint with this index.
    Constrained(usize),
}

impl fmt::Display for ArcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArcMode::Regular => f.write_str("regular"),
            ArcMode::BangUpper => f.write_str("bang_upper"),
            ArcMode::BangLower => f.write_str("bang_lower"),
            ArcMode::Singular => f.write_str("singular"),
            ArcMode::Constrained(j) => write!(f, "constrained_{j}"),
        }
    }
}

/// Point of the extremal flow: state, costate and accumulated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalState {
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub cost: f64,
}

impl ExtremalState {
    pub fn new(y: Vec<f64>, p: Vec<f64>) -> Self {
        ExtremalState { y, p, cost: 0.0 }
    }

    fn axpy(&self, h: f64, k: &ExtremalState) -> ExtremalState {
        ExtremalState {
            y: self.y.iter().zip(&k.y).map(|(a, b)| a + h * b).collect(),
            p: self.p.iter().zip(&k.p).map(|(a, b)| a + h * b).collect(),
            cost: self.cost + h * k.cost,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(&self.p).all(|v| v.is_finite()) && self.cost.is_finite()
    }
}

/// Discrete control choice frozen over an integration step: `Some(true)`
/// when the relevant switching function is positive.
pub type Branch = Option<bool>;

/// Control and constraint multiplier `μ` at `(y, p)` in `mode`.
pub fn control_law(
    problem: &ControlProblem,
    mode: ArcMode,
    branch: Branch,
    y: &[f64],
    p: &[f64],
) -> Result<(Vec<f64>, f64)> {
    match mode {
        ArcMode::Regular => {
            if problem.form == HamiltonianForm::Affine {
                let (lo, up) = problem.control_set.bounds().ok_or(Error::NotControlAffine)?;
                let positive = match branch {
                    Some(b) => b,
                    None => problem.switching_function(y, p)? >= 0.0,
                };
                Ok((vec![if positive { lo } else { up }], 0.0))
            } else {
                Ok((problem.minimize_hamiltonian(y, p)?, 0.0))
            }
        }
        ArcMode::BangUpper | ArcMode::BangLower => {
            let (lo, up) = problem.control_set.bounds().ok_or(Error::NotControlAffine)?;
            Ok((vec![if mode == ArcMode::BangUpper { up } else { lo }], 0.0))
        }
        ArcMode::Singular => Ok((vec![singular_control(problem, y, p)?], 0.0)),
        ArcMode::Constrained(j) => {
            let c = problem.constraints.get(j).ok_or_else(|| Error::Config(format!("no constraint with index {j}")))?;
            c.boundary_control(y, p, branch)
        }
    }
}

/// Branch to freeze over a step starting at `(y, p)`, or `None` when the
/// control law is continuous in `mode`.
pub fn branch_at(problem: &ControlProblem, mode: ArcMode, y: &[f64], p: &[f64]) -> Result<Branch> {
    Ok(match mode {
        ArcMode::Regular if problem.form == HamiltonianForm::Affine => Some(problem.switching_function(y, p)? >= 0.0),
        ArcMode::Constrained(j) => problem.constraints[j].boundary_switch(y, p).map(|s| s > 0.0),
        _ => None,
    })
}

/// Values whose sign changes trigger an event in `mode`. Returns how many
/// leading entries are switching functions; the rest are kink functions.
pub fn event_functions(
    problem: &ControlProblem,
    mode: ArcMode,
    s: &ExtremalState,
    out: &mut Vec<f64>,
) -> Result<usize> {
    out.clear();
    match mode {
        ArcMode::Regular if problem.form == HamiltonianForm::Affine => {
            out.push(problem.switching_function(&s.y, &s.p)?)
        }
        ArcMode::Constrained(j) => {
            if let Some(v) = problem.constraints[j].boundary_switch(&s.y, &s.p) {
                out.push(v);
            }
        }
        _ => {}
    }
    let switching = out.len();
    problem.system().kink_functions(&s.y, out);
    Ok(switching)
}

/// Time derivative of `(y, p, cost)` in `mode`, with the control law
/// evaluated at the state itself.
pub fn extremal_rhs(problem: &ControlProblem, mode: ArcMode, s: &ExtremalState) -> Result<ExtremalState> {
    rhs_with_branch(problem, mode, None, s)
}

pub(crate) fn rhs_with_branch(
    problem: &ControlProblem,
    mode: ArcMode,
    branch: Branch,
    s: &ExtremalState,
) -> Result<ExtremalState> {
    let d = problem.state_dim();
    let (u, mu) = control_law(problem, mode, branch, &s.y, &s.p)?;
    let mut y_dot = vec![0.0; d];
    problem.velocity_into(&s.y, &u, &mut y_dot);
    let mut p_dot = vec![0.0; d];
    problem.costate_rate(&s.y, &s.p, &u, 1.0, &mut p_dot);
    if let ArcMode::Constrained(j) = mode {
        if mu != 0.0 {
            // −μ ∂g^(q)/∂y by centred differences
            let c = &problem.constraints[j];
            let q = c.order();
            let norm = s.y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let step = 1e-7 * (1.0 + norm);
            let mut yp = s.y.clone();
            for i in 0..d {
                yp[i] = s.y[i] + step;
                let gp = c.derivative(q, &yp, &u);
                yp[i] = s.y[i] - step;
                let gm = c.derivative(q, &yp, &u);
                yp[i] = s.y[i];
                p_dot[i] -= mu * (gp - gm) / (2.0 * step);
            }
        }
    }
    Ok(ExtremalState { y: y_dot, p: p_dot, cost: problem.cost(&s.y, &u) })
}

/// `p⁺ = p⁻ − π·g_y`.
pub fn apply_costate_jump(pc: &[f64], multiplier: f64, gy: &[f64]) -> Vec<f64> {
    pc.iter().zip(gy).map(|(p, g)| p - multiplier * g).collect()
}

/// `ψ̇` along the extremal flow: closed form when available, otherwise a
/// centred difference of `ψ` along `(ẏ, ṗ)`.
pub fn switching_rate(problem: &ControlProblem, y: &[f64], p: &[f64]) -> Result<f64> {
    if let Some(v) = problem.system().switching_rate(y, p) {
        return Ok(v);
    }
    let (lo, _) = problem.control_set.bounds().ok_or(Error::NotControlAffine)?;
    flow_derivative(problem, y, p, lo, |y, p| problem.switching_function(y, p))
}

fn flow_derivative(
    problem: &ControlProblem,
    y: &[f64],
    p: &[f64],
    u: f64,
    phi: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    let d = problem.state_dim();
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d];
    problem.velocity_into(y, &[u], &mut f);
    problem.costate_rate(y, p, &[u], 1.0, &mut g);
    let eps = 1e-6;
    let shift = |sign: f64| -> (Vec<f64>, Vec<f64>) {
        (
            y.iter().zip(&f).map(|(a, b)| a + sign * eps * b).collect(),
            p.iter().zip(&g).map(|(a, b)| a + sign * eps * b).collect(),
        )
    };
    let (yp, pp) = shift(1.0);
    let (ym, pm) = shift(-1.0);
    Ok((phi(&yp, &pp)? - phi(&ym, &pm)?) / (2.0 * eps))
}

/// Control on a singular arc, solving `ψ̈(y, p, u) = 0`, clamped to `U`.
pub fn singular_control(problem: &ControlProblem, y: &[f64], p: &[f64]) -> Result<f64> {
    let (lo, up) = problem.control_set.bounds().ok_or(Error::NotControlAffine)?;
    let raw = match problem.system().singular_control(y, p) {
        Some(r) => r?,
        None => {
            let rate = |y: &[f64], p: &[f64]| switching_rate(problem, y, p);
            let a = flow_derivative(problem, y, p, lo, rate)?;
            let b = (flow_derivative(problem, y, p, up, rate)? - a) / (up - lo);
            if b.abs() < 1e-10 {
                return Err(Error::SingularUndefined);
            }
            lo - a / b
        }
    };
    if !raw.is_finite() {
        return Err(Error::SingularUndefined);
    }
    Ok(raw.clamp(lo, up))
}

/// Classical fourth-order Runge-Kutta step with a frozen branch.
pub fn rk4_step(
    problem: &ControlProblem,
    mode: ArcMode,
    branch: Branch,
    s: &ExtremalState,
    h: f64,
) -> Result<ExtremalState> {
    let k1 = rhs_with_branch(problem, mode, branch, s)?;
    let k2 = rhs_with_branch(problem, mode, branch, &s.axpy(0.5 * h, &k1))?;
    let k3 = rhs_with_branch(problem, mode, branch, &s.axpy(0.5 * h, &k2))?;
    let k4 = rhs_with_branch(problem, mode, branch, &s.axpy(h, &k3))?;
    let combine = |a: &[f64], b1: &[f64], b2: &[f64], b3: &[f64], b4: &[f64]| -> Vec<f64> {
        (0..a.len()).map(|i| a[i] + h / 6.0 * (b1[i] + 2.0 * b2[i] + 2.0 * b3[i] + b4[i])).collect()
    };
    let next = ExtremalState {
        y: combine(&s.y, &k1.y, &k2.y, &k3.y, &k4.y),
        p: combine(&s.p, &k1.p, &k2.p, &k3.p, &k4.p),
        cost: s.cost + h / 6.0 * (k1.cost + 2.0 * k2.cost + 2.0 * k3.cost + k4.cost),
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(next)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

fn flatten(s: &ExtremalState) -> Vec<f64> {
    let mut v = s.y.clone();
    v.extend_from_slice(&s.p);
    v.push(s.cost);
    v
}

fn unflatten(v: &[f64], d: usize) -> ExtremalState {
    ExtremalState { y: v[..d].to_vec(), p: v[d..2 * d].to_vec(), cost: v[2 * d] }
}

/// One Dormand-Prince step; returns the 5th-order solution and the scaled
/// error estimate.
pub(crate) fn dopri_step(
    problem: &ControlProblem,
    mode: ArcMode,
    s: &ExtremalState,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(ExtremalState, f64)> {
    let d = problem.state_dim();
    let x0 = flatten(s);
    let n = x0.len();
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
    for stage in 0..7 {
        let mut x = x0.clone();
        for (j, k) in ks.iter().enumerate() {
            let a = DP_A[stage][j];
            if a != 0.0 {
                for i in 0..n {
                    x[i] += h * a * k[i];
                }
            }
        }
        let _ = DP_C[stage];
        let k = rhs_with_branch(problem, mode, None, &unflatten(&x, d))?;
        ks.push(flatten(&k));
    }
    let mut next = x0.clone();
    let mut err = 0.0f64;
    for i in 0..n {
        let mut acc = 0.0;
        let mut e = 0.0;
        for j in 0..7 {
            acc += DP_B[j] * ks[j][i];
            e += DP_E[j] * ks[j][i];
        }
        next[i] += h * acc;
        let scale = atol + rtol * x0[i].abs().max(next[i].abs());
        err = err.max((h * e / scale).abs());
    }
    let state = unflatten(&next, d);
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok((state, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{BoxDomain, ControlSet, ControlSystem, TargetSet};
    use std::sync::Arc;

    struct Still;

    impl ControlSystem for Still {
        fn velocity(&self, _y: &[f64], _u: &[f64], out: &mut [f64]) {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
            2.0
        }
    }

    #[test]
    fn zero_dynamics_give_constant_costate() {
        let p = ControlProblem::new(
            "still",
            Arc::new(Still),
            ControlSet::Discrete(vec![vec![0.0]]),
            TargetSet::point(vec![0.0, 0.0], 0.1),
            BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let s = ExtremalState::new(vec![0.3, -0.2], vec![1.5, -0.7]);
        let rate = extremal_rhs(&p, ArcMode::Regular, &s).unwrap();
        assert!(rate.p.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(rate.cost, 2.0);
    }

    #[test]
    fn costate_jump_is_linear_in_multiplier() {
        let p = [0.5, -1.0, 0.2, 0.1];
        let gy = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(apply_costate_jump(&p, 0.0, &gy), p.to_vec());
        let one = apply_costate_jump(&p, 0.7, &gy);
        let two = apply_costate_jump(&p, 1.4, &gy);
        for i in 0..4 {
            assert!(((two[i] - p[i]) - 2.0 * (one[i] - p[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn rk4_is_exact_on_constant_rates() {
        let p = ControlProblem::new(
            "still",
            Arc::new(Still),
            ControlSet::Discrete(vec![vec![0.0]]),
            TargetSet::point(vec![0.0], 0.1),
            BoxDomain::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let s = ExtremalState::new(vec![0.3], vec![1.0]);
        let next = rk4_step(&p, ArcMode::Regular, None, &s, 0.25).unwrap();
        assert_eq!(next.y, vec![0.3]);
        assert!((next.cost - 0.5).abs() < 1e-15);
    }
}
