//! Optimal control problem definition and the Hamiltonian machinery shared by
//! the grid solver and the shooting method.
//!
//! A problem is the tuple (f, ℓ, U, 𝒞, g, Ω): dynamics `ẏ = f(y, u)`, running
//! cost `ℓ(y, u) ≥ 0`, admissible controls, target set, state constraints
//! `g(y) ≤ 0` and the bounded numerical box on which the value function is
//! computed. Cost is `∫ ℓ` up to the first hitting time of the target.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Norm below which a costate block is treated as zero.
pub const DEGENERATE_COSTATE_TOL: f64 = 1e-12;

/// Vector field and running cost of a controlled system.
///
/// Only `velocity` and `running_cost` are required. The remaining hooks let a
/// problem provide closed forms for quantities that otherwise fall back to
/// finite differences.
pub trait ControlSystem: Send + Sync {
    fn velocity(&self, y: &[f64], u: &[f64], out: &mut [f64]);

    fn running_cost(&self, y: &[f64], u: &[f64]) -> f64;

    /// Writes `-H_y(y, p, u, p0)` into `out` and returns `true`, or returns
    /// `false` when no closed form is available.
    fn costate_rate(&self, _y: &[f64], _p: &[f64], _u: &[f64], _p0: f64, _out: &mut [f64]) -> bool {
        false
    }

    /// Closed-form time derivative of the switching function along extremals.
    fn switching_rate(&self, _y: &[f64], _p: &[f64]) -> Option<f64> {
        None
    }

    /// Closed-form singular control (unclamped), solving `ψ̈ = 0`.
    fn singular_control(&self, _y: &[f64], _p: &[f64]) -> Option<Result<f64>> {
        None
    }

    /// Values of functions whose zero sets are surfaces where the vector field
    /// loses smoothness. Event-detecting integrators split steps there.
    fn kink_functions(&self, _y: &[f64], _out: &mut Vec<f64>) {}
}

/// Admissible control set.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// Finite list of control vectors.
    Discrete(Vec<Vec<f64>>),
    /// Scalar interval `[lower, upper]`, discretized into `count` equispaced values
    /// including both bounds.
    Interval { lower: f64, upper: f64, count: usize },
    /// Scalar angle in `[0, 2π)`, discretized as `j·2π/count`.
    Angle { count: usize },
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Discrete(list) => list.first().map_or(1, Vec::len),
            _ => 1,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            ControlSet::Discrete(list) => list.len(),
            ControlSet::Interval { count, .. } | ControlSet::Angle { count } => *count,
        }
    }

    /// Same set with a different discretization count.
    pub fn with_count(&self, n: usize) -> ControlSet {
        match self {
            ControlSet::Discrete(list) => ControlSet::Discrete(list.clone()),
            ControlSet::Interval { lower, upper, .. } => {
                ControlSet::Interval { lower: *lower, upper: *upper, count: n }
            }
            ControlSet::Angle { .. } => ControlSet::Angle { count: n },
        }
    }

    pub fn discretize(&self) -> Vec<Vec<f64>> {
        match self {
            ControlSet::Discrete(list) => list.clone(),
            ControlSet::Interval { lower, upper, count } => {
                if *count <= 1 {
                    return vec![vec![0.5 * (lower + upper)]];
                }
                let step = (upper - lower) / (*count - 1) as f64;
                (0..*count)
                    .map(|j| {
                        let u = if j + 1 == *count { *upper } else { lower + j as f64 * step };
                        vec![u]
                    })
                    .collect()
            }
            ControlSet::Angle { count } => (0..*count).map(|j| vec![j as f64 * TAU / *count as f64]).collect(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        if u.len() != self.dim() || u.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match self {
            ControlSet::Discrete(list) => list.iter().any(|v| v.iter().zip(u).all(|(a, b)| (a - b).abs() <= 1e-12)),
            ControlSet::Interval { lower, upper, .. } => {
                let tol = 1e-12 * (1.0 + lower.abs().max(upper.abs()));
                u[0] >= lower - tol && u[0] <= upper + tol
            }
            // angles are taken modulo 2π
            ControlSet::Angle { .. } => true,
        }
    }

    /// Bounds of a scalar interval set.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            ControlSet::Interval { lower, upper, .. } => Some((*lower, *upper)),
            _ => None,
        }
    }
}

/// Maps an angle to `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidGrid(format!("degenerate box {lower:?} x {upper:?}")));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// Shape of a target set.
#[derive(Clone)]
pub enum TargetKind {
    Point(Vec<f64>),
    Box(BoxDomain),
    /// `{x : c(x) ≤ 0}`.
    HalfSpace(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Point(p) => f.debug_tuple("Point").field(p).finish(),
            TargetKind::Box(b) => f.debug_tuple("Box").field(b).finish(),
            TargetKind::HalfSpace(_) => f.write_str("HalfSpace(..)"),
        }
    }
}

/// Target with a membership tolerance η.
///
/// Distances are measured in a weighted Euclidean metric, `|(x - y) / w|`,
/// with unit weights by default. Membership is `distance ≤ η`.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub kind: TargetKind,
    pub tolerance: f64,
    pub weights: Option<Vec<f64>>,
}

impl TargetSet {
    pub fn point(y: Vec<f64>, tolerance: f64) -> Self {
        TargetSet { kind: TargetKind::Point(y), tolerance, weights: None }
    }

    pub fn half_space(c: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, tolerance: f64) -> Self {
        TargetSet { kind: TargetKind::HalfSpace(Arc::new(c)), tolerance, weights: None }
    }

    /// Same target measured in cell units of a grid with per-axis spacing
    /// `spacing`, with tolerance `cells` (one cell by default).
    pub fn with_metric(&self, spacing: &[f64], cells: f64) -> Self {
        let mut t = self.clone();
        if !matches!(t.kind, TargetKind::HalfSpace(_)) {
            t.weights = Some(spacing.to_vec());
            t.tolerance = cells;
        }
        t
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Point(y) => {
                x.iter().zip(y).enumerate().map(|(i, (a, b))| ((a - b) / self.weight(i)).powi(2)).sum::<f64>().sqrt()
            }
            TargetKind::Box(b) => x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let d = (b.lower[i] - v).max(v - b.upper[i]).max(0.0);
                    (d / self.weight(i)).powi(2)
                })
                .sum::<f64>()
                .sqrt(),
            TargetKind::HalfSpace(c) => c(x).max(0.0),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) <= self.tolerance
    }
}

/// State inequality constraint `g(y) ≤ 0` of order `q`.
pub trait StateConstraint: Send + Sync {
    fn value(&self, y: &[f64]) -> f64;

    fn gradient(&self, y: &[f64]) -> Vec<f64>;

    /// Order `q`: the first time derivative of `g` in which the control appears.
    fn order(&self) -> usize;

    /// `g^(k)(y, u)` for `1 ≤ k ≤ q`; only the `q`-th depends on `u`.
    fn derivative(&self, k: usize, y: &[f64], u: &[f64]) -> f64;

    /// Control solving `g^(q)(y, u) = 0` on a boundary arc together with the
    /// multiplier `μ` from `H_u = 0`. `branch` forces the side of
    /// [`StateConstraint::boundary_switch`] when the law is discontinuous.
    fn boundary_control(&self, y: &[f64], p: &[f64], branch: Option<bool>) -> Result<(Vec<f64>, f64)>;

    /// Function whose sign change marks a discontinuity of the boundary control.
    fn boundary_switch(&self, _y: &[f64], _p: &[f64]) -> Option<f64> {
        None
    }

    /// Reduced form of the Hamiltonian continuity condition at a junction,
    /// evaluated with the costate on the unconstrained side.
    fn junction_residual(&self, _y: &[f64], _p: &[f64]) -> Option<f64> {
        None
    }
}

/// How the Hamiltonian is minimized over `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianForm {
    /// `H = ℓ + ⟨p, f₀(y)⟩ + s(y)(p_a cos u + p_b sin u)` with `s > 0`.
    Direction { axes: (usize, usize) },
    /// `H` affine in a scalar control on an interval.
    Affine,
    /// Minimum over the discretized control set.
    Sampled,
}

/// Optimal control problem (f, ℓ, U, 𝒞, g, Ω).
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    state_dim: usize,
    system: Arc<dyn ControlSystem>,
    pub control_set: ControlSet,
    pub form: HamiltonianForm,
    pub target: TargetSet,
    pub constraints: Vec<Arc<dyn StateConstraint>>,
    pub domain: BoxDomain,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_set", &self.control_set)
            .field("form", &self.form)
            .field("target", &self.target)
            .field("constraints", &self.constraints.len())
            .field("domain", &self.domain)
            .finish()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        system: Arc<dyn ControlSystem>,
        control_set: ControlSet,
        target: TargetSet,
        domain: BoxDomain,
    ) -> Result<Self> {
        let state_dim = domain.dim();
        if let TargetKind::Point(y) = &target.kind {
            if y.len() != state_dim {
                return Err(Error::DimensionMismatch { expected: state_dim, found: y.len() });
            }
        }
        let problem = ControlProblem {
            name: name.into(),
            state_dim,
            system,
            control_set,
            form: HamiltonianForm::Sampled,
            target,
            constraints: Vec::new(),
            domain,
        };
        if !problem.target_meets_domain() {
            return Err(Error::Config(format!("target of `{}` does not meet the domain", problem.name)));
        }
        Ok(problem)
    }

    pub fn with_form(mut self, form: HamiltonianForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_constraint(mut self, c: Arc<dyn StateConstraint>) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, found: domain.dim() });
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_control_count(mut self, n: usize) -> Self {
        self.control_set = self.control_set.with_count(n);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    pub fn system(&self) -> &dyn ControlSystem {
        self.system.as_ref()
    }

    fn target_meets_domain(&self) -> bool {
        match &self.target.kind {
            TargetKind::Point(y) => self.domain.contains(y),
            TargetKind::Box(b) => {
                (0..self.state_dim).all(|i| b.lower[i] <= self.domain.upper[i] && b.upper[i] >= self.domain.lower[i])
            }
            TargetKind::HalfSpace(c) => {
                // probe a coarse lattice of the box
                let n = 5usize;
                let d = self.state_dim;
                let mut x = vec![0.0; d];
                (0..n.pow(d as u32)).any(|mut idx| {
                    for (i, xi) in x.iter_mut().enumerate() {
                        let j = idx % n;
                        idx /= n;
                        let lo = self.domain.lower[i];
                        *xi = lo + (self.domain.upper[i] - lo) * j as f64 / (n - 1) as f64;
                    }
                    c(&x) <= 0.0
                })
            }
        }
    }

    fn check_inputs(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        if !self.control_set.contains(u) {
            return Err(Error::ControlOutOfSet(u.to_vec()));
        }
        Ok(())
    }

    /// `f(x, u)`, validated.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        let mut out = vec![0.0; self.state_dim];
        self.system.velocity(x, u, &mut out);
        Ok(out)
    }

    /// `ℓ(x, u)`, validated.
    pub fn eval_running_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_inputs(x, u)?;
        Ok(self.system.running_cost(x, u))
    }

    /// Unchecked `f(x, u)` for inner loops.
    #[inline]
    pub fn velocity_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.system.velocity(x, u, out);
    }

    #[inline]
    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.system.running_cost(x, u)
    }

    /// `H = p₀ℓ + ⟨p, f⟩`, without input validation.
    pub fn hamiltonian_raw(&self, y: &[f64], pc: &[f64], u: &[f64], p0: f64) -> f64 {
        let mut f = vec![0.0; self.state_dim];
        self.system.velocity(y, u, &mut f);
        p0 * self.system.running_cost(y, u) + f.iter().zip(pc).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `H(y, p, u, p₀) = p₀ℓ(y, u) + ⟨p, f(y, u)⟩`.
    pub fn hamiltonian(&self, y: &[f64], pc: &[f64], u: &[f64], p0: f64) -> Result<f64> {
        self.check_inputs(y, u)?;
        if pc.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, found: pc.len() });
        }
        if p0 != 0.0 && p0 != 1.0 {
            return Err(Error::Config(format!("p0 must be 0 or 1, got {p0}")));
        }
        Ok(self.hamiltonian_raw(y, pc, u, p0))
    }

    /// `γ(y, p) = argmin_u H(y, p, u, 1)`.
    pub fn minimize_hamiltonian(&self, y: &[f64], pc: &[f64]) -> Result<Vec<f64>> {
        match self.form {
            HamiltonianForm::Direction { axes: (a, b) } => {
                let (pa, pb) = (pc[a], pc[b]);
                if pa.hypot(pb) < DEGENERATE_COSTATE_TOL {
                    return Err(Error::DegenerateMinimizer);
                }
                Ok(vec![normalize_angle((-pb).atan2(-pa))])
            }
            HamiltonianForm::Affine => {
                let (lo, up) = self.control_set.bounds().ok_or(Error::NotControlAffine)?;
                let psi = self.switching_function(y, pc)?;
                Ok(vec![if psi < 0.0 { up } else { lo }])
            }
            HamiltonianForm::Sampled => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for u in self.control_set.discretize() {
                    let h = self.hamiltonian_raw(y, pc, &u, 1.0);
                    if best.as_ref().is_none_or(|(bh, _)| h < *bh) {
                        best = Some((h, u));
                    }
                }
                best.map(|(_, u)| u).ok_or(Error::DegenerateMinimizer)
            }
        }
    }

    /// `ψ(y, p) = H_u`, for Hamiltonians affine in a scalar control.
    pub fn switching_function(&self, y: &[f64], pc: &[f64]) -> Result<f64> {
        if self.form != HamiltonianForm::Affine {
            return Err(Error::NotControlAffine);
        }
        let (lo, up) = self.control_set.bounds().ok_or(Error::NotControlAffine)?;
        let h_up = self.hamiltonian_raw(y, pc, &[up], 1.0);
        let h_lo = self.hamiltonian_raw(y, pc, &[lo], 1.0);
        Ok((h_up - h_lo) / (up - lo))
    }

    /// `-H_y(y, p, u, p₀)`: closed form when the system provides one, centred
    /// differences with step `1e-7·(1 + |y|)` otherwise.
    pub fn costate_rate(&self, y: &[f64], p: &[f64], u: &[f64], p0: f64, out: &mut [f64]) {
        if self.system.costate_rate(y, p, u, p0, out) {
            return;
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = 1e-7 * (1.0 + norm);
        let mut yp = y.to_vec();
        for i in 0..self.state_dim {
            yp[i] = y[i] + step;
            let hp = self.hamiltonian_raw(&yp, p, u, p0);
            yp[i] = y[i] - step;
            let hm = self.hamiltonian_raw(&yp, p, u, p0);
            yp[i] = y[i];
            out[i] = -(hp - hm) / (2.0 * step);
        }
    }
}
