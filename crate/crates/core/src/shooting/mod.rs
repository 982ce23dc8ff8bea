//! Multiple-arc indirect shooting.
//!
//! The unknowns are laid out as `[t_f (if free), p(0), junction times,
//! jump multipliers]`; the residual as terminal conditions, `H(t_f)` when the
//! final time is free, then the junction conditions in arc order.

pub mod extremal;
pub mod hybrid;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

pub use extremal::{
    apply_costate_jump, control_law, extremal_rhs, singular_control, switching_rate, ArcMode, Branch, ExtremalState,
};
pub use hybrid::{HybridConfig, HybridOutcome};

use crate::error::{Error, Result};
use crate::hjb::fmt_float;
use crate::problem::{ControlProblem, HamiltonianForm};
use extremal::{branch_at, dopri_step, event_functions, rk4_step};

/// Condition imposed on one state component at `t_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalCondition {
    Fixed(f64),
    /// Free component: transversality `p_i(t_f) = 0`.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalTime {
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    /// Classical RK4 on a fixed grid per arc; the control law is evaluated
    /// at every stage.
    FixedRk4,
    /// RK4 with the control branch frozen per step and sign changes of the
    /// switching and kink functions located by bisection.
    Rk4Events,
    /// Dormand-Prince 5(4) with error control.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    /// Steps per arc for the RK4 variants; initial step count for `Adaptive`.
    pub steps: usize,
    /// Relative and absolute tolerance of `Adaptive`.
    pub tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { kind: IntegratorKind::FixedRk4, steps: 100, tolerance: 1e-10 }
    }
}

impl IntegratorConfig {
    pub fn with_kind(kind: IntegratorKind) -> Self {
        IntegratorConfig { kind, ..Default::default() }
    }
}

/// Bisection tolerance on event times.
pub const EVENT_TOLERANCE: f64 = 1e-12;
const MAX_EVENTS_PER_STEP: usize = 16;

/// Conditions closing a singular arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularJunction {
    /// `ψ = ψ̇ = 0` at entry.
    EntryRate,
    /// `ψ = 0` at entry and at exit.
    EntryExit,
}

/// Junction of a constrained arc carrying the tangency condition and the
/// costate jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tangency {
    Entry,
    Exit,
}

#[derive(Clone)]
pub struct ShootingSpec {
    pub problem: Arc<ControlProblem>,
    pub initial_state: Vec<f64>,
    pub arcs: Vec<ArcMode>,
    pub terminal: Vec<TerminalCondition>,
    pub final_time: FinalTime,
    pub integrator: IntegratorConfig,
    pub singular_junction: SingularJunction,
    pub tangency: Tangency,
    pub solver: HybridConfig,
}

/// Positions of the unknown blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownLayout {
    pub free_time: bool,
    pub state_dim: usize,
    pub junctions: usize,
    pub multipliers: usize,
}

impl UnknownLayout {
    pub fn len(&self) -> usize {
        self.free_time as usize + self.state_dim + self.junctions + self.multipliers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn costate_start(&self) -> usize {
        self.free_time as usize
    }

    pub fn junction_start(&self) -> usize {
        self.costate_start() + self.state_dim
    }

    pub fn multiplier_start(&self) -> usize {
        self.junction_start() + self.junctions
    }

    /// Packs the blocks into a flat unknown vector.
    pub fn pack(&self, tf: f64, costate: &[f64], junctions: &[f64], multipliers: &[f64]) -> Result<Vec<f64>> {
        if costate.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, found: costate.len() });
        }
        if junctions.len() != self.junctions {
            return Err(Error::DimensionMismatch { expected: self.junctions, found: junctions.len() });
        }
        if multipliers.len() != self.multipliers {
            return Err(Error::DimensionMismatch { expected: self.multipliers, found: multipliers.len() });
        }
        let mut z = Vec::with_capacity(self.len());
        if self.free_time {
            z.push(tf);
        }
        z.extend_from_slice(costate);
        z.extend_from_slice(junctions);
        z.extend_from_slice(multipliers);
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Sign change of the switching function on a regular arc.
    Switching,
    /// Sign change of the boundary-control switch on a constrained arc.
    BoundarySwitch,
    /// Crossing of a nonsmooth point of the dynamics.
    Kink,
    Junction {
        from: ArcMode,
        to: ArcMode,
    },
    CostateJump {
        multiplier: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub arc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalSample {
    pub t: f64,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    /// Switching function; NaN when the Hamiltonian is not control-affine.
    pub psi: f64,
    pub mode: ArcMode,
}

/// States on both sides of a junction.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionState {
    pub t: f64,
    pub before: ExtremalState,
    pub after: ExtremalState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalRun {
    pub final_time: f64,
    pub terminal: ExtremalState,
    pub junctions: Vec<JunctionState>,
    pub events: Vec<Event>,
    pub samples: Vec<ExtremalSample>,
}

struct Recorder {
    collect: bool,
    events: Vec<Event>,
    samples: Vec<ExtremalSample>,
}

impl ShootingSpec {
    /// Spec with free final time, 100 fixed RK4 steps per arc, entry
    /// junctions for singular arcs and tangency at entry.
    pub fn new(
        problem: Arc<ControlProblem>,
        initial_state: Vec<f64>,
        arcs: Vec<ArcMode>,
        terminal: Vec<TerminalCondition>,
    ) -> Result<Self> {
        let spec = ShootingSpec {
            problem,
            initial_state,
            arcs,
            terminal,
            final_time: FinalTime::Free,
            integrator: IntegratorConfig::default(),
            singular_junction: SingularJunction::EntryRate,
            tangency: Tangency::Entry,
            solver: HybridConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_integrator(mut self, integrator: IntegratorConfig) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_final_time(mut self, final_time: FinalTime) -> Self {
        self.final_time = final_time;
        self
    }

    pub fn with_singular_junction(mut self, j: SingularJunction) -> Self {
        self.singular_junction = j;
        self
    }

    pub fn with_tangency(mut self, t: Tangency) -> Self {
        self.tangency = t;
        self
    }

    pub fn with_solver(mut self, solver: HybridConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.problem.state_dim()
    }

    pub fn layout(&self) -> UnknownLayout {
        UnknownLayout {
            free_time: self.final_time == FinalTime::Free,
            state_dim: self.state_dim(),
            junctions: self.arcs.len().saturating_sub(1),
            multipliers: self.arcs.iter().filter(|a| matches!(a, ArcMode::Constrained(_))).count(),
        }
    }

    /// Checks dimensions and that residual and unknown counts agree.
    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        if self.initial_state.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.initial_state.len() });
        }
        if self.terminal.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.terminal.len() });
        }
        if self.arcs.is_empty() {
            return Err(Error::Config("at least one arc is required".into()));
        }
        if self.integrator.steps == 0 {
            return Err(Error::Config("integrator needs at least one step per arc".into()));
        }
        let affine = self.problem.form == HamiltonianForm::Affine;
        for a in &self.arcs {
            match a {
                ArcMode::Singular | ArcMode::BangUpper | ArcMode::BangLower if !affine => {
                    return Err(Error::NotControlAffine)
                }
                ArcMode::Constrained(j) => {
                    let c = self
                        .problem
                        .constraints
                        .get(*j)
                        .ok_or_else(|| Error::Config(format!("no constraint with index {j}")))?;
                    if c.order() != 1 {
                        return Err(Error::Config(format!(
                            "constraint {j} has order {}; only order 1 is supported",
                            c.order()
                        )));
                    }
                }
                _ => {}
            }
        }
        let residuals = self.residual_count()?;
        let unknowns = self.layout().len();
        if residuals != unknowns {
            return Err(Error::Config(format!("{residuals} conditions for {unknowns} unknowns")));
        }
        Ok(())
    }

    fn residual_count(&self) -> Result<usize> {
        let mut n = self.state_dim() + (self.final_time == FinalTime::Free) as usize;
        for w in self.arcs.windows(2) {
            n += self.junction_conditions(w[0], w[1])?;
        }
        Ok(n)
    }

    fn junction_conditions(&self, left: ArcMode, right: ArcMode) -> Result<usize> {
        let mut n = 0;
        if right == ArcMode::Singular {
            n += match self.singular_junction {
                SingularJunction::EntryRate => 2,
                SingularJunction::EntryExit => 1,
            };
        }
        if left == ArcMode::Singular && self.singular_junction == SingularJunction::EntryExit {
            n += 1;
        }
        if matches!(right, ArcMode::Constrained(_)) {
            n += 1 + (self.tangency == Tangency::Entry) as usize;
        }
        if matches!(left, ArcMode::Constrained(_)) {
            n += 1 + (self.tangency == Tangency::Exit) as usize;
        }
        let plain = |m: ArcMode| matches!(m, ArcMode::Regular | ArcMode::BangUpper | ArcMode::BangLower);
        if plain(left) && plain(right) {
            if self.problem.form != HamiltonianForm::Affine {
                return Err(Error::Config(format!("no switching condition between {left} and {right} arcs")));
            }
            n += 1;
        }
        Ok(n)
    }

    fn split<'a>(&self, z: &'a [f64]) -> Result<(f64, &'a [f64], &'a [f64], &'a [f64])> {
        let l = self.layout();
        if z.len() != l.len() {
            return Err(Error::DimensionMismatch { expected: l.len(), found: z.len() });
        }
        let tf = match self.final_time {
            FinalTime::Free => z[0],
            FinalTime::Fixed(t) => t,
        };
        Ok((
            tf,
            &z[l.costate_start()..l.junction_start()],
            &z[l.junction_start()..l.multiplier_start()],
            &z[l.multiplier_start()..],
        ))
    }

    /// Integrates the extremal defined by the unknowns `z`.
    pub fn integrate(&self, z: &[f64]) -> Result<ExtremalRun> {
        self.run(z, true)
    }

    fn run(&self, z: &[f64], collect: bool) -> Result<ExtremalRun> {
        let (tf, p0, junctions, multipliers) = self.split(z)?;
        let mut times = Vec::with_capacity(self.arcs.len() + 1);
        times.push(0.0);
        times.extend_from_slice(junctions);
        times.push(tf);
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::ArcOrderViolation(times));
        }
        let problem = self.problem.as_ref();
        let mut s = ExtremalState::new(self.initial_state.clone(), p0.to_vec());
        let mut rec = Recorder { collect, events: Vec::new(), samples: Vec::new() };
        let mut junction_states = Vec::with_capacity(junctions.len());
        let mut next_multiplier = 0;
        for (a, &mode) in self.arcs.iter().enumerate() {
            let t0 = times[a];
            if a > 0 {
                let before = s.clone();
                let prev = self.arcs[a - 1];
                rec.events.push(Event { t: t0, kind: EventKind::Junction { from: prev, to: mode }, arc: a });
                let jump_constraint = match (prev, mode, self.tangency) {
                    (_, ArcMode::Constrained(j), Tangency::Entry) => Some(j),
                    (ArcMode::Constrained(j), _, Tangency::Exit) => Some(j),
                    _ => None,
                };
                if let Some(j) = jump_constraint {
                    let pi = multipliers[next_multiplier];
                    next_multiplier += 1;
                    let gy = problem.constraints[j].gradient(&s.y);
                    s.p = apply_costate_jump(&s.p, pi, &gy);
                    rec.events.push(Event { t: t0, kind: EventKind::CostateJump { multiplier: pi }, arc: a });
                }
                junction_states.push(JunctionState { t: t0, before, after: s.clone() });
            }
            if collect {
                rec.samples.push(sample(problem, mode, t0, &s));
            }
            self.integrate_arc(a, mode, &mut s, t0, times[a + 1], &mut rec)?;
        }
        Ok(ExtremalRun {
            final_time: tf,
            terminal: s,
            junctions: junction_states,
            events: rec.events,
            samples: rec.samples,
        })
    }

    fn integrate_arc(
        &self,
        arc: usize,
        mode: ArcMode,
        s: &mut ExtremalState,
        t0: f64,
        t1: f64,
        rec: &mut Recorder,
    ) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        let problem = self.problem.as_ref();
        let n = self.integrator.steps;
        let h = (t1 - t0) / n as f64;
        match self.integrator.kind {
            IntegratorKind::FixedRk4 => {
                for i in 0..n {
                    let step = if i + 1 == n { t1 - (t0 + i as f64 * h) } else { h };
                    *s = rk4_step(problem, mode, None, s, step)?;
                    if rec.collect {
                        let t = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
                        rec.samples.push(sample(problem, mode, t, s));
                    }
                }
            }
            IntegratorKind::Rk4Events => {
                let mut t = t0;
                let mut ev0 = Vec::new();
                let mut ev1 = Vec::new();
                for i in 0..n {
                    let target = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
                    let mut splits = 0;
                    while t < target {
                        let step = target - t;
                        let branch = branch_at(problem, mode, &s.y, &s.p)?;
                        let switching = event_functions(problem, mode, s, &mut ev0)?;
                        let next = rk4_step(problem, mode, branch, s, step)?;
                        event_functions(problem, mode, &next, &mut ev1)?;
                        let crossed = first_crossing(&ev0, &ev1);
                        if crossed.is_none() || splits >= MAX_EVENTS_PER_STEP {
                            *s = next;
                            t = target;
                            break;
                        }
                        let (mut lo, mut hi) = (0.0, step);
                        let mut which = crossed.unwrap_or(0);
                        while hi - lo > EVENT_TOLERANCE {
                            let mid = 0.5 * (lo + hi);
                            let st = rk4_step(problem, mode, branch, s, mid)?;
                            event_functions(problem, mode, &st, &mut ev1)?;
                            match first_crossing(&ev0, &ev1) {
                                Some(k) => {
                                    hi = mid;
                                    which = k;
                                }
                                None => lo = mid,
                            }
                        }
                        *s = rk4_step(problem, mode, branch, s, hi)?;
                        t += hi;
                        splits += 1;
                        let kind = if which >= switching {
                            EventKind::Kink
                        } else if matches!(mode, ArcMode::Constrained(_)) {
                            EventKind::BoundarySwitch
                        } else {
                            EventKind::Switching
                        };
                        rec.events.push(Event { t, kind, arc });
                        if rec.collect {
                            rec.samples.push(sample(problem, mode, t, s));
                        }
                    }
                    if rec.collect {
                        rec.samples.push(sample(problem, mode, t, s));
                    }
                }
            }
            IntegratorKind::Adaptive => {
                let tol = self.integrator.tolerance;
                let mut t = t0;
                let mut step = h;
                let mut rejected = 0usize;
                while t < t1 {
                    let last = t + step >= t1;
                    let dt = if last { t1 - t } else { step };
                    let (next, err) = dopri_step(problem, mode, s, dt, tol, tol)?;
                    if err <= 1.0 {
                        *s = next;
                        t = if last { t1 } else { t + dt };
                        rejected = 0;
                        if rec.collect {
                            rec.samples.push(sample(problem, mode, t, s));
                        }
                    } else {
                        rejected += 1;
                        if rejected > 200 || dt < 1e-14 * (1.0 + t.abs()) {
                            return Err(Error::NonFiniteState);
                        }
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    step = dt * factor;
                }
            }
        }
        Ok(())
    }

    /// Shooting residual `S(z)`.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let run = self.run(z, false)?;
        self.residual_of(&run)
    }

    fn residual_of(&self, run: &ExtremalRun) -> Result<Vec<f64>> {
        let problem = self.problem.as_ref();
        let s = &run.terminal;
        let mut r = Vec::with_capacity(self.layout().len());
        for (i, c) in self.terminal.iter().enumerate() {
            r.push(match c {
                TerminalCondition::Fixed(v) => s.y[i] - v,
                TerminalCondition::Free => s.p[i],
            });
        }
        if self.final_time == FinalTime::Free {
            let last = *self.arcs.last().expect("validated arcs");
            let (u, _) = control_law(problem, last, None, &s.y, &s.p)?;
            r.push(problem.hamiltonian_raw(&s.y, &s.p, &u, 1.0));
        }
        for (j, w) in self.arcs.windows(2).enumerate() {
            let (left, right) = (w[0], w[1]);
            let js = &run.junctions[j];
            let mut conditions = 0;
            if right == ArcMode::Singular {
                r.push(problem.switching_function(&js.after.y, &js.after.p)?);
                if self.singular_junction == SingularJunction::EntryRate {
                    r.push(switching_rate(problem, &js.after.y, &js.after.p)?);
                }
                conditions += 1;
            }
            if left == ArcMode::Singular {
                if self.singular_junction == SingularJunction::EntryExit {
                    r.push(problem.switching_function(&js.before.y, &js.before.p)?);
                }
                conditions += 1;
            }
            if let ArcMode::Constrained(c) = right {
                // unconstrained side is before the junction
                r.push(self.constraint_junction(c, &js.before.y, &js.before.p)?);
                if self.tangency == Tangency::Entry {
                    r.push(problem.constraints[c].value(&js.before.y));
                }
                conditions += 1;
            }
            if let ArcMode::Constrained(c) = left {
                r.push(self.constraint_junction(c, &js.after.y, &js.after.p)?);
                if self.tangency == Tangency::Exit {
                    r.push(problem.constraints[c].value(&js.after.y));
                }
                conditions += 1;
            }
            if conditions == 0 {
                r.push(problem.switching_function(&js.after.y, &js.after.p)?);
            }
        }
        Ok(r)
    }

    fn constraint_junction(&self, c: usize, y: &[f64], p: &[f64]) -> Result<f64> {
        let con = &self.problem.constraints[c];
        if let Some(v) = con.junction_residual(y, p) {
            return Ok(v);
        }
        let u = self.problem.minimize_hamiltonian(y, p)?;
        Ok(con.derivative(con.order(), y, &u))
    }
}

fn first_crossing(a: &[f64], b: &[f64]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| (*x >= 0.0) != (*y >= 0.0))
}

fn sample(problem: &ControlProblem, mode: ArcMode, t: f64, s: &ExtremalState) -> ExtremalSample {
    let u = control_law(problem, mode, None, &s.y, &s.p)
        .map(|(u, _)| u)
        .unwrap_or_else(|_| vec![f64::NAN; problem.control_dim()]);
    let psi = if problem.form == HamiltonianForm::Affine {
        problem.switching_function(&s.y, &s.p).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    ExtremalSample { t, y: s.y.clone(), p: s.p.clone(), u, psi, mode }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingSolution {
    pub unknowns: Vec<f64>,
    pub layout: UnknownLayout,
    pub arcs: Vec<ArcMode>,
    pub residual: Vec<f64>,
    /// `‖S‖∞` at `unknowns`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub final_time: f64,
    pub trajectory: Vec<ExtremalSample>,
    pub events: Vec<Event>,
}

impl ShootingSolution {
    pub fn initial_costate(&self) -> &[f64] {
        &self.unknowns[self.layout.costate_start()..self.layout.junction_start()]
    }

    pub fn junction_times(&self) -> &[f64] {
        &self.unknowns[self.layout.junction_start()..self.layout.multiplier_start()]
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.unknowns[self.layout.multiplier_start()..]
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence { iterations: self.iterations, residual: self.residual_norm })
        }
    }

    /// Last sample before or at `t`.
    pub fn sample_at(&self, t: f64) -> Option<&ExtremalSample> {
        self.trajectory.iter().rev().find(|s| s.t <= t)
    }

    /// `t,y1..,p1..,u1..,psi,mode` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (d, m) = match self.trajectory.first() {
            Some(s) => (s.y.len(), s.u.len()),
            None => return Ok(()),
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.extend((1..=d).map(|i| format!("p{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("psi".into());
        header.push("mode".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.trajectory {
            let mut row = vec![fmt_float(s.t)];
            row.extend(s.y.iter().chain(&s.p).chain(&s.u).map(|v| fmt_float(*v)));
            row.push(fmt_float(s.psi));
            row.push(s.mode.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `key=value` summary lines.
    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(",");
        writeln!(w, "tf={}", fmt_float(self.final_time))?;
        writeln!(w, "p0={}", join(self.initial_costate()))?;
        writeln!(w, "junctions={}", join(self.junction_times()))?;
        writeln!(w, "multipliers={}", join(self.multipliers()))?;
        writeln!(w, "arcs={}", self.arcs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","))?;
        writeln!(w, "residual_norm={}", fmt_float(self.residual_norm))?;
        writeln!(w, "iterations={}", self.iterations)?;
        writeln!(w, "converged={}", self.converged)?;
        Ok(())
    }

    /// Writes `trajectory.csv` and `summary.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?))?;
        self.write_summary(std::fs::File::create(dir.join("summary.txt"))?)?;
        Ok(())
    }
}

/// Solves `S(z) = 0` from `guess`. A run that stops short of the tolerance
/// is returned with `converged = false`.
pub fn solve_shooting(spec: &ShootingSpec, guess: &[f64]) -> Result<ShootingSolution> {
    spec.validate()?;
    let layout = spec.layout();
    if guess.len() != layout.len() {
        return Err(Error::DimensionMismatch { expected: layout.len(), found: guess.len() });
    }
    let out = hybrid::solve(|z| spec.residual(z), guess, &spec.solver)?;
    let run = spec.run(&out.x, true)?;
    Ok(ShootingSolution {
        unknowns: out.x,
        layout,
        arcs: spec.arcs.clone(),
        residual: out.residual,
        residual_norm: out.norm,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged,
        final_time: run.final_time,
        trajectory: run.samples,
        events: run.events,
    })
}
