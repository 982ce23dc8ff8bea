//! Post-processing of a discrete value function: costate candidates,
//! feedback trajectories and control-structure estimates.
//!
//! Step sizes are given in the grid metric: an offset of `δ` along unit
//! direction `ζ` moves axis `i` by `δ·(kᵢ/k)·ζᵢ`, with `k` the largest
//! spacing. On uniform grids this is the ordinary Euclidean offset.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hjb::{feedback_control, fmt_float, NodeUpdate, TimeField, ValueField};
use crate::problem::{ControlProblem, HamiltonianForm, TargetKind};
use crate::shooting::{ArcMode, ShootingSpec};

/// Candidate initial costates at a point, with the final-time estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateGuess {
    pub candidates: Vec<Vec<f64>>,
    pub final_time: f64,
    pub source: Vec<f64>,
}

/// A local minimizer of `T̃` on the sphere of radius `δ` around a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseDirection {
    /// Unit direction of the minimizer, in state coordinates.
    pub direction: Vec<f64>,
    /// `ξ*`, the costate estimate carried by the direction.
    pub costate: Vec<f64>,
    /// `T̃(x + δζ*)`.
    pub value: f64,
}

fn axis_scale(tf: &TimeField) -> Vec<f64> {
    let k = tf.grid.k();
    tf.grid.spacing().iter().map(|s| s / k).collect()
}

/// Centred differences `(T̃(x + zeᵢ) − T̃(x − zeᵢ)) / 2z` of the interpolated
/// time field.
pub fn gradient_centered(tf: &TimeField, x: &[f64], z: f64) -> Result<Vec<f64>> {
    let d = tf.grid.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    if !(z > 0.0) {
        return Err(Error::Config(format!("gradient step must be positive, got {z}")));
    }
    let scale = axis_scale(tf);
    let mut y = x.to_vec();
    let mut g = vec![0.0; d];
    for i in 0..d {
        let zi = z * scale[i];
        y[i] = x[i] + zi;
        let hi = tf.interpolate(&y).ok_or(Error::StencilOutsideDomain)?;
        y[i] = x[i] - zi;
        let lo = tf.interpolate(&y).ok_or(Error::StencilOutsideDomain)?;
        y[i] = x[i];
        g[i] = (hi - lo) / (2.0 * zi);
    }
    Ok(g)
}

// radical inverse of `i` in base `b`
fn halton(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Deterministic quasi-uniform points on the unit sphere of `ℝᵈ`:
/// equispaced angles in 2D, a Fibonacci lattice in 3D and normalized
/// Halton-Gaussian points above.
pub fn sphere_directions(d: usize, n: usize) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..n)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|j| {
                    let z = 1.0 - (2.0 * j as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * j as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
            (1..=n)
                .map(|j| {
                    let mut v = Vec::with_capacity(d);
                    for pair in 0..d.div_ceil(2) {
                        let u1 = halton(j, PRIMES[2 * pair]).max(1e-12);
                        let u2 = halton(j, PRIMES[2 * pair + 1]);
                        let r = (-2.0 * u1.ln()).sqrt();
                        v.push(r * (2.0 * PI * u2).cos());
                        v.push(r * (2.0 * PI * u2).sin());
                    }
                    v.truncate(d);
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.iter().map(|a| a / norm).collect()
                })
                .collect()
        }
    }
}

/// A secondary minimizer is kept when its value is within this fraction of
/// the smallest sampled value.
pub const MULTIPLICITY_THRESHOLD: f64 = 0.05;
/// Minimizers closer than this angle (radians) are merged.
pub const MERGE_ANGLE: f64 = 0.35;

/// Local minimizers of `s(ζ) = T̃(x + δζ)` over `n_dirs` sphere samples.
///
/// Only minimizers below `T̃(x)` count. The deepest is always returned first;
/// others are kept when their value is within [`MULTIPLICITY_THRESHOLD`] of
/// the deepest and they are at least [`MERGE_ANGLE`] away from kept ones.
pub fn maximal_decrease_directions(
    tf: &TimeField,
    x: &[f64],
    delta: f64,
    n_dirs: usize,
) -> Result<Vec<DecreaseDirection>> {
    let d = tf.grid.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    if !(delta > 0.0) || n_dirs < 2 {
        return Err(Error::Config(format!("need delta > 0 and at least 2 directions, got {delta}, {n_dirs}")));
    }
    let scale = axis_scale(tf);
    let mut y = x.to_vec();
    for i in 0..d {
        for sign in [-1.0, 1.0] {
            y[i] = x[i] + sign * delta * scale[i];
            if !tf.grid.contains(&y) {
                return Err(Error::BallOutsideDomain);
            }
        }
        y[i] = x[i];
    }
    let t0 = tf.interpolate(x).ok_or(Error::BallOutsideDomain)?;
    let dirs = sphere_directions(d, n_dirs);
    let values: Vec<f64> = dirs
        .iter()
        .map(|z| {
            let p: Vec<f64> = (0..d).map(|i| x[i] + delta * scale[i] * z[i]).collect();
            tf.interpolate(&p).ok_or(Error::BallOutsideDomain)
        })
        .collect::<Result<_>>()?;

    let minima = local_minima(&dirs, &values);
    let mut order: Vec<usize> = minima.into_iter().filter(|&j| values[j] < t0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let Some(&deepest) = order.first() else {
        return Ok(Vec::new());
    };
    let bound = values[deepest] + MULTIPLICITY_THRESHOLD * values[deepest].abs();
    let mut kept: Vec<usize> = Vec::new();
    for j in order {
        if values[j] > bound {
            continue;
        }
        let far = kept.iter().all(|&k| {
            let dot: f64 = dirs[j].iter().zip(&dirs[k]).map(|(a, b)| a * b).sum();
            dot.clamp(-1.0, 1.0).acos() > MERGE_ANGLE
        });
        if far {
            kept.push(j);
        }
    }
    Ok(kept
        .into_iter()
        .map(|j| {
            let slope = (values[j] - t0) / delta;
            let costate = (0..d).map(|i| slope * dirs[j][i] / scale[i]).collect();
            let phys: Vec<f64> = (0..d).map(|i| dirs[j][i] * scale[i]).collect();
            let norm = phys.iter().map(|a| a * a).sum::<f64>().sqrt();
            DecreaseDirection { direction: phys.iter().map(|a| a / norm).collect(), costate, value: values[j] }
        })
        .collect())
}

/// Default number of sphere samples for a state dimension.
pub fn default_direction_count(d: usize) -> usize {
    if d <= 2 {
        360
    } else {
        1000
    }
}

/// Settings of [`costate_guess`], in cells of the time field's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GuessConfig {
    /// Radius of the decrease ball.
    pub delta_cells: f64,
    /// Smallest radius tried when the ball leaves the domain.
    pub min_delta_cells: f64,
    /// `None` uses [`default_direction_count`].
    pub directions: Option<usize>,
}

impl Default for GuessConfig {
    fn default() -> Self {
        GuessConfig { delta_cells: 2.0, min_delta_cells: 0.5, directions: None }
    }
}

/// Costate candidates at `x` together with the radius that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSearch {
    pub directions: Vec<DecreaseDirection>,
    pub delta: f64,
}

/// Maximal-decrease directions at `x`, halving the ball radius while the ball
/// leaves the domain.
pub fn search_directions(tf: &TimeField, x: &[f64], cfg: &GuessConfig) -> Result<DirectionSearch> {
    let k = tf.grid.k();
    let n = cfg.directions.unwrap_or_else(|| default_direction_count(tf.grid.dim()));
    let mut cells = cfg.delta_cells;
    loop {
        match maximal_decrease_directions(tf, x, cells * k, n) {
            Err(Error::BallOutsideDomain) if cells * 0.5 >= cfg.min_delta_cells => cells *= 0.5,
            r => return r.map(|directions| DirectionSearch { directions, delta: cells * k }),
        }
    }
}

/// `true` when every discrete control has unit running cost at `x`.
pub fn is_minimum_time(problem: &ControlProblem, x: &[f64]) -> bool {
    problem.control_set.discretize().iter().all(|u| (problem.cost(x, u) - 1.0).abs() < 1e-12)
}

/// Packs the directions into a [`CostateGuess`]. The final-time estimate is
/// `T̃(x)` for minimum-time problems and otherwise the arrival time of the
/// feedback trajectory when it reached the target.
pub fn costate_guess(
    problem: &ControlProblem,
    tf: &TimeField,
    x: &[f64],
    search: &DirectionSearch,
    traj: Option<&Trajectory>,
) -> Result<CostateGuess> {
    let value = tf.interpolate(x).ok_or(Error::BallOutsideDomain)?;
    let final_time = match traj.and_then(|t| t.arrival_time) {
        Some(t) if !is_minimum_time(problem, x) => t,
        _ => value,
    };
    Ok(CostateGuess {
        candidates: search.directions.iter().map(|d| d.costate.clone()).collect(),
        final_time,
        source: x.to_vec(),
    })
}

fn local_minima(dirs: &[Vec<f64>], values: &[f64]) -> Vec<usize> {
    let n = dirs.len();
    let d = dirs.first().map_or(0, |v| v.len());
    if d <= 1 {
        return (0..n).collect();
    }
    if d == 2 {
        // ring: strict on the left so plateaus yield one minimizer
        return (0..n)
            .filter(|&j| {
                let prev = values[(j + n - 1) % n];
                let next = values[(j + 1) % n];
                values[j] < prev && values[j] <= next
            })
            .collect();
    }
    let m = (2 * d).min(n - 1);
    (0..n)
        .filter(|&j| {
            let mut near: Vec<(f64, usize)> = (0..n)
                .filter(|&i| i != j)
                .map(|i| (-dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum::<f64>(), i))
                .collect();
            near.select_nth_unstable_by(m - 1, |a, b| a.0.total_cmp(&b.0));
            near[..m].iter().all(|&(_, i)| values[j] < values[i] || (values[j] == values[i] && j < i))
        })
        .collect()
}

/// Closed-loop trajectory synthesized from the value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control applied on `[times[i], times[i+1])`; one fewer than states.
    pub controls: Vec<Vec<f64>>,
    pub arrived: bool,
    pub arrival_time: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|s| s.as_slice()).unwrap_or(&[])
    }

    /// `t,y1..,u1..` rows; the last row repeats the last control.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.states.first().map_or(0, |s| s.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, (t, y)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![fmt_float(*t)];
            row.extend(y.iter().map(|v| fmt_float(*v)));
            if let Some(u) = self.controls.get(i).or(self.controls.last()) {
                row.extend(u.iter().map(|v| fmt_float(*v)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    /// Sampling step; `None` gives one cell at the fastest control from the
    /// start. Steps moving more than one cell are subdivided.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Arrival tolerance in cells for point and box targets.
    pub arrival_cells: f64,
    /// Consecutive steps with positive running cost and no decrease of the
    /// value tolerated before `NoProgress`.
    pub stall_steps: usize,
    pub update: NodeUpdate,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { dt: None, t_max: 100.0, arrival_cells: 1.0, stall_steps: 50, update: NodeUpdate::Discounted }
    }
}

// motion in cells per unit time
fn cell_speed(k: &[f64], f: &[f64]) -> f64 {
    f.iter().zip(k).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt()
}

fn default_dt(problem: &ControlProblem, vf: &ValueField, x: &[f64]) -> f64 {
    let k = vf.grid.spacing();
    let mut f = vec![0.0; x.len()];
    let fastest = problem
        .control_set
        .discretize()
        .iter()
        .map(|u| {
            problem.velocity_into(x, u, &mut f);
            cell_speed(k, &f)
        })
        .filter(|s| s.is_finite())
        .fold(0.0, f64::max);
    if fastest > 0.0 {
        1.0 / fastest
    } else {
        vf.grid.k()
    }
}

/// Integrates the closed loop `ẏ = f(y, u*(y))` by explicit Euler, with
/// `u*(y)` the discrete control minimizing the scheme operator at `y`.
/// Samples are uniform in time; the recorded control is the one chosen at
/// the start of each sampling interval.
pub fn feedback_trajectory(
    problem: &ControlProblem,
    vf: &ValueField,
    x: &[f64],
    cfg: &FeedbackConfig,
) -> Result<Trajectory> {
    let d = problem.state_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    if !vf.grid.contains(x) {
        return Err(Error::LeftDomain { t: 0.0 });
    }
    let target = problem.target.with_metric(vf.grid.spacing(), cfg.arrival_cells);
    let arrived = |y: &[f64]| match &target.kind {
        TargetKind::HalfSpace(_) => target.contains(y),
        _ => target.distance(y) <= cfg.arrival_cells,
    };
    let dt = cfg.dt.unwrap_or_else(|| default_dt(problem, vf, x));
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.to_vec()],
        controls: Vec::new(),
        arrived: false,
        arrival_time: None,
    };
    if arrived(x) {
        traj.arrived = true;
        traj.arrival_time = Some(0.0);
        return Ok(traj);
    }
    let mut y = x.to_vec();
    let mut f = vec![0.0; d];
    let mut value = vf.interpolate(&y);
    let mut stalled = 0usize;
    let steps = (cfg.t_max / dt).ceil() as usize;
    for n in 1..=steps {
        let t = n as f64 * dt;
        let mut first = None;
        let mut left = dt;
        while left > 0.0 {
            let (u, _) = feedback_control(problem, vf, &y, cfg.update)
                .ok_or(Error::AllControlsDegenerate { node: usize::MAX })?;
            problem.velocity_into(&y, &u, &mut f);
            let speed = cell_speed(vf.grid.spacing(), &f);
            let h = if speed * left > 1.0 { 1.0 / speed } else { left };
            for a in 0..d {
                y[a] += h * f[a];
            }
            left -= h;
            if first.is_none() {
                first = Some(u);
            }
            if !vf.grid.contains(&y) || arrived(&y) {
                break;
            }
        }
        let u = first.expect("at least one substep");
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        if !vf.grid.contains(&y) {
            return Err(Error::LeftDomain { t });
        }
        traj.times.push(t);
        traj.states.push(y.clone());
        traj.controls.push(u);
        if arrived(&y) {
            traj.arrived = true;
            traj.arrival_time = Some(t);
            break;
        }
        let next = vf.interpolate(&y);
        // zero-cost steps (coasting) legitimately keep the value constant
        let costly = problem.cost(traj.states[n - 1].as_slice(), &traj.controls[n - 1]) > 0.0;
        if next >= value && costly {
            stalled += 1;
            if stalled >= cfg.stall_steps {
                return Err(Error::NoProgress { t });
            }
        } else {
            stalled = 0;
        }
        value = next;
    }
    Ok(traj)
}

/// Switches and singular and constrained arcs read off a trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructureEstimate {
    pub switches: Vec<f64>,
    pub singular_arcs: Vec<(f64, f64)>,
    /// One interval list per constraint of the problem.
    pub constrained_arcs: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureConfig {
    /// Samples per detection window.
    pub window: usize,
    /// Alternation rate above which a window counts as chattering.
    pub chattering_rate: f64,
    /// `|g(y)| ≤ tolerance` marks a constrained sample; `None` uses half a
    /// cell of the trajectory's grid measured along `∇g`.
    pub constraint_tolerance: Option<f64>,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig { window: 8, chattering_rate: 0.5, constraint_tolerance: None }
    }
}

/// First and last index of each maximal run of marked samples.
fn runs(marks: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in marks.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, marks.len() - 1));
    }
    out
}

/// Time intervals covered by runs of marked control samples; `times` has one
/// more entry than `marks`.
fn intervals(marks: &[bool], times: &[f64]) -> Vec<(f64, f64)> {
    runs(marks).into_iter().map(|(a, b)| (times[a], times[b + 1])).collect()
}

/// Estimates the control structure of `traj`. `spacing` is the node spacing
/// of the grid the trajectory came from.
pub fn estimate_structure(
    problem: &ControlProblem,
    traj: &Trajectory,
    spacing: &[f64],
    cfg: &StructureConfig,
) -> StructureEstimate {
    let mut est =
        StructureEstimate { constrained_arcs: vec![Vec::new(); problem.constraints.len()], ..Default::default() };
    let n = traj.controls.len();
    if n == 0 {
        return est;
    }
    let times = &traj.times[..=n];
    let window = cfg.window.max(2);

    if problem.form == HamiltonianForm::Affine {
        if let Some((lo, up)) = problem.control_set.bounds() {
            // 0 near lower bound, 1 near upper bound, 2 middle band
            let band = INTERIOR_BAND * (up - lo);
            let label: Vec<u8> = traj
                .controls
                .iter()
                .map(|u| {
                    if u[0] <= lo + band {
                        0
                    } else if u[0] >= up - band {
                        1
                    } else {
                        2
                    }
                })
                .collect();
            let mut singular = vec![false; n];
            if n >= window {
                for s in 0..=n - window {
                    let w = &label[s..s + window];
                    let changes: Vec<usize> = (1..window).filter(|&i| w[i] != w[i - 1]).collect();
                    let rate = changes.len() as f64 / (window - 1) as f64;
                    if rate > cfg.chattering_rate {
                        let first = s + changes[0];
                        let last = s + changes[changes.len() - 1] - 1;
                        singular[first..=last.max(first)].iter_mut().for_each(|m| *m = true);
                    }
                }
            }
            for (m, l) in singular.iter_mut().zip(&label) {
                if *l == 2 {
                    *m = true;
                }
            }
            // drop isolated marks shorter than half a window
            let mut arcs = intervals(&singular, times);
            let min_len = 0.5 * (window as f64) * (times.get(1).copied().unwrap_or(0.0) - times[0]);
            arcs.retain(|(a, b)| b - a >= min_len);
            est.singular_arcs = arcs;

            let in_arc = |t: f64| est.singular_arcs.iter().any(|(a, b)| t >= *a && t <= *b);
            let mut i = 1;
            while i < n {
                let prev = label[i - 1];
                if label[i] != prev && label[i] != 2 && prev != 2 && !in_arc(times[i]) {
                    let end = (i + window).min(n);
                    if end - i >= window && label[i..end].iter().all(|&l| l == label[i]) {
                        est.switches.push(times[i]);
                        i = end;
                        continue;
                    }
                }
                i += 1;
            }
        }
    }

    for (j, c) in problem.constraints.iter().enumerate() {
        let marks: Vec<bool> = traj
            .states
            .iter()
            .map(|y| {
                let tol = cfg.constraint_tolerance.unwrap_or_else(|| {
                    0.5 * c.gradient(y).iter().zip(spacing).map(|(g, k)| (g * k).powi(2)).sum::<f64>().sqrt()
                });
                c.value(y).abs() <= tol
            })
            .collect();
        est.constrained_arcs[j] = runs(&marks).into_iter().map(|(a, b)| (traj.times[a], traj.times[b])).collect();
    }
    est
}

/// Fraction of the control range next to each bound that counts as that bound
/// when labelling samples.
pub const INTERIOR_BAND: f64 = 0.25;

/// Default jump multiplier at constrained-arc junctions.
pub const DEFAULT_JUMP_MULTIPLIER: f64 = 0.1;

/// Packs candidate `index` of `guess` and the junction times of `structure`
/// into the unknown layout of `spec`.
pub fn make_initial_guess(
    guess: &CostateGuess,
    index: usize,
    structure: &StructureEstimate,
    spec: &ShootingSpec,
) -> Result<Vec<f64>> {
    let costate = guess
        .candidates
        .get(index)
        .ok_or_else(|| Error::Config(format!("no costate candidate {index} (have {})", guess.candidates.len())))?;
    let declared_singular = spec.arcs.iter().filter(|a| **a == ArcMode::Singular).count();
    if declared_singular != structure.singular_arcs.len() {
        return Err(Error::StructureMismatch { expected: declared_singular, found: structure.singular_arcs.len() });
    }
    let mut constrained_seen = vec![0usize; structure.constrained_arcs.len()];
    for a in &spec.arcs {
        if let ArcMode::Constrained(j) = a {
            if *j >= constrained_seen.len() {
                return Err(Error::StructureMismatch { expected: j + 1, found: constrained_seen.len() });
            }
            constrained_seen[*j] += 1;
        }
    }
    for (j, seen) in constrained_seen.iter().enumerate() {
        if *seen != structure.constrained_arcs[j].len() {
            return Err(Error::StructureMismatch { expected: *seen, found: structure.constrained_arcs[j].len() });
        }
    }
    let bang = |m: ArcMode| matches!(m, ArcMode::BangLower | ArcMode::BangUpper | ArcMode::Regular);
    let declared_switches = spec.arcs.windows(2).filter(|w| bang(w[0]) && bang(w[1])).count();
    if declared_switches > 0 && declared_switches != structure.switches.len() {
        return Err(Error::StructureMismatch { expected: declared_switches, found: structure.switches.len() });
    }

    let mut junctions = Vec::new();
    let mut singular = structure.singular_arcs.iter();
    let mut constrained: Vec<_> = structure.constrained_arcs.iter().map(|v| v.iter()).collect();
    let mut switches = structure.switches.iter();
    let mut open: Option<f64> = None;
    for w in spec.arcs.windows(2) {
        let t = if let Some(exit) = open.take() {
            exit
        } else {
            match w[1] {
                ArcMode::Singular => {
                    let (a, b) = singular.next().copied().unwrap_or_default();
                    open = Some(b);
                    a
                }
                ArcMode::Constrained(j) => {
                    let (a, b) = constrained[j].next().copied().unwrap_or_default();
                    open = Some(b);
                    a
                }
                _ => switches.next().copied().unwrap_or_default(),
            }
        };
        junctions.push(t);
    }
    let multipliers = vec![DEFAULT_JUMP_MULTIPLIER; spec.layout().multipliers];
    spec.layout().pack(guess.final_time, costate, &junctions, &multipliers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::problem::BoxDomain;

    fn field(f: impl Fn(&[f64]) -> f64, n: usize) -> TimeField {
        let g = Grid::uniform(&BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(), &[n, n]).unwrap();
        let v = (0..g.node_count()).map(|i| f(&g.node(i))).collect();
        TimeField::from_values(g, v).unwrap()
    }

    #[test]
    fn centred_gradient_exact_on_linear_field() {
        let tf = field(|x| 0.3 * x[0] - 1.2 * x[1] + 2.0, 41);
        for z in [0.1, 0.35, 1.0] {
            let g = gradient_centered(&tf, &[0.2, -0.3], z).unwrap();
            assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] + 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn centred_gradient_on_quadratic_at_nodes() {
        // stencil points are nodes, where the interpolant is exact
        let tf = field(|x| x[0] * x[0] + x[1] * x[1], 401);
        let g = gradient_centered(&tf, &[1.0, 0.0], 0.01).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-10 && g[1].abs() < 1e-10, "{g:?}");
    }

    #[test]
    fn stencil_leaving_the_box_is_an_error() {
        let tf = field(|x| x[0], 11);
        assert!(matches!(gradient_centered(&tf, &[1.9, 0.0], 0.2), Err(Error::StencilOutsideDomain)));
        assert!(matches!(maximal_decrease_directions(&tf, &[1.9, 0.0], 0.2, 36), Err(Error::BallOutsideDomain)));
    }

    #[test]
    fn single_direction_in_smooth_region() {
        let tf = field(|x| 0.6 * x[0] + 0.8 * x[1] + 5.0, 41);
        let dirs = maximal_decrease_directions(&tf, &[0.0, 0.0], 0.2, 360).unwrap();
        assert_eq!(dirs.len(), 1);
        assert!((dirs[0].costate[0] - 0.6).abs() < 5e-3 && (dirs[0].costate[1] - 0.8).abs() < 5e-3, "{dirs:?}");
        assert!((dirs[0].direction[0] + 0.6).abs() < 1e-2, "{dirs:?}");
    }

    #[test]
    fn two_point_eikonal_has_two_directions() {
        // distance to {(−3, 0), (3, 0)}
        let g = Grid::uniform(&BoxDomain::new(vec![-4.0, -4.0], vec![4.0, 4.0]).unwrap(), &[81, 81]).unwrap();
        let v = (0..g.node_count())
            .map(|i| {
                let x = g.node(i);
                (x[0] + 3.0).hypot(x[1]).min((x[0] - 3.0).hypot(x[1]))
            })
            .collect();
        let tf = TimeField::from_values(g, v).unwrap();
        let mut dirs = maximal_decrease_directions(&tf, &[0.0, 0.0], 0.2, 360).unwrap();
        assert_eq!(dirs.len(), 2);
        dirs.sort_by(|a, b| a.direction[0].total_cmp(&b.direction[0]));
        assert!((dirs[0].direction[0] + 1.0).abs() < 1e-6 && (dirs[1].direction[0] - 1.0).abs() < 1e-6);
        assert!((dirs[0].costate[0] - 1.0).abs() < 1e-6, "{:?}", dirs[0]);
    }

    #[test]
    fn sphere_points_are_unit_and_deterministic() {
        for d in 1..=4 {
            let a = sphere_directions(d, 100);
            assert_eq!(a, sphere_directions(d, 100));
            for v in &a {
                assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intervals_of_marks() {
        let t: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let m = [false, true, true, false, false, true, true, true];
        assert_eq!(intervals(&m, &t), vec![(1.0, 3.0), (5.0, 8.0)]);
    }
}
