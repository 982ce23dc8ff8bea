use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use hjbshoot::problem::normalize_angle;
use hjbshoot::shooting::extremal::{apply_costate_jump, control_law, extremal_rhs, switching_rate, ExtremalState};
use hjbshoot::shooting::EventKind;
use hjbshoot::{
    make_problem, solve_shooting, ArcMode, BenchmarkBundle, BoxDomain, ControlProblem, ControlSet, ControlSystem,
    FinalTime, IntegratorConfig, IntegratorKind, ProblemId, ShootingSolution, ShootingSpec, TargetSet,
    TerminalCondition,
};
use proptest::prelude::*;

fn bundle(id: ProblemId) -> BenchmarkBundle {
    make_problem(id).unwrap()
}

fn scaled_initialization(b: &BenchmarkBundle) -> Vec<f64> {
    let init = &b.initializations[0];
    let p: Vec<f64> = init.costate.iter().map(|v| v * b.costate_scale).collect();
    let mult: Vec<f64> = init.multiplier.into_iter().collect();
    b.shooting.layout().pack(init.final_time, &p, init.junctions, &mult).unwrap()
}

fn solve_from_initialization(id: ProblemId) -> (BenchmarkBundle, ShootingSolution) {
    let b = bundle(id);
    let sol = solve_shooting(&b.shooting, &scaled_initialization(&b)).unwrap();
    assert!(sol.converged, "{id} residual {:e}", sol.residual_norm);
    (b, sol)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(2.0 * PI - d)
}

#[test]
fn p4_boundary_law() {
    let b = bundle(ProblemId::P4);
    let y = [0.0, 0.0, 1.0, 0.3];
    for (p3, p4) in [(-0.9, 0.4), (-0.2, -0.7)] {
        let (u, mu) = control_law(&b.problem, ArcMode::Constrained(0), None, &y, &[-0.5, -0.1, p3, p4]).unwrap();
        let expected = -p4.signum() * FRAC_PI_2;
        assert!(angle_diff(u[0], expected) < 1e-12, "{u:?} vs {expected}");
        assert_abs_diff_eq!(mu, -p3, epsilon = 1e-12);
    }
}

#[test]
fn p2_negative_switching_function_selects_upper_bound() {
    let b = bundle(ProblemId::P2);
    let s = ExtremalState::new(vec![0.4, -0.3], vec![0.8, -1.5]);
    let d = extremal_rhs(&b.problem, ArcMode::Regular, &s).unwrap();
    let (y1, y2) = (0.4f64, -0.3f64);
    assert_abs_diff_eq!(d.y[0], y2, epsilon = 1e-15);
    assert_abs_diff_eq!(d.y[1], -y1 + y2 * (1.0 - y1 * y1) + 1.0, epsilon = 1e-15);
}

struct Frozen;

impl ControlSystem for Frozen {
    fn velocity(&self, _y: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
        2.0
    }
}

fn frozen() -> ControlProblem {
    ControlProblem::new(
        "frozen",
        Arc::new(Frozen),
        ControlSet::Discrete(vec![vec![0.0], vec![1.0]]),
        TargetSet::point(vec![0.0, 0.0], 0.1),
        BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
    )
    .unwrap()
}

#[test]
fn zero_dynamics_freeze_the_costate() {
    let s = ExtremalState::new(vec![0.3, -0.2], vec![1.7, -0.4]);
    let d = extremal_rhs(&frozen(), ArcMode::Regular, &s).unwrap();
    assert!(d.p.iter().all(|v| v.abs() < 1e-12));
    assert!(d.y.iter().all(|v| *v == 0.0));
}

#[test]
fn empty_interval_returns_the_initial_state() {
    let spec = ShootingSpec::new(
        Arc::new(frozen()),
        vec![0.25, -0.5],
        vec![ArcMode::Regular],
        vec![TerminalCondition::Free, TerminalCondition::Free],
    )
    .unwrap()
    .with_final_time(FinalTime::Fixed(0.0));
    let run = spec.integrate(&[0.3, 0.4]).unwrap();
    assert_eq!(run.terminal.y, vec![0.25, -0.5]);
    assert_eq!(run.terminal.p, vec![0.3, 0.4]);
}

#[test]
fn costate_jump_examples() {
    let p = [0.3, -0.2, -1.1, 0.4];
    assert_eq!(apply_costate_jump(&p, 0.0, &[0.0, 0.0, 1.0, 0.0]), p.to_vec());
    let q = apply_costate_jump(&p, 4.1294, &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(q[0], p[0]);
    assert_eq!(q[1], p[1]);
    assert_abs_diff_eq!(q[2], p[2] - 4.1294, epsilon = 1e-15);
    assert_eq!(q[3], p[3]);
}

#[test]
fn p1_published_point_and_converged_residual() {
    let b = bundle(ProblemId::P1);
    let published = [4.868, -5.552e-2, -9.985e-1];
    // four printed digits leave a residual of order 1e-3
    assert!(max_abs(&b.shooting.residual(&published).unwrap()) < 1e-2);
    let sol = solve_shooting(&b.shooting, &published).unwrap();
    assert!(sol.converged);
    assert!(sol.residual_norm <= 1e-8);
    for (a, c) in sol.unknowns.iter().zip(&published) {
        assert_abs_diff_eq!(a, c, epsilon = 1e-3);
    }
    assert!(max_abs(&b.shooting.residual(&sol.unknowns).unwrap()) <= 1e-8);
}

#[test]
fn p1_straight_extremal_is_a_zero() {
    let b = bundle(ProblemId::P1);
    let r = b.shooting.residual(&[5.5, -1.0, 0.0]).unwrap();
    assert!(max_abs(&r) < 1e-10, "{r:?}");
}

#[test]
fn residual_reacts_to_every_unknown() {
    for id in ProblemId::ALL {
        let b = bundle(id);
        let z = scaled_initialization(&b);
        let r0 = b.shooting.residual(&z).unwrap();
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += 1e-4 * (1.0 + z[i].abs());
            let r = b.shooting.residual(&zp).unwrap();
            let change = r.iter().zip(&r0).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            assert!(change > 1e-9, "{id}: unknown {i} has no effect");
        }
    }
}

#[test]
fn p1_from_hjb_initialization() {
    let (_, sol) = solve_from_initialization(ProblemId::P1);
    assert_abs_diff_eq!(sol.final_time, 4.868, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.initial_costate()[0], -5.552e-2, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.initial_costate()[1], -9.985e-1, epsilon = 1e-3);
}

#[test]
fn p2_from_hjb_initialization() {
    let (_, sol) = solve_from_initialization(ProblemId::P2);
    assert_abs_diff_eq!(sol.final_time, 3.837, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.initial_costate()[0], 1.249, epsilon = 1e-2);
    assert_abs_diff_eq!(sol.initial_costate()[1], -3.787, epsilon = 1e-2);
    let switches = sol.events.iter().filter(|e| e.kind == EventKind::Switching).count();
    assert_eq!(switches, 1);
}

#[test]
fn p3_from_hjb_initialization() {
    let (b, sol) = solve_from_initialization(ProblemId::P3);
    assert_abs_diff_eq!(sol.final_time, 0.1741, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.junction_times()[0], 0.02351, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.junction_times()[1], 0.06685, epsilon = 1e-3);
    // costate in the published normalization
    let p: Vec<f64> = sol.initial_costate().iter().map(|v| v / b.costate_scale).collect();
    for (a, c) in p.iter().zip(b.references[0].costate) {
        assert_abs_diff_eq!(a, c, epsilon = 2e-2 * c.abs().max(1.0));
    }
}

#[test]
fn p3_singular_arc_keeps_the_switching_function_at_zero() {
    let (b, sol) = solve_from_initialization(ProblemId::P3);
    let (entry, exit) = (sol.junction_times()[0], sol.junction_times()[1]);
    let arc: Vec<_> = sol.trajectory.iter().filter(|s| s.t > entry && s.t < exit).collect();
    assert!(arc.len() > 10);
    for s in &arc {
        assert_eq!(s.mode, ArcMode::Singular);
        assert!(s.psi.abs() <= 1e-6, "ψ = {} at t = {}", s.psi, s.t);
        assert!(switching_rate(&b.problem, &s.y, &s.p).unwrap().abs() <= 1e-4);
        assert!((0.0..=1.0).contains(&s.u[0]));
    }
    // full thrust before the arc, then the singular control drops below it
    let before = sol.trajectory.iter().rfind(|s| s.t < entry).unwrap();
    assert_eq!(before.u[0], 1.0);
    assert!(arc[0].u[0] < 1.0);
}

#[test]
fn p4_from_hjb_initialization() {
    let (b, sol) = solve_from_initialization(ProblemId::P4);
    assert_abs_diff_eq!(sol.final_time, 7.0356, epsilon = 1e-3);
    assert_abs_diff_eq!(sol.junction_times()[0], 1.137, epsilon = 0.02);
    assert_abs_diff_eq!(sol.junction_times()[1], 5.899, epsilon = 0.02);
    assert_abs_diff_eq!(sol.multipliers()[0], 4.1294, epsilon = 0.05);
    let on_arc: Vec<_> = sol.trajectory.iter().filter(|s| s.mode == ArcMode::Constrained(0)).collect();
    assert!(!on_arc.is_empty());
    for s in on_arc {
        assert!(-s.p[2] >= -1e-8, "μ = {} at t = {}", -s.p[2], s.t);
        assert_abs_diff_eq!(s.y[2], 1.0, epsilon = 1e-8);
    }
    let _ = b;
}

#[test]
fn hamiltonian_is_a_first_integral() {
    for id in ProblemId::ALL {
        let (b, sol) = solve_from_initialization(id);
        let worst =
            sol.trajectory.iter().map(|s| b.problem.hamiltonian_raw(&s.y, &s.p, &s.u, 1.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{id}: max |H| = {worst:e}");
    }
}

#[test]
fn bang_samples_follow_the_switching_function() {
    for id in [ProblemId::P2, ProblemId::P3] {
        let (b, sol) = solve_from_initialization(id);
        let (lo, up) = b.problem.control_set.bounds().unwrap();
        let event_times: Vec<f64> = sol.events.iter().map(|e| e.t).collect();
        for s in &sol.trajectory {
            if s.mode == ArcMode::Singular || event_times.iter().any(|t| (t - s.t).abs() < 1e-9) {
                continue;
            }
            if s.psi > 1e-9 {
                assert_eq!(s.u[0], lo, "{id} at t = {}", s.t);
            } else if s.psi < -1e-9 {
                assert_eq!(s.u[0], up, "{id} at t = {}", s.t);
            }
        }
    }
}

#[test]
fn event_times_as_breakpoints_reproduce_the_terminal_state() {
    let b = bundle(ProblemId::P2);
    let fine = IntegratorConfig { kind: IntegratorKind::Rk4Events, steps: 4000, ..Default::default() };
    let spec = b.shooting.clone().with_integrator(fine);
    let sol = solve_shooting(&spec, &scaled_initialization(&b)).unwrap();
    let run = spec.integrate(&sol.unknowns).unwrap();
    let switches: Vec<f64> = run.events.iter().filter(|e| e.kind == EventKind::Switching).map(|e| e.t).collect();
    assert_eq!(switches.len(), 1);
    let first = run.samples[1].u[0];
    let modes = [first, -first].map(|u| if u > 0.0 { ArcMode::BangUpper } else { ArcMode::BangLower });
    let fixed =
        ShootingSpec::new(b.problem.clone(), b.initial_state.clone(), modes.to_vec(), b.shooting.terminal.clone())
            .unwrap()
            .with_integrator(IntegratorConfig { kind: IntegratorKind::FixedRk4, steps: 2000, ..Default::default() });
    let mut z = sol.unknowns.clone();
    z.push(switches[0]);
    let again = fixed.integrate(&z).unwrap();
    for (a, c) in again.terminal.y.iter().zip(&run.terminal.y) {
        assert!((a - c).abs() <= 1e-10, "{a} vs {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_and_central_differences_agree(
        id in prop::sample::select(vec![ProblemId::P1, ProblemId::P2]),
        v in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let b = bundle(id);
        let z = scaled_initialization(&b);
        let at = |s: f64| -> Vec<f64> {
            let zs: Vec<f64> = z.iter().zip(&v).map(|(a, c)| a + s * c).collect();
            b.shooting.residual(&zs).unwrap()
        };
        let r0 = at(0.0);
        let fwd = 1e-7;
        let eps = 1e-4;
        let (rp, rm, rf) = (at(eps), at(-eps), at(fwd));
        for i in 0..r0.len() {
            let central = (rp[i] - rm[i]) / (2.0 * eps);
            let forward = (rf[i] - r0[i]) / fwd;
            prop_assert!((central - forward).abs() <= 1e-4 * (1.0 + central.abs()), "{} vs {}", central, forward);
        }
    }
}
