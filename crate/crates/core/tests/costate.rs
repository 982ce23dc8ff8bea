use std::sync::Arc;

use approx::assert_abs_diff_eq;
use hjbshoot::costate::{
    estimate_structure, feedback_trajectory, gradient_centered, make_initial_guess, maximal_decrease_directions,
    search_directions, FeedbackConfig, GuessConfig, StructureConfig,
};
use hjbshoot::{
    make_problem, solve_value, BoxDomain, ControlProblem, ControlSet, ControlSystem, CostateGuess, Error, Grid,
    ProblemId, SolverConfig, StructureEstimate, TargetSet, TimeField, Trajectory, ValueField,
};
use proptest::prelude::*;

struct Eikonal;

impl ControlSystem for Eikonal {
    fn velocity(&self, _y: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }
    fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
        1.0
    }
}

fn directions(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let a = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            vec![a.cos(), a.sin()]
        })
        .collect()
}

fn eikonal_2d(n: usize, target: [f64; 2], controls: usize) -> (ControlProblem, ValueField) {
    let domain = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let grid = Grid::uniform(&domain, &[n, n]).unwrap();
    let p = ControlProblem::new(
        "eikonal-2d",
        Arc::new(Eikonal),
        ControlSet::Discrete(directions(controls)),
        TargetSet::point(target.to_vec(), grid.k()),
        domain,
    )
    .unwrap();
    let vf = solve_value(&p, &grid, &SolverConfig::default()).unwrap();
    (p, vf)
}

fn synthetic(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> TimeField {
    let values = (0..grid.node_count()).map(|i| f(&grid.node(i))).collect();
    TimeField::from_values(grid.clone(), values).unwrap()
}

fn square_grid(n: usize) -> Grid {
    let b = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    Grid::uniform(&b, &[n, n]).unwrap()
}

fn solve_bundle(id: ProblemId, counts: Option<&[usize]>, nc: Option<usize>) -> (hjbshoot::BenchmarkBundle, ValueField) {
    let b = make_problem(id).unwrap();
    let counts = counts.map_or(b.grid_counts.clone(), |c| c.to_vec());
    let problem = b.problem.as_ref().clone().with_control_count(nc.unwrap_or(b.control_count));
    let grid = Grid::anisotropic(b.domain(), &counts).unwrap();
    let vf = solve_value(&problem, &grid, &SolverConfig::default()).unwrap();
    (b, vf)
}

#[test]
fn gradient_on_synthetic_fields() {
    let grid = square_grid(41);
    let tf = synthetic(&grid, |x| 3.0 + 0.7 * x[0] - 1.3 * x[1]);
    for z in [0.01, 0.1, 0.5] {
        let g = gradient_centered(&tf, &[0.33, -0.41], z).unwrap();
        assert_abs_diff_eq!(g[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], -1.3, epsilon = 1e-12);
    }
    let tf = synthetic(&grid, |x| x[0] * x[0] + x[1] * x[1]);
    let g = gradient_centered(&tf, &[1.0, 0.0], 0.01).unwrap();
    assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-10);
    assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-10);
    assert!(matches!(gradient_centered(&tf, &[1.99, 0.0], 0.1), Err(Error::StencilOutsideDomain)));
}

#[test]
fn p1_coarse_gradient() {
    let (_, vf) = solve_bundle(ProblemId::P1, None, None);
    let tf = vf.to_time_field();
    let g = gradient_centered(&tf, &[-2.5, 0.0], tf.grid.k()).unwrap();
    assert_abs_diff_eq!(g[0], -0.049, epsilon = 0.05);
    assert_abs_diff_eq!(g[1], -1.000, epsilon = 0.05);
}

#[test]
fn two_point_eikonal_gives_both_directions() {
    // targets (±3, 0) at unit speed: T = 3 − |x₁| near the origin
    let grid = BoxDomain::new(vec![-6.0, -6.0], vec![6.0, 6.0]).unwrap();
    let grid = Grid::uniform(&grid, &[121, 121]).unwrap();
    let tf = synthetic(&grid, |x| ((x[0] - 3.0).hypot(x[1])).min((x[0] + 3.0).hypot(x[1])));
    let dirs = maximal_decrease_directions(&tf, &[0.0, 0.0], 2.0 * grid.k(), 360).unwrap();
    assert_eq!(dirs.len(), 2);
    let mut xs: Vec<f64> = dirs.iter().map(|d| d.direction[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert_abs_diff_eq!(xs[0], -1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(xs[1], 1.0, epsilon = 1e-9);
    for d in &dirs {
        assert_abs_diff_eq!(d.direction[1], 0.0, epsilon = 1e-9);
    }
}

#[test]
fn ball_outside_domain() {
    let grid = square_grid(21);
    let tf = synthetic(&grid, |x| x[0].abs());
    assert!(matches!(maximal_decrease_directions(&tf, &[1.9, 0.0], 0.5, 36), Err(Error::BallOutsideDomain)));
}

#[test]
fn smooth_region_matches_gradient_to_first_order() {
    let (_, vf) = eikonal_2d(121, [0.5, 0.0], 32);
    let tf = vf.to_time_field();
    let k = tf.grid.k();
    let x = [-0.4, 0.3];
    let g = gradient_centered(&tf, &x, k).unwrap();
    let mut ratios = Vec::new();
    for delta in [2.0 * k, 4.0 * k, 8.0 * k] {
        let dirs = maximal_decrease_directions(&tf, &x, delta, 360).unwrap();
        assert_eq!(dirs.len(), 1);
        let err = dirs[0].costate.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        ratios.push(err / (delta + k * k));
    }
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(c < 2.0, "measured constants {ratios:?}");
}

#[test]
fn feedback_from_inside_the_target() {
    let (p, vf) = eikonal_2d(41, [0.0, 0.0], 16);
    let traj = feedback_trajectory(&p, &vf, &[0.0, 0.0], &FeedbackConfig::default()).unwrap();
    assert!(traj.arrived);
    assert_eq!(traj.arrival_time, Some(0.0));
    assert!(traj.is_empty());
}

#[test]
fn feedback_on_1d_eikonal() {
    let domain = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
    let grid = Grid::uniform(&domain, &[201]).unwrap();
    let p = ControlProblem::new(
        "eikonal-1d",
        Arc::new(Eikonal),
        ControlSet::Discrete(vec![vec![-1.0], vec![1.0]]),
        TargetSet::point(vec![0.0], grid.k()),
        domain,
    )
    .unwrap();
    let vf = solve_value(&p, &grid, &SolverConfig::default()).unwrap();
    let cfg = FeedbackConfig::default();
    let traj = feedback_trajectory(&p, &vf, &[0.5], &cfg).unwrap();
    let dt = traj.times[1] - traj.times[0];
    let k = grid.k();
    assert!((traj.arrival_time.unwrap() - 0.5).abs() <= 2.0 * k + dt);
    assert!(traj.controls.iter().all(|u| u[0] == -1.0));
}

#[test]
fn p1_feedback_on_the_fine_grid() {
    let (b, vf) = solve_bundle(ProblemId::P1, Some(&[200, 200]), Some(32));
    let traj = feedback_trajectory(&b.problem, &vf, &b.initial_state, &FeedbackConfig::default()).unwrap();
    assert!(traj.arrived);
    assert_abs_diff_eq!(traj.arrival_time.unwrap(), 4.878, epsilon = 0.1);
}

fn value_increase(p: &ControlProblem, vf: &ValueField, x: &[f64]) -> (f64, f64) {
    let traj = feedback_trajectory(p, vf, x, &FeedbackConfig::default()).unwrap();
    assert!(traj.arrived);
    let mut values: Vec<f64> = traj.states.iter().map(|y| vf.interpolate(y)).collect();
    // the arrival sample lies in the target, where v = 0 even if no node there is marked
    *values.last_mut().unwrap() = 0.0;
    let worst = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    (worst, traj.times[1] - traj.times[0])
}

#[test]
fn feedback_values_are_monotone() {
    let (b, vf) = solve_bundle(ProblemId::P1, Some(&[100, 100]), Some(32));
    for x in [[-2.5, 0.0], [-4.0, 3.0], [0.0, -3.0], [1.0, 2.5]] {
        let (worst, dt) = value_increase(&b.problem, &vf, &x);
        assert!(worst <= 1e-2 * dt, "increase {worst} at dt {dt} from {x:?}");
    }
}

#[test]
fn p3_structure_has_one_singular_arc() {
    let (b, vf) = solve_bundle(ProblemId::P3, None, None);
    let traj = feedback_trajectory(&b.problem, &vf, &b.initial_state, &FeedbackConfig::default()).unwrap();
    assert!(traj.arrived);
    let est = estimate_structure(&b.problem, &traj, vf.grid.spacing(), &StructureConfig::default());
    assert_eq!(est.singular_arcs.len(), 1, "{est:?}");
    let (a, c) = est.singular_arcs[0];
    assert_abs_diff_eq!(a, 0.02, epsilon = 0.01);
    assert_abs_diff_eq!(c, 0.06, epsilon = 0.01);
}

fn constant_trajectory(n: usize, u: f64) -> Trajectory {
    Trajectory {
        times: (0..=n).map(|i| i as f64 * 0.01).collect(),
        states: vec![vec![1.0, 0.0, 1.0]; n + 1],
        controls: vec![vec![u]; n],
        arrived: true,
        arrival_time: Some(n as f64 * 0.01),
    }
}

#[test]
fn constant_control_has_no_structure() {
    let b = make_problem(ProblemId::P3).unwrap();
    for u in [0.0, 1.0] {
        let est = estimate_structure(&b.problem, &constant_trajectory(50, u), &[1e-3; 3], &StructureConfig::default());
        assert_eq!(est, StructureEstimate::default());
    }
}

fn guess(final_time: f64, p: &[f64]) -> CostateGuess {
    CostateGuess { candidates: vec![p.to_vec()], final_time, source: Vec::new() }
}

#[test]
fn initial_guess_layouts() {
    let b = make_problem(ProblemId::P1).unwrap();
    let z = make_initial_guess(&guess(4.89, &[-0.05, -1.0]), 0, &StructureEstimate::default(), &b.shooting).unwrap();
    assert_eq!(z, vec![4.89, -0.05, -1.0]);
    assert!(make_initial_guess(&guess(4.89, &[-0.05, -1.0]), 1, &StructureEstimate::default(), &b.shooting).is_err());

    let b = make_problem(ProblemId::P3).unwrap();
    let est = StructureEstimate { singular_arcs: vec![(0.02, 0.06)], ..Default::default() };
    let z = make_initial_guess(&guess(0.17, &[-7.79, -0.31, 0.04]), 0, &est, &b.shooting).unwrap();
    assert_eq!(z, vec![0.17, -7.79, -0.31, 0.04, 0.02, 0.06]);
    let none = StructureEstimate::default();
    assert!(matches!(
        make_initial_guess(&guess(0.17, &[-7.79, -0.31, 0.04]), 0, &none, &b.shooting),
        Err(Error::StructureMismatch { expected: 1, found: 0 })
    ));

    let b = make_problem(ProblemId::P4).unwrap();
    let est = StructureEstimate { constrained_arcs: vec![vec![(1.35, 5.6)]], ..Default::default() };
    let z = make_initial_guess(&guess(7.5, &[-0.51, -0.24, -0.89, -0.61]), 0, &est, &b.shooting).unwrap();
    assert_eq!(z, vec![7.5, -0.51, -0.24, -0.89, -0.61, 1.35, 5.6, 0.1]);
}

#[test]
fn search_shrinks_the_ball_near_the_boundary() {
    let grid = square_grid(41);
    let tf = synthetic(&grid, |x| (x[0] - 1.0).hypot(x[1]));
    let k = grid.k();
    let cfg = GuessConfig::default();
    let far = search_directions(&tf, &[-1.0, 0.0], &cfg).unwrap();
    assert_abs_diff_eq!(far.delta, cfg.delta_cells * k, epsilon = 1e-12);
    let near = search_directions(&tf, &[-2.0 + 1.5 * k, 0.0], &cfg).unwrap();
    assert!(near.delta < far.delta);
    assert_eq!(near.directions.len(), 1);
}

// Control profile: upper bound, then a chattering or interior stretch, then
// the lower bound. Chattering alternates every sample at any resolution.
fn profile(dt: f64, end: f64, entry: f64, exit: f64, interior: bool) -> Trajectory {
    let n = (end / dt).round() as usize;
    let controls: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let u = if t < entry {
                1.0
            } else if t < exit {
                if interior {
                    0.5
                } else {
                    (i % 2) as f64
                }
            } else {
                0.0
            };
            vec![u]
        })
        .collect();
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    // altitude rises, then runs along r = 1.005 over the arc
    let states = times.iter().map(|&t| vec![1.0 + 0.005 * (t / entry).min(1.0), 0.0, 1.0]).collect();
    Trajectory { times, states, controls, arrived: true, arrival_time: Some(n as f64 * dt) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structure_invariant_under_subsampling(
        entry in 0.1f64..0.3,
        len in 0.15f64..0.4,
        factor in 2usize..4,
        interior in any::<bool>(),
    ) {
        let b = make_problem(ProblemId::P3).unwrap();
        let cfg = StructureConfig::default();
        let fine = 1e-3;
        let coarse = fine * factor as f64;
        let exit = entry + len;
        let a = estimate_structure(&b.problem, &profile(fine, 1.0, entry, exit, interior), &[1e-3; 3], &cfg);
        let c = estimate_structure(&b.problem, &profile(coarse, 1.0, entry, exit, interior), &[1e-3; 3], &cfg);
        let slack = cfg.window as f64 * coarse;
        prop_assert_eq!(a.singular_arcs.len(), 1);
        prop_assert_eq!(c.singular_arcs.len(), 1);
        prop_assert!((a.singular_arcs[0].0 - c.singular_arcs[0].0).abs() <= slack);
        prop_assert!((a.singular_arcs[0].1 - c.singular_arcs[0].1).abs() <= slack);
        prop_assert!((a.singular_arcs[0].0 - entry).abs() <= slack);
        prop_assert!((a.singular_arcs[0].1 - exit).abs() <= slack);
        prop_assert_eq!(a.switches.len(), c.switches.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn monotone_feedback_on_eikonal(tx in -0.7f64..0.7, ty in -0.7f64..0.7, sx in -0.9f64..0.9, sy in -0.9f64..0.9) {
        let (p, vf) = eikonal_2d(61, [tx, ty], 32);
        let (worst, dt) = value_increase(&p, &vf, &[sx, sy]);
        prop_assert!(worst <= 1e-2 * dt, "increase {} at dt {}", worst, dt);
    }
}
