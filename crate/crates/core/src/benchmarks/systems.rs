//! Vector fields of the four reference problems.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::problem::{normalize_angle, ControlSystem, StateConstraint};

/// Goddard model parameters.
pub const GODDARD_B: f64 = 2.0;
pub const GODDARD_TMAX: f64 = 3.5;
pub const GODDARD_DRAG: f64 = 310.0;
pub const GODDARD_BETA: f64 = 500.0;

/// P1 speed: 1 below `y₂ = 1`, `(y₂ − 1)² + 1` above.
pub fn p1_speed(y2: f64) -> f64 {
    if y2 <= 1.0 {
        1.0
    } else {
        (y2 - 1.0).powi(2) + 1.0
    }
}

fn p1_speed_slope(y2: f64) -> f64 {
    if y2 <= 1.0 {
        0.0
    } else {
        2.0 * (y2 - 1.0)
    }
}

/// P1: heading control with a speed that grows above `y₂ = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZermeloArc;

impl ControlSystem for ZermeloArc {
    fn velocity(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        let c = p1_speed(y[1]);
        let (s, co) = u[0].sin_cos();
        out[0] = c * co;
        out[1] = c * s;
    }

    fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn costate_rate(&self, y: &[f64], p: &[f64], u: &[f64], _p0: f64, out: &mut [f64]) -> bool {
        let (s, co) = u[0].sin_cos();
        out[0] = 0.0;
        out[1] = -p1_speed_slope(y[1]) * (p[0] * co + p[1] * s);
        true
    }

    fn kink_functions(&self, y: &[f64], out: &mut Vec<f64>) {
        out.push(y[1] - 1.0);
    }
}

/// P2: controlled Van der Pol oscillator.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPol;

impl ControlSystem for VanDerPol {
    fn velocity(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = y[1];
        out[1] = -y[0] + y[1] * (1.0 - y[0] * y[0]) + u[0];
    }

    fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn costate_rate(&self, y: &[f64], p: &[f64], _u: &[f64], _p0: f64, out: &mut [f64]) -> bool {
        out[0] = -p[1] * (-1.0 - 2.0 * y[0] * y[1]);
        out[1] = -(p[0] + p[1] * (1.0 - y[0] * y[0]));
        true
    }

    fn switching_rate(&self, y: &[f64], p: &[f64]) -> Option<f64> {
        // ψ = p₂
        Some(-(p[0] + p[1] * (1.0 - y[0] * y[0])))
    }
}

/// P3: vertical Goddard ascent, state `(r, v, m)`, fuel-optimal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Goddard;

impl Goddard {
    pub fn drag(r: f64, v: f64) -> f64 {
        GODDARD_DRAG * v * v * (-GODDARD_BETA * (r - 1.0)).exp()
    }

    /// `bD + D_v`, the combination entering `ψ̇`.
    fn w(r: f64, v: f64) -> f64 {
        let e = GODDARD_DRAG * (-GODDARD_BETA * (r - 1.0)).exp();
        e * (GODDARD_B * v * v + 2.0 * v)
    }

    fn w_v(r: f64, v: f64) -> f64 {
        let e = GODDARD_DRAG * (-GODDARD_BETA * (r - 1.0)).exp();
        e * (2.0 * GODDARD_B * v + 2.0)
    }

    /// `ψ̈ = a + b·u` along extremals.
    pub fn switching_acceleration(y: &[f64], p: &[f64]) -> (f64, f64) {
        let (r, v, m) = (y[0], y[1], y[2]);
        let (pr, pv) = (p[0], p[1]);
        let t = GODDARD_TMAX;
        let b = GODDARD_B;
        let d = Self::drag(r, v);
        let w = Self::w(r, v);
        let wv = Self::w_v(r, v);
        // partial derivatives of ψ̇ = T(−p_r/m + p_v W/m²)
        let phi_r = -GODDARD_BETA * t * pv * w / (m * m);
        let phi_v = t * pv * wv / (m * m);
        let phi_m = t * (pr / (m * m) - 2.0 * pv * w / (m * m * m));
        let phi_pr = -t / m;
        let phi_pv = t * w / (m * m);
        let pr_dot = -2.0 * pv / (r * r * r) - GODDARD_BETA * pv * d / m;
        let pv_dot = -pr + pv * 2.0 * GODDARD_DRAG * v * (-GODDARD_BETA * (r - 1.0)).exp() / m;
        let rate = |u: f64| {
            let v_dot = -1.0 / (r * r) + (t * u - d) / m;
            let m_dot = -b * t * u;
            phi_r * v + phi_v * v_dot + phi_m * m_dot + phi_pr * pr_dot + phi_pv * pv_dot
        };
        let a = rate(0.0);
        (a, rate(1.0) - a)
    }
}

impl ControlSystem for Goddard {
    fn velocity(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        let (r, v, m) = (y[0], y[1], y[2]);
        let thrust = GODDARD_TMAX * u[0];
        out[0] = v;
        out[1] = -1.0 / (r * r) + (thrust - Self::drag(r, v)) / m;
        out[2] = -GODDARD_B * thrust;
    }

    fn running_cost(&self, _y: &[f64], u: &[f64]) -> f64 {
        GODDARD_B * GODDARD_TMAX * u[0]
    }

    fn costate_rate(&self, y: &[f64], p: &[f64], u: &[f64], _p0: f64, out: &mut [f64]) -> bool {
        let (r, v, m) = (y[0], y[1], y[2]);
        let d = Self::drag(r, v);
        let dv = 2.0 * GODDARD_DRAG * v * (-GODDARD_BETA * (r - 1.0)).exp();
        let thrust = GODDARD_TMAX * u[0];
        out[0] = -p[1] * (2.0 / (r * r * r) + GODDARD_BETA * d / m);
        out[1] = -(p[0] - p[1] * dv / m);
        out[2] = p[1] * (thrust - d) / (m * m);
        true
    }

    fn switching_rate(&self, y: &[f64], p: &[f64]) -> Option<f64> {
        let m = y[2];
        Some(GODDARD_TMAX / m * (-p[0] + p[1] * Self::w(y[0], y[1]) / m))
    }

    fn singular_control(&self, y: &[f64], p: &[f64]) -> Option<Result<f64>> {
        let (a, b) = Self::switching_acceleration(y, p);
        if b.abs() < 1e-10 {
            return Some(Err(Error::SingularUndefined));
        }
        Some(Ok(-a / b))
    }
}

/// P4: double integrator in the plane steered by the acceleration heading.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlanarDoubleIntegrator;

impl ControlSystem for PlanarDoubleIntegrator {
    fn velocity(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        let (s, c) = u[0].sin_cos();
        out[0] = y[2];
        out[1] = y[3];
        out[2] = c;
        out[3] = s;
    }

    fn running_cost(&self, _y: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn costate_rate(&self, _y: &[f64], p: &[f64], _u: &[f64], _p0: f64, out: &mut [f64]) -> bool {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -p[0];
        out[3] = -p[1];
        true
    }
}

/// `y₃ − 1 ≤ 0`: first-order bound on the horizontal velocity of P4.
#[derive(Debug, Clone, Copy)]
pub struct VelocityBound {
    pub axis: usize,
    pub bound: f64,
    /// Axis of the other acceleration component.
    pub other: usize,
}

impl StateConstraint for VelocityBound {
    fn value(&self, y: &[f64]) -> f64 {
        y[self.axis] - self.bound
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; y.len()];
        g[self.axis] = 1.0;
        g
    }

    fn order(&self) -> usize {
        1
    }

    fn derivative(&self, _k: usize, _y: &[f64], u: &[f64]) -> f64 {
        u[0].cos()
    }

    fn boundary_control(&self, _y: &[f64], p: &[f64], branch: Option<bool>) -> Result<(Vec<f64>, f64)> {
        // cos u = 0 keeps the bound; H minimized by sin u = −sign(p_other)
        let positive = branch.unwrap_or(p[self.other] > 0.0);
        let u = if positive { -FRAC_PI_2 } else { FRAC_PI_2 };
        Ok((vec![normalize_angle(u)], -p[self.axis]))
    }

    fn boundary_switch(&self, _y: &[f64], p: &[f64]) -> Option<f64> {
        Some(p[self.other])
    }

    fn junction_residual(&self, _y: &[f64], p: &[f64]) -> Option<f64> {
        Some(p[self.axis])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goddard_closed_form_switching_rate_matches_flow_derivative() {
        let y = [1.003, 0.06, 0.8];
        let p = [-7.2, -0.28, 0.045];
        let sys = Goddard;
        let psi = |y: &[f64], p: &[f64]| GODDARD_TMAX * ((1.0 - p[2]) * GODDARD_B + p[1] / y[2]);
        for u in [0.0, 0.3, 1.0] {
            let mut f = [0.0; 3];
            let mut g = [0.0; 3];
            sys.velocity(&y, &[u], &mut f);
            sys.costate_rate(&y, &p, &[u], 1.0, &mut g);
            let eps = 1e-6;
            let yp: Vec<f64> = (0..3).map(|i| y[i] + eps * f[i]).collect();
            let pp: Vec<f64> = (0..3).map(|i| p[i] + eps * g[i]).collect();
            let ym: Vec<f64> = (0..3).map(|i| y[i] - eps * f[i]).collect();
            let pm: Vec<f64> = (0..3).map(|i| p[i] - eps * g[i]).collect();
            let fd = (psi(&yp, &pp) - psi(&ym, &pm)) / (2.0 * eps);
            let closed = sys.switching_rate(&y, &p).unwrap();
            assert!((fd - closed).abs() < 1e-6 * (1.0 + closed.abs()), "u={u}: {fd} vs {closed}");
        }
    }

    #[test]
    fn goddard_switching_acceleration_matches_flow_derivative() {
        let y = [1.004, 0.07, 0.75];
        let p = [-7.0, -0.27, 0.05];
        let sys = Goddard;
        let phi = |y: &[f64], p: &[f64]| sys.switching_rate(y, p).unwrap();
        let (a, b) = Goddard::switching_acceleration(&y, &p);
        for u in [0.0, 0.5, 1.0] {
            let mut f = [0.0; 3];
            let mut g = [0.0; 3];
            sys.velocity(&y, &[u], &mut f);
            sys.costate_rate(&y, &p, &[u], 1.0, &mut g);
            let eps = 1e-6;
            let yp: Vec<f64> = (0..3).map(|i| y[i] + eps * f[i]).collect();
            let pp: Vec<f64> = (0..3).map(|i| p[i] + eps * g[i]).collect();
            let ym: Vec<f64> = (0..3).map(|i| y[i] - eps * f[i]).collect();
            let pm: Vec<f64> = (0..3).map(|i| p[i] - eps * g[i]).collect();
            let fd = (phi(&yp, &pp) - phi(&ym, &pm)) / (2.0 * eps);
            let closed = a + b * u;
            assert!((fd - closed).abs() < 1e-5 * (1.0 + closed.abs()), "u={u}: {fd} vs {closed}");
        }
    }

    #[test]
    fn drag_value() {
        assert!((Goddard::drag(1.0, 0.1) - 3.1).abs() < 1e-12);
    }

    #[test]
    fn p1_speed_is_continuous_at_one() {
        assert_eq!(p1_speed(1.0), 1.0);
        assert!((p1_speed(1.0 + 1e-9) - 1.0).abs() < 1e-15);
    }
}
