//! Powell hybrid (dogleg trust region) solver for square nonlinear systems.
//!
//! Forward-difference Jacobian, Broyden rank-one updates between
//! re-evaluations, and MINPACK-style scaling and radius control.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    /// Stop when `‖F‖∞` drops below this.
    pub ftol: f64,
    /// Stop when the trust radius shrinks below `xtol·‖D x‖`.
    pub xtol: f64,
    pub max_iterations: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Initial trust radius factor.
    pub factor: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig { ftol: 1e-10, xtol: 1e-14, max_iterations: 200, fd_step: 1e-7, factor: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutcome {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// `‖F(x)‖∞`.
    pub norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> Counted<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluations += 1;
        let v = (self.f)(x.as_slice())?;
        if v.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: v.len() });
        }
        if v.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(DVector::from_vec(v))
    }

    fn jacobian(&mut self, x: &DVector<f64>, fx: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = rel * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let col = match self.eval(&xp) {
                Ok(fp) => (fp - fx) / h,
                Err(_) => {
                    // forward point infeasible: try the other side
                    xp[j] = x[j] - h;
                    let fm = self.eval(&xp)?;
                    (fx - fm) / h
                }
            };
            jac.set_column(j, &col);
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(jac)
    }
}

fn newton_step(jac: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = -f;
    if let Some(step) = jac.clone().lu().solve(&rhs) {
        if step.iter().all(|v| v.is_finite()) {
            return Ok(step);
        }
    }
    // rank deficient: least-squares step
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || !smax.is_finite() {
        return Err(Error::SingularJacobian);
    }
    svd.solve(&rhs, smax * 1e-13).map_err(|_| Error::SingularJacobian)
}

/// Dogleg step in scaled variables `z = D·x` within radius `delta`.
fn dogleg(jac: &DMatrix<f64>, diag: &DVector<f64>, f: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let gn = newton_step(jac, f)?;
    let gn_scaled = gn.component_mul(diag);
    if gn_scaled.norm() <= delta {
        return Ok(gn);
    }
    // gradient of ½‖F‖² with respect to z
    let g = (jac.transpose() * f).component_div(diag);
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return Ok(gn * (delta / gn_scaled.norm()));
    }
    let jg = jac * g.component_div(diag);
    let jg2 = jg.norm_squared();
    let cauchy = if jg2 > 0.0 { -&g * (gnorm * gnorm / jg2) } else { -&g * (delta / gnorm) };
    let z = if cauchy.norm() >= delta {
        -&g * (delta / gnorm)
    } else {
        // ‖c + τ(n − c)‖ = delta
        let diff = &gn_scaled - &cauchy;
        let a = diff.norm_squared();
        let b = 2.0 * cauchy.dot(&diff);
        let c = cauchy.norm_squared() - delta * delta;
        let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
        &cauchy + diff * tau
    };
    Ok(z.component_div(diag))
}

/// Solves `F(x) = 0` from `x0`. Errors only when `F(x0)` itself cannot be
/// evaluated or the Jacobian is unusable; otherwise returns the best iterate.
pub fn solve<F>(f: F, x0: &[f64], cfg: &HybridConfig) -> Result<HybridOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut fun = Counted { f, evaluations: 0 };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = fun.eval(&x)?;
    let n = x.len();
    let mut iterations = 0;
    let finish = |x: DVector<f64>, fx: DVector<f64>, iterations, evaluations, cfg: &HybridConfig| {
        let norm = inf_norm(&fx);
        HybridOutcome {
            x: x.as_slice().to_vec(),
            residual: fx.as_slice().to_vec(),
            norm,
            iterations,
            evaluations,
            converged: norm < cfg.ftol,
        }
    };
    if n == 0 || inf_norm(&fx) < cfg.ftol {
        let e = fun.evaluations;
        return Ok(finish(x, fx, 0, e, cfg));
    }

    let mut jac = fun.jacobian(&x, &fx, cfg.fd_step)?;
    let mut diag = DVector::from_fn(n, |j, _| {
        let c = jac.column(j).norm();
        if c > 0.0 {
            c
        } else {
            1.0
        }
    });
    let xnorm = x.component_mul(&diag).norm();
    let mut delta = if xnorm > 0.0 { cfg.factor * xnorm } else { cfg.factor };
    let (mut ncsuc, mut ncfail, mut nslow) = (0usize, 0usize, 0usize);
    let mut refreshed = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let fnorm = fx.norm();
        let step = dogleg(&jac, &diag, &fx, delta)?;
        let pnorm = step.component_mul(&diag).norm();
        if iterations == 1 {
            delta = delta.min(pnorm.max(f64::MIN_POSITIVE));
        }
        let x_trial = &x + &step;
        let trial = fun.eval(&x_trial);
        let predicted_f = &fx + &jac * &step;
        let pred = 1.0 - (predicted_f.norm() / fnorm).powi(2);
        let (ratio, f_trial) = match trial {
            Ok(ft) => {
                let ared = 1.0 - (ft.norm() / fnorm).powi(2);
                (if pred > 0.0 { ared / pred } else { 0.0 }, Some(ft))
            }
            Err(_) => (-1.0, None),
        };

        if ratio < 0.1 {
            ncsuc = 0;
            ncfail += 1;
            delta *= 0.5;
        } else {
            ncfail = 0;
            ncsuc += 1;
            if ratio >= 0.5 || ncsuc > 1 {
                delta = delta.max(pnorm / 0.5);
            }
            if (ratio - 1.0).abs() <= 0.1 {
                delta = pnorm / 0.5;
            }
        }

        let accepted = ratio >= 1e-4;
        if let Some(ft) = &f_trial {
            // Broyden update with the observed secant, accepted or not
            let sn = step.norm_squared();
            if sn > 0.0 {
                let y = ft - &fx - &jac * &step;
                jac += y * step.transpose() / sn;
            }
        }
        if accepted {
            let old = fnorm;
            x = x_trial;
            fx = f_trial.expect("accepted step has a residual");
            for j in 0..n {
                diag[j] = diag[j].max(jac.column(j).norm());
            }
            if fx.norm() < 0.99 * old {
                nslow = 0;
                refreshed = false;
            } else {
                nslow += 1;
            }
        } else {
            nslow += 1;
        }

        if inf_norm(&fx) < cfg.ftol {
            break;
        }
        if delta <= cfg.xtol * x.component_mul(&diag).norm() || nslow >= 20 {
            // one fresh Jacobian before giving up
            if refreshed {
                break;
            }
            jac = fun.jacobian(&x, &fx, cfg.fd_step)?;
            delta = (cfg.factor * x.component_mul(&diag).norm()).max(cfg.factor);
            refreshed = true;
            ncfail = 0;
            nslow = 0;
            continue;
        }
        if ncfail >= 2 {
            jac = fun.jacobian(&x, &fx, cfg.fd_step)?;
            ncfail = 0;
        }
    }
    let e = fun.evaluations;
    Ok(finish(x, fx, iterations, e, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_linear_system_in_one_step() {
        let out =
            solve(|x| Ok(vec![2.0 * x[0] + x[1] - 3.0, x[0] - x[1]]), &[0.0, 0.0], &HybridConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-10 && (out.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn solves_rosenbrock_system() {
        let out = solve(|x| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]), &[-1.2, 1.0], &HybridConfig::default())
            .unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn solves_powell_badly_scaled() {
        let out = solve(
            |x| Ok(vec![1e4 * x[0] * x[1] - 1.0, (-x[0]).exp() + (-x[1]).exp() - 1.0001]),
            &[0.0, 1.0],
            &HybridConfig::default(),
        )
        .unwrap();
        assert!(out.converged, "{out:?}");
    }

    #[test]
    fn reports_failure_without_root() {
        let out = solve(|x| Ok(vec![x[0] * x[0] + 1.0]), &[3.0], &HybridConfig::default()).unwrap();
        assert!(!out.converged);
        assert!(out.norm >= 1.0 - 1e-9);
    }

    #[test]
    fn initial_evaluation_error_propagates() {
        let r = solve(|_| Err(Error::NonFiniteState), &[1.0], &HybridConfig::default());
        assert!(matches!(r, Err(Error::NonFiniteState)));
    }
}
