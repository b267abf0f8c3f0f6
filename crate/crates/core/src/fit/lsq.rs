//! Levenberg–Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_iter: usize,
    /// Stop when `‖δ‖ ≤ tol · (‖p‖ + tol)`.
    pub tol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqOutcome {
    pub params: DVector<f64>,
    /// `½‖r‖²` at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `JᵀJ` at `params`.
    pub normal: DMatrix<f64>,
}

/// A residual vector and its Jacobian at one parameter point.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
}

pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    p0: DVector<f64>,
    opts: &LsqOptions,
) -> LsqOutcome {
    let mut p = p0;
    let mut r = problem.residuals(&p);
    let mut cost = 0.5 * r.norm_squared();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let mut jac = problem.jacobian(&p);
    while iterations < opts.max_iter {
        iterations += 1;
        if !cost.is_finite() {
            break;
        }
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-15 * (1.0 + r.amax()) {
            converged = true;
            break;
        }

        let mut accepted = false;
        while mu < 1e20 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let delta = -chol.solve(&grad);
            let trial = &p + &delta;
            let r_trial = problem.residuals(&trial);
            let c_trial = 0.5 * r_trial.norm_squared();
            if c_trial.is_finite() && c_trial <= cost {
                let small = delta.norm() <= opts.tol * (p.norm() + opts.tol);
                p = trial;
                r = r_trial;
                cost = c_trial;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent left at any damping: a numerical stationary point.
            converged = grad.amax() <= 1e-8 * (1.0 + r.norm());
            break;
        }
        jac = problem.jacobian(&p);
        if converged {
            break;
        }
    }
    let normal = jac.transpose() * &jac;
    LsqOutcome {
        params: p,
        cost,
        iterations,
        converged,
        normal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exp {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl Problem for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(
                self.t.len(),
                self.t
                    .iter()
                    .zip(&self.y)
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            )
        }
        fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_fn(self.t.len(), 2, |i, k| {
                let e = (-p[1] * self.t[i]).exp();
                if k == 0 {
                    e
                } else {
                    -p[0] * self.t[i] * e
                }
            })
        }
    }

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.2).collect();
        let y = t.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let out = minimize(
            &Exp { t, y },
            DVector::from_vec(vec![1.0, 0.1]),
            &LsqOptions::default(),
        );
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-9);
        assert!((out.params[1] - 0.7).abs() < 1e-9);
    }
}
