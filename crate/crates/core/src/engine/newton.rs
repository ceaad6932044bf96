//! Damped Newton iteration with forward-difference Jacobians.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence when `‖r‖∞ < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Halvings tried per iteration before accepting a non-decreasing step.
    pub max_backtrack: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            max_backtrack: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖r‖∞` at the initial guess and after every iteration.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("singular Jacobian at iteration {iteration} (best residual {best_residual:.3e})")]
    SingularJacobian {
        iteration: usize,
        best: Vec<f64>,
        best_residual: f64,
        residual_history: Vec<f64>,
    },
    #[error("no convergence after {iterations} iterations (best residual {best_residual:.3e})")]
    MaxIterations {
        iterations: usize,
        best: Vec<f64>,
        best_residual: f64,
        residual_history: Vec<f64>,
    },
    #[error("residual is not finite at the initial guess")]
    NonFiniteStart,
}

impl NewtonError {
    pub fn best(&self) -> Option<&[f64]> {
        match self {
            NewtonError::SingularJacobian { best, .. } | NewtonError::MaxIterations { best, .. } => Some(best),
            NewtonError::NonFiniteStart => None,
        }
    }
}

fn inf_norm(r: &[f64]) -> f64 {
    r.iter()
        .fold(0.0, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

/// Forward-difference Jacobian with step `√ε·max(|x_j|, 1)`.
pub fn fd_jacobian<F>(f: &mut F, x: &[f64], r0: &[f64], jac: &mut DMatrix<f64>)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let m = r0.len();
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; m];
    let sq = f64::EPSILON.sqrt();
    for j in 0..n {
        let h = sq * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let h = xp[j] - x[j];
        f(&xp, &mut rp);
        for i in 0..m {
            jac[(i, j)] = (rp[i] - r0[i]) / h;
        }
        xp[j] = x[j];
    }
}

/// Solves `f(x) = 0` for square systems. Non-finite residual entries mark
/// points outside the domain and are rejected by the line search.
pub fn newton_solve<F>(mut f: F, x0: &[f64], opts: &NewtonOptions) -> Result<NewtonReport, NewtonError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    f(&x, &mut r);
    let mut norm = inf_norm(&r);
    if !norm.is_finite() {
        return Err(NewtonError::NonFiniteStart);
    }
    let mut history = vec![norm];
    let mut jac = DMatrix::zeros(n, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];

    for iter in 0..opts.max_iter {
        if norm < opts.tol {
            return Ok(NewtonReport {
                solution: x,
                iterations: iter,
                residual_history: history,
            });
        }
        fd_jacobian(&mut f, &x, &r, &mut jac);
        let lu = jac.clone().lu();
        let u = lu.u();
        let diag = u.diagonal();
        let (umin, umax) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v.abs()), b.max(v.abs())));
        let step = if umax > 0.0 && umin > 1e-15 * umax {
            lu.solve(&DVector::from_column_slice(&r))
        } else {
            None
        };
        let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
            return Err(NewtonError::SingularJacobian {
                iteration: iter,
                best: x,
                best_residual: norm,
                residual_history: history,
            });
        };

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_backtrack {
            for i in 0..n {
                trial[i] = x[i] - alpha * step[i];
            }
            f(&trial, &mut r_trial);
            let tn = inf_norm(&r_trial);
            if tn < norm || (tn.is_finite() && alpha == 1.0 && tn < opts.tol) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(NewtonError::MaxIterations {
                iterations: iter + 1,
                best: x,
                best_residual: norm,
                residual_history: history,
            });
        }
        x.copy_from_slice(&trial);
        r.copy_from_slice(&r_trial);
        norm = inf_norm(&r);
        history.push(norm);
    }
    if norm < opts.tol {
        return Ok(NewtonReport {
            solution: x,
            iterations: opts.max_iter,
            residual_history: history,
        });
    }
    Err(NewtonError::MaxIterations {
        iterations: opts.max_iter,
        best: x,
        best_residual: norm,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_root_of_four() {
        let rep = newton_solve(
            |x, r| r[0] = x[0] * x[0] - 4.0,
            &[3.0],
            &NewtonOptions {
                tol: 1e-14,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((rep.solution[0] - 2.0).abs() < 1e-12);
        // quadratic convergence: r ≈ 4e near the root
        let e: Vec<f64> = rep.residual_history.iter().map(|r| r / 4.0).collect();
        for w in e.windows(2) {
            if w[0] < 1e-2 && w[1] > 0.0 {
                assert!(w[1] / (w[0] * w[0]) < 1.0, "{e:?}");
            }
        }
    }

    #[test]
    fn linear_system_converges_in_one_step() {
        let rep = newton_solve(
            |x, r| {
                r[0] = 2.0 * x[0] + x[1] - 3.0;
                r[1] = x[0] - x[1] + 0.5;
            },
            &[10.0, -7.0],
            &NewtonOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((rep.solution[0] - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn failures_are_distinct() {
        let singular = newton_solve(
            |x, r| {
                r[0] = x[0] + x[1] - 1.0;
                r[1] = 2.0 * x[0] + 2.0 * x[1] - 5.0;
            },
            &[0.0, 0.0],
            &NewtonOptions::default(),
        );
        assert!(matches!(singular, Err(NewtonError::SingularJacobian { .. })));

        let no_root = newton_solve(
            |x, r| r[0] = x[0] * x[0] + 1.0,
            &[0.5],
            &NewtonOptions {
                max_iter: 20,
                ..Default::default()
            },
        );
        match no_root {
            Err(NewtonError::MaxIterations {
                residual_history,
                best_residual,
                ..
            }) => {
                assert!(!residual_history.is_empty());
                assert!(best_residual >= 1.0);
            }
            Err(NewtonError::SingularJacobian { best_residual, .. }) => assert!(best_residual >= 1.0),
            other => panic!("{other:?}"),
        }
    }
}
