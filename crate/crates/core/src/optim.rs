//! Box-constrained quasi-Newton (BFGS) minimisation with central-difference
//! gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Maximum number of quasi-Newton iterations (one gradient each).
    pub max_iterations: usize,
    /// Stop once the relative decrease of the objective falls below this and
    /// the projected gradient is small.
    pub rel_tol: f64,
    /// Stop outright once `‖g‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Largest allowed change of any coordinate in one step.
    pub max_step: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tol: 1e-6,
            grad_tol: 1e-7,
            max_step: 2.0,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub enum BfgsFailure<E> {
    Objective(E),
    /// The start point could not be evaluated.
    NonFiniteStart,
    NotConverged {
        value: f64,
        gradient_norm: f64,
        iterations: usize,
    },
}

/// Objective values that are not finite are treated as infeasible and make the
/// line search back off; an `Err` aborts the minimisation.
pub fn minimize<E, F, C>(
    mut objective: F,
    mut accept: C,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &BfgsOptions,
) -> Result<Minimum, BfgsFailure<E>>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    C: FnMut(&[f64]) -> Result<(), E>,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| -> Result<f64, BfgsFailure<E>> {
        *evaluations += 1;
        let v = objective(x).map_err(BfgsFailure::Objective)?;
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    };

    let mut x = x0.to_vec();
    project(&mut x);
    let mut fx = eval(&x, &mut evaluations)?;
    if !fx.is_finite() {
        return Err(BfgsFailure::NonFiniteStart);
    }

    let gradient = |x: &[f64], eval: &mut dyn FnMut(&[f64]) -> Result<f64, BfgsFailure<E>>| {
        let mut g = DVector::zeros(n);
        let mut probe = x.to_vec();
        for i in 0..n {
            let h = options.fd_step * x[i].abs().max(1.0);
            let up = (x[i] + h).min(upper[i]);
            let dn = (x[i] - h).max(lower[i]);
            probe[i] = up;
            let fu = eval(&probe)?;
            probe[i] = dn;
            let fd = eval(&probe)?;
            probe[i] = x[i];
            g[i] = if up > dn && fu.is_finite() && fd.is_finite() {
                (fu - fd) / (up - dn)
            } else {
                0.0
            };
        }
        Ok::<_, BfgsFailure<E>>(g)
    };
    let projected_norm = |x: &[f64], g: &DVector<f64>| {
        (0..n)
            .map(|i| {
                let at_lower = x[i] <= lower[i] && g[i] > 0.0;
                let at_upper = x[i] >= upper[i] && g[i] < 0.0;
                if at_lower || at_upper {
                    0.0
                } else {
                    g[i].abs()
                }
            })
            .fold(0.0, f64::max)
    };

    let mut g = gradient(&x, &mut |p| eval(p, &mut evaluations))?;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut pg = projected_norm(&x, &g);
    let mut stalled = 0usize;

    for iteration in 1..=options.max_iterations {
        let scale = fx.abs().max(1.0);
        if pg <= options.grad_tol * scale {
            return Ok(Minimum {
                x,
                value: fx,
                gradient_norm: pg,
                iterations: iteration - 1,
                evaluations,
            });
        }

        let mut dir = -(&h_inv * &g);
        // Do not push into active bounds.
        for i in 0..n {
            if (x[i] <= lower[i] && dir[i] < 0.0) || (x[i] >= upper[i] && dir[i] > 0.0) {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            for i in 0..n {
                if (x[i] <= lower[i] && dir[i] < 0.0) || (x[i] >= upper[i] && dir[i] > 0.0) {
                    dir[i] = 0.0;
                }
            }
        }
        let longest = dir.amax();
        let mut alpha = if longest > options.max_step {
            options.max_step / longest
        } else {
            1.0
        };
        let slope = dir.dot(&g);

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * dir[i]).collect();
            project(&mut trial);
            let ft = eval(&trial, &mut evaluations)?;
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            // No descent along the quasi-Newton direction: restart from steepest
            // descent once, otherwise accept the point if the gradient is small.
            if h_inv != DMatrix::identity(n, n) {
                h_inv = DMatrix::identity(n, n);
                continue;
            }
            if pg <= 1e-4 * scale {
                return Ok(Minimum {
                    x,
                    value: fx,
                    gradient_norm: pg,
                    iterations: iteration,
                    evaluations,
                });
            }
            return Err(BfgsFailure::NotConverged {
                value: fx,
                gradient_norm: pg,
                iterations: iteration,
            });
        };
        accept(&x_new).map_err(BfgsFailure::Objective)?;

        let g_new = gradient(&x_new, &mut |p| eval(p, &mut evaluations))?;
        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        let rel_change = (fx - f_new).abs() / scale;
        x = x_new;
        fx = f_new;
        g = g_new;
        pg = projected_norm(&x, &g);
        stalled = if rel_change <= options.rel_tol && pg <= 1e-5 * fx.abs().max(1.0) {
            stalled + 1
        } else {
            0
        };
        if stalled >= 3 {
            return Ok(Minimum {
                x,
                value: fx,
                gradient_norm: pg,
                iterations: iteration,
                evaluations,
            });
        }
    }
    Err(BfgsFailure::NotConverged {
        value: fx,
        gradient_norm: pg,
        iterations: options.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        f: impl Fn(&[f64]) -> f64,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Minimum {
        minimize::<(), _, _>(
            |x| Ok(f(x)),
            |_| Ok(()),
            x0,
            lower,
            upper,
            &BfgsOptions::default(),
        )
        .unwrap_or_else(|_| panic!("did not converge"))
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = run(f, &[-1.2, 1.0], &[-10.0, -10.0], &[10.0, 10.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 0.5).powi(2);
        let m = run(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(m.x[0], -1.0);
        assert!((m.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1] + 2.0 * x[1] * x[1] - x[0] + 4.0;
        let m = run(f, &[5.0, -5.0], &[-100.0; 2], &[100.0; 2]);
        // solve [6 1; 1 4] x = [1 0]
        let det = 23.0;
        assert!((m.x[0] - 4.0 / det).abs() < 1e-7);
        assert!((m.x[1] + 1.0 / det).abs() < 1e-7);
    }

    #[test]
    fn propagates_objective_error() {
        let r = minimize(
            |x: &[f64]| if x[0] > 0.5 { Err("boom") } else { Ok(-x[0]) },
            |_| Ok(()),
            &[0.0],
            &[-1.0],
            &[1.0],
            &BfgsOptions::default(),
        );
        assert!(matches!(r, Err(BfgsFailure::Objective("boom"))));
    }
}
