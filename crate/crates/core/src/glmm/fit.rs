use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use super::problem::{GlmmProblem, LaplaceMode};
use super::{
    FitConfig, FitDiagnostics, FittedGlmm, GlmmCoefficients, GlmmError, MaternParams, NuMode,
    SiteEffect, Standardization, COEFFICIENT_NAMES, MODEL_FORMAT_VERSION, N_COEF,
    SEPARATION_LIMIT,
};
use crate::data::Dataset;
use crate::optim::{minimize, BfgsFailure, BfgsOptions};

const FIXED_NEWTON_MAX_ITER: usize = 100;
const LOG_SIGMA2_BOUNDS: (f64, f64) = (-10.0, 7.0);
/// Range bounds as multiples of the smallest and largest inter-site distance.
const RHO_BOUND_FACTOR: f64 = 20.0;
const BETA_BOUND: f64 = 1e3;

fn check_config(config: &FitConfig) -> Result<Vec<f64>, GlmmError> {
    if !(config.nugget_ratio.is_finite() && config.nugget_ratio >= 0.0) {
        return Err(GlmmError::Config("nugget_ratio must be finite and ≥ 0".into()));
    }
    if config.max_iterations == 0 {
        return Err(GlmmError::Config("max_iterations must be ≥ 1".into()));
    }
    if !(config.rel_tol.is_finite() && config.rel_tol > 0.0) {
        return Err(GlmmError::Config("rel_tol must be > 0".into()));
    }
    let nus = match &config.nu {
        NuMode::Fixed(nu) => vec![*nu],
        NuMode::Grid(nus) => nus.clone(),
    };
    if nus.is_empty() || nus.iter().any(|nu| !(nu.is_finite() && *nu > 0.0)) {
        return Err(GlmmError::Config("every ν must be finite and > 0".into()));
    }
    Ok(nus)
}

fn check_separation(beta: &[f64]) -> Result<(), GlmmError> {
    for (j, &b) in beta.iter().enumerate().take(N_COEF) {
        if b.abs() > SEPARATION_LIMIT {
            return Err(GlmmError::Separation {
                coefficient: COEFFICIENT_NAMES[j],
                value: b,
            });
        }
    }
    Ok(())
}

/// Fits the spatial mixed model (or a plain logistic regression when
/// `config.random_effects` is off).
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FittedGlmm, GlmmError> {
    let nus = check_config(config)?;
    let problem = GlmmProblem::new(dataset, config)?;
    let active: Vec<bool> = (0..N_COEF)
        .map(|j| problem.standardization.is_active(j))
        .collect();
    let fixed = fit_fixed(&problem, &active)?;

    if !config.random_effects {
        let (loglik, _, info) = problem.fixed_terms(&fixed.beta);
        let s = problem.n_sites();
        let matern = MaternParams {
            nu: nus[0],
            rho: typical_distance(&problem).unwrap_or(1.0),
            sigma2: 0.0,
            nugget: 0.0,
        };
        return Ok(assemble(
            &problem,
            &active,
            &fixed.beta,
            &info,
            matern,
            vec![0.0; s],
            vec![0.0; s],
            vec![0.0; s],
            loglik,
            FitDiagnostics {
                iterations: fixed.iterations,
                evaluations: fixed.iterations,
                gradient_norm: fixed.gradient_norm,
                nu_profile: vec![],
            },
        ));
    }

    if problem.n_sites() < 2 {
        return Err(GlmmError::TooFewLocations {
            needed: 2,
            found: problem.n_sites(),
        });
    }

    let mut best: Option<SpatialFit> = None;
    let mut profile = Vec::new();
    for &nu in &nus {
        let candidate = fit_spatial(&problem, &active, &fixed.beta, nu, config)?;
        profile.push((nu, candidate.log_marginal));
        if best.as_ref().is_none_or(|b| candidate.log_marginal > b.log_marginal) {
            best = Some(candidate);
        }
    }
    let best = best.expect("at least one ν");

    let corr = problem.correlation(best.rho, best.nu);
    let cov = problem.covariance(&corr, best.sigma2, config.nugget_ratio);
    let mode = problem.laplace_mode(&best.beta, &cov, Some(&best.warm));
    let info = problem.profiled_information(&best.beta, &cov, &mode);
    let variances = problem.mode_variances(&cov, &mode);
    let matern = MaternParams {
        nu: best.nu,
        rho: best.rho,
        sigma2: best.sigma2,
        nugget: best.sigma2 * config.nugget_ratio,
    };
    Ok(assemble(
        &problem,
        &active,
        &best.beta,
        &info,
        matern,
        mode.mode.iter().copied().collect(),
        variances,
        mode.weights.iter().copied().collect(),
        mode.log_marginal,
        FitDiagnostics {
            iterations: best.iterations,
            evaluations: best.evaluations,
            gradient_norm: best.gradient_norm,
            nu_profile: profile,
        },
    ))
}

struct FixedFit {
    beta: Vec<f64>,
    iterations: usize,
    gradient_norm: f64,
}

/// Newton–Raphson with step halving on the plain logistic likelihood.
fn fit_fixed(problem: &GlmmProblem, active: &[bool]) -> Result<FixedFit, GlmmError> {
    let idx: Vec<usize> = (0..N_COEF).filter(|&j| active[j]).collect();
    let mean_y = problem.response.mean();
    let mut beta = vec![0.0; N_COEF];
    beta[0] = (mean_y / (1.0 - mean_y)).ln();
    let (mut loglik, mut grad, mut info) = problem.fixed_terms(&beta);

    for iteration in 1..=FIXED_NEWTON_MAX_ITER {
        let g = DVector::from_iterator(idx.len(), idx.iter().map(|&j| grad[j]));
        let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| info[(idx[a], idx[b])]);
        let Some(step) = h.cholesky().map(|c| c.solve(&g)) else {
            return Err(GlmmError::Separation {
                coefficient: "intercept",
                value: beta[0],
            });
        };
        let mut scale = 1.0;
        let (next, terms) = loop {
            let mut trial = beta.clone();
            for (k, &j) in idx.iter().enumerate() {
                trial[j] += scale * step[k];
            }
            let terms = problem.fixed_terms(&trial);
            if terms.0 >= loglik - 1e-12 * loglik.abs().max(1.0) || scale < 1e-10 {
                break (trial, terms);
            }
            scale *= 0.5;
        };
        let change = step.amax() * scale;
        beta = next;
        (loglik, grad, info) = terms;
        check_separation(&beta)?;
        if change < 1e-10 {
            return Ok(FixedFit {
                beta,
                iterations: iteration,
                gradient_norm: grad.amax(),
            });
        }
    }
    Err(GlmmError::NotConverged {
        objective: -loglik,
        gradient_norm: grad.amax(),
        iterations: FIXED_NEWTON_MAX_ITER,
    })
}

struct SpatialFit {
    beta: Vec<f64>,
    sigma2: f64,
    rho: f64,
    nu: f64,
    log_marginal: f64,
    warm: DVector<f64>,
    iterations: usize,
    evaluations: usize,
    gradient_norm: f64,
}

fn positive_distances(problem: &GlmmProblem) -> Vec<f64> {
    let s = problem.n_sites();
    let mut d: Vec<f64> = (0..s)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| problem.distances[(i, j)])
        .filter(|&v| v > 0.0)
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

fn typical_distance(problem: &GlmmProblem) -> Option<f64> {
    let d = positive_distances(problem);
    (!d.is_empty()).then(|| d[d.len() / 2])
}

/// Cached correlation matrix for the most recent range.
struct Workspace {
    rho_bits: u64,
    correlation: DMatrix<f64>,
    /// Warm start of the mode search, taken from the last accepted iterate.
    anchor: DVector<f64>,
    last: DVector<f64>,
}

fn fit_spatial(
    problem: &GlmmProblem,
    active: &[bool],
    start_beta: &[f64],
    nu: f64,
    config: &FitConfig,
) -> Result<SpatialFit, GlmmError> {
    let distances = positive_distances(problem);
    let (d_min, d_max) = (distances[0], distances[distances.len() - 1]);
    let d_med = distances[distances.len() / 2];
    let mut lower = vec![0.0; N_COEF + 2];
    let mut upper = vec![0.0; N_COEF + 2];
    for j in 0..N_COEF {
        if active[j] {
            lower[j] = -BETA_BOUND;
            upper[j] = BETA_BOUND;
        }
    }
    (lower[N_COEF], upper[N_COEF]) = LOG_SIGMA2_BOUNDS;
    lower[N_COEF + 1] = (d_min / RHO_BOUND_FACTOR).ln();
    upper[N_COEF + 1] = (d_max * RHO_BOUND_FACTOR).ln();

    let mut x0 = start_beta.to_vec();
    x0.push(0.0);
    x0.push(d_med.ln());

    let s = problem.n_sites();
    let work = RefCell::new(Workspace {
        rho_bits: f64::NAN.to_bits(),
        correlation: DMatrix::zeros(s, s),
        anchor: DVector::zeros(s),
        last: DVector::zeros(s),
    });
    let evaluate = |x: &[f64]| -> LaplaceMode {
        let mut w = work.borrow_mut();
        let rho = x[N_COEF + 1].exp();
        if rho.to_bits() != w.rho_bits {
            w.correlation = problem.correlation(rho, nu);
            w.rho_bits = rho.to_bits();
        }
        let cov = problem.covariance(&w.correlation, x[N_COEF].exp(), config.nugget_ratio);
        let mode = problem.laplace_mode(&x[..N_COEF], &cov, Some(&w.anchor));
        w.last = mode.weights.clone();
        mode
    };

    let options = BfgsOptions {
        max_iterations: config.max_iterations,
        rel_tol: config.rel_tol,
        ..BfgsOptions::default()
    };
    let result = minimize(
        |x: &[f64]| Ok::<f64, GlmmError>(-evaluate(x).log_marginal),
        |x: &[f64]| {
            check_separation(&x[..N_COEF])?;
            let mut w = work.borrow_mut();
            w.anchor = w.last.clone();
            Ok(())
        },
        &x0,
        &lower,
        &upper,
        &options,
    );
    let minimum = match result {
        Ok(m) => m,
        Err(BfgsFailure::Objective(e)) => return Err(e),
        Err(BfgsFailure::NonFiniteStart) => {
            return Err(GlmmError::NotConverged {
                objective: f64::NAN,
                gradient_norm: f64::NAN,
                iterations: 0,
            })
        }
        Err(BfgsFailure::NotConverged {
            value,
            gradient_norm,
            iterations,
        }) => {
            return Err(GlmmError::NotConverged {
                objective: value,
                gradient_norm,
                iterations,
            })
        }
    };
    let x = &minimum.x;
    let warm = work.borrow().anchor.clone();
    Ok(SpatialFit {
        beta: x[..N_COEF].to_vec(),
        sigma2: x[N_COEF].exp(),
        rho: x[N_COEF + 1].exp(),
        nu,
        log_marginal: -minimum.value,
        warm,
        iterations: minimum.iterations,
        evaluations: minimum.evaluations,
        gradient_norm: minimum.gradient_norm,
    })
}

/// Map from standardised to original-scale coefficients.
fn unstandardize_map(st: &Standardization) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(N_COEF, N_COEF);
    t[(0, 0)] = 1.0;
    for j in 1..N_COEF {
        let scale = st.scales[j - 1];
        if scale > 0.0 {
            t[(j, j)] = 1.0 / scale;
            t[(0, j)] = -st.means[j - 1] / scale;
        }
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    problem: &GlmmProblem,
    active: &[bool],
    beta_std: &[f64],
    information: &DMatrix<f64>,
    matern: MaternParams,
    modes: Vec<f64>,
    variances: Vec<f64>,
    weights: Vec<f64>,
    log_likelihood: f64,
    diagnostics: FitDiagnostics,
) -> FittedGlmm {
    let st = &problem.standardization;
    let t = unstandardize_map(st);
    let original = &t * DVector::from_column_slice(beta_std);

    let idx: Vec<usize> = (0..N_COEF).filter(|&j| active[j]).collect();
    let info_active = DMatrix::from_fn(idx.len(), idx.len(), |a, b| information[(idx[a], idx[b])]);
    let mut standard_errors = [None; N_COEF];
    if let Some(inverse) = info_active.cholesky().map(|c| c.inverse()) {
        let t_active = DMatrix::from_fn(N_COEF, idx.len(), |r, c| t[(r, idx[c])]);
        let cov = &t_active * inverse * t_active.transpose();
        for &j in &idx {
            let v = cov[(j, j)];
            standard_errors[j] = (v.is_finite() && v >= 0.0).then(|| v.sqrt());
        }
    } else {
        log::warn!("fixed-effect information matrix is not positive definite; standard errors omitted");
    }

    let site_effects = problem
        .locations
        .iter()
        .zip(modes.iter().zip(&variances))
        .map(|(loc, (&mode, &variance))| SiteEffect {
            latitude: loc.latitude,
            longitude: loc.longitude,
            mode,
            variance,
        })
        .collect();

    let mut standardized_coefficients = [0.0; N_COEF];
    standardized_coefficients.copy_from_slice(beta_std);
    let mut coefficients = [0.0; N_COEF];
    coefficients.copy_from_slice(original.as_slice());

    FittedGlmm {
        format_version: MODEL_FORMAT_VERSION,
        coefficients: GlmmCoefficients::from_array(coefficients),
        standard_errors,
        standardized_coefficients,
        random_effects: matern.sigma2 > 0.0,
        matern,
        site_effects,
        kriging_weights: weights,
        standardization: st.clone(),
        log_likelihood,
        diagnostics,
    }
}
