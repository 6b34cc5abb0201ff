//! Average dose-response estimation: a propensity-augmented outcome
//! regression averaged over units at each treatment level, with bootstrap
//! pointwise standard errors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bspline::BSplineBasis;
use super::gps::{fit_gps, ols, CovariateMatrix, GpsModel};
use super::CausalError;

pub const MIN_BOOTSTRAP: usize = 100;
/// Draws allowed per replicate before the bootstrap gives up.
pub const ATTEMPTS_PER_REPLICATE: usize = 10;

/// Terms of the outcome regression besides the spline in T.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    /// GPS, GPS × T, and the adjustment covariates linearly. Consistent when
    /// either the outcome or the treatment model is right.
    #[default]
    Augmented,
    /// GPS and GPS × T only.
    GpsOnly,
}

impl std::str::FromStr for OutcomeModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "augmented" => Ok(Self::Augmented),
            "gps_only" => Ok(Self::GpsOnly),
            other => Err(format!("unknown outcome model {other:?} (expected augmented|gps_only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrfOptions {
    pub interior_knots: usize,
    pub outcome_model: OutcomeModel,
}

impl Default for AdrfOptions {
    fn default() -> Self {
        Self {
            interior_knots: 5,
            outcome_model: OutcomeModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrfEstimate {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    /// Bootstrap pointwise standard errors; `None` for a point estimate.
    pub se: Option<Vec<f64>>,
    pub n_boot: usize,
    pub gps: GpsModel,
}

impl AdrfEstimate {
    /// Least-squares slope of `mu` against `grid`.
    pub fn slope(&self) -> f64 {
        let n = self.grid.len() as f64;
        let gx = self.grid.iter().sum::<f64>() / n;
        let gy = self.mu.iter().sum::<f64>() / n;
        let sxy: f64 = self.grid.iter().zip(&self.mu).map(|(x, y)| (x - gx) * (y - gy)).sum();
        let sxx: f64 = self.grid.iter().map(|x| (x - gx).powi(2)).sum();
        sxy / sxx
    }
}

fn check_inputs(
    outcome: &[f64],
    treatment: &[f64],
    covariates: &CovariateMatrix,
    grid: &[f64],
) -> Result<(), CausalError> {
    let n = outcome.len();
    if treatment.len() != n || covariates.n_rows() != n {
        return Err(CausalError::LengthMismatch(format!(
            "{n} outcomes, {} treatments, {} covariate rows",
            treatment.len(),
            covariates.n_rows()
        )));
    }
    if outcome.iter().chain(treatment).chain(covariates.values().iter()).any(|v| !v.is_finite()) {
        return Err(CausalError::NonFinite);
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CausalError::Grid("grid must be nonempty and strictly increasing".into()));
    }
    Ok(())
}

/// Point estimate of the dose-response curve on `grid`.
pub fn estimate_adrf(
    outcome: &[f64],
    treatment: &[f64],
    covariates: &CovariateMatrix,
    grid: &[f64],
    options: &AdrfOptions,
) -> Result<AdrfEstimate, CausalError> {
    check_inputs(outcome, treatment, covariates, grid)?;
    let basis = BSplineBasis::at_quantiles(treatment, options.interior_knots)?;
    if let Some(&x) = grid.iter().find(|&&x| x < basis.lower() || x > basis.upper()) {
        return Err(CausalError::Extrapolation {
            x,
            lower: basis.lower(),
            upper: basis.upper(),
        });
    }
    let gps = fit_gps(treatment, covariates)?;
    let n = outcome.len();
    let means: Vec<f64> = (0..n).map(|i| gps.mean(covariates, i)).collect();
    let k = basis.n_basis();
    let extra = match options.outcome_model {
        OutcomeModel::Augmented => covariates.names().len(),
        OutcomeModel::GpsOnly => 0,
    };
    let p = k + 2 + extra;

    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        let t = treatment[i];
        let r = gps.density(t, means[i]);
        for (j, b) in basis.evaluate(t)?.into_iter().enumerate() {
            design[(i, j)] = b;
        }
        design[(i, k)] = r;
        design[(i, k + 1)] = r * t;
        for j in 0..extra {
            design[(i, k + 2 + j)] = covariates.values()[(i, j)];
        }
    }
    let mut names: Vec<String> = (1..=k).map(|j| format!("spline_{j}")).collect();
    names.extend(["gps".to_string(), "gps_x_treatment".to_string()]);
    names.extend(covariates.names().iter().take(extra).cloned());
    let fit = ols(&design, &DVector::from_column_slice(outcome), &names)?;
    let coef = &fit.coefficients;

    // covariate part does not depend on the grid point
    let covariate_mean: f64 = (0..n)
        .map(|i| (0..extra).map(|j| coef[k + 2 + j] * covariates.values()[(i, j)]).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let mut mu = Vec::with_capacity(grid.len());
    for &x in grid {
        let spline: f64 = basis.evaluate(x)?.iter().zip(coef.iter()).map(|(b, c)| b * c).sum();
        let gps_mean = means.iter().map(|&m| gps.density(x, m)).sum::<f64>() / n as f64;
        mu.push(spline + (coef[k] + coef[k + 1] * x) * gps_mean + covariate_mean);
    }
    Ok(AdrfEstimate {
        grid: grid.to_vec(),
        mu,
        se: None,
        n_boot: 0,
        gps,
    })
}

/// Point estimate plus pointwise standard errors from `n_boot` resamples of
/// whole units. Replicate `r` draws from ChaCha stream `r` of `seed`, and a
/// failed draw is redrawn from the same stream.
pub fn bootstrap_adrf(
    outcome: &[f64],
    treatment: &[f64],
    covariates: &CovariateMatrix,
    grid: &[f64],
    n_boot: usize,
    seed: u64,
    options: &AdrfOptions,
) -> Result<AdrfEstimate, CausalError> {
    if n_boot < MIN_BOOTSTRAP {
        return Err(CausalError::TooFewReplicates(n_boot));
    }
    let mut estimate = estimate_adrf(outcome, treatment, covariates, grid, options)?;
    let n = outcome.len();
    let replicates: Vec<Vec<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut last = None;
            for _ in 0..ATTEMPTS_PER_REPLICATE {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let y: Vec<f64> = rows.iter().map(|&i| outcome[i]).collect();
                let t: Vec<f64> = rows.iter().map(|&i| treatment[i]).collect();
                match estimate_adrf(&y, &t, &covariates.rows(&rows), grid, options) {
                    Ok(e) => return Ok(e.mu),
                    Err(e) => last = Some(e),
                }
            }
            Err(CausalError::BootstrapExhausted {
                replicate: r,
                source: Box::new(last.expect("at least one attempt")),
            })
        })
        .collect::<Result<_, _>>()?;

    let b = n_boot as f64;
    let se = (0..grid.len())
        .map(|g| {
            let mean = replicates.iter().map(|m| m[g]).sum::<f64>() / b;
            (replicates.iter().map(|m| (m[g] - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
        })
        .collect();
    estimate.se = Some(se);
    estimate.n_boot = n_boot;
    Ok(estimate)
}
