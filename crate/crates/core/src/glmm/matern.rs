use nalgebra::{Cholesky, DMatrix, Dyn};

use super::{GlmmError, MaternParams};
use crate::data::GeoPoint;
use crate::special::{bessel_k_scaled, ln_gamma};

/// Below this scaled distance the correlation is 1 to double precision for
/// every order of practical interest.
const ZERO_DISTANCE: f64 = 1e-10;

/// Nugget escalations tried before giving up on a Cholesky factorisation.
const NUGGET_ESCALATIONS: usize = 6;

/// Matérn correlation `d^ν K_ν(d) / (2^{ν−1} Γ(ν))` at a distance already
/// divided by the range.
pub fn matern_correlation(d: f64, nu: f64) -> Result<f64, GlmmError> {
    if !(d.is_finite() && d >= 0.0 && nu.is_finite() && nu > 0.0) {
        return Err(GlmmError::Domain { d, nu });
    }
    Ok(correlation_unchecked(d, nu))
}

pub(crate) fn correlation_unchecked(d: f64, nu: f64) -> f64 {
    if d < ZERO_DISTANCE {
        return 1.0;
    }
    // half-integer orders have elementary closed forms
    let value = if nu == 0.5 {
        (-d).exp()
    } else if nu == 1.5 {
        (1.0 + d) * (-d).exp()
    } else if nu == 2.5 {
        (1.0 + d + d * d / 3.0) * (-d).exp()
    } else {
        let log = nu * d.ln() + bessel_k_scaled(nu, d).ln()
            - d
            - (nu - 1.0) * std::f64::consts::LN_2
            - ln_gamma(nu);
        log.exp()
    };
    value.min(1.0)
}

/// Pairwise great-circle distances in kilometres.
pub(crate) fn distance_matrix(locations: &[GeoPoint]) -> DMatrix<f64> {
    let n = locations.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = locations[i].distance_km(&locations[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub(crate) fn correlation_from_distances(distances: &DMatrix<f64>, rho: f64, nu: f64) -> DMatrix<f64> {
    let n = distances.nrows();
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = correlation_unchecked(distances[(i, j)] / rho, nu);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Correlation matrix `C[i][j] = Corr(d_ij / ρ)` (unit diagonal).
pub fn build_correlation_matrix(
    locations: &[GeoPoint],
    params: &MaternParams,
) -> Result<DMatrix<f64>, GlmmError> {
    params.validate()?;
    if locations.is_empty() {
        return Err(GlmmError::TooFewLocations {
            needed: 1,
            found: 0,
        });
    }
    Ok(correlation_from_distances(
        &distance_matrix(locations),
        params.rho,
        params.nu,
    ))
}

/// Cholesky factor of `Σ = σ²·C + nugget·I`.
///
/// A failing factorisation is retried with the nugget multiplied by 10 (up to
/// six times) when the nugget is positive. Returns the factor and the nugget
/// actually used.
pub fn covariance_cholesky(
    locations: &[GeoPoint],
    params: &MaternParams,
) -> Result<(Cholesky<f64, Dyn>, f64), GlmmError> {
    let corr = build_correlation_matrix(locations, params)?;
    cholesky_with_escalation(&corr, params.sigma2, params.nugget)
}

pub(crate) fn cholesky_with_escalation(
    corr: &DMatrix<f64>,
    sigma2: f64,
    nugget: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GlmmError> {
    let n = corr.nrows();
    let base = corr * sigma2;
    let mut current = nugget;
    for attempt in 0..=NUGGET_ESCALATIONS {
        let sigma = &base + DMatrix::<f64>::identity(n, n) * current;
        if let Some(ch) = sigma.clone().cholesky() {
            let pivots_ok = ch.l_dirty().diagonal().iter().all(|&v| v > 0.0 && v.is_finite());
            if pivots_ok {
                return Ok((ch, current));
            }
        }
        if current <= 0.0 || attempt == NUGGET_ESCALATIONS {
            let smallest = sigma
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            return Err(GlmmError::Singular {
                smallest_eigenvalue: smallest,
            });
        }
        current *= 10.0;
    }
    unreachable!("loop returns on its last attempt")
}
