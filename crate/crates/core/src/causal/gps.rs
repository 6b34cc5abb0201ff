//! Least squares with a named rank check, and the linear-Gaussian
//! generalized propensity score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CausalError;

/// Relative size of a QR pivot below which a column counts as a linear
/// combination of the columns before it.
const RANK_TOL: f64 = 1e-9;
pub const MIN_GPS_VARIANCE: f64 = 1e-12;

/// Named covariate columns, one row per unit. No intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl CovariateMatrix {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self, CausalError> {
        if names.len() != values.ncols() {
            return Err(CausalError::LengthMismatch(format!(
                "{} covariate names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        Ok(Self { names, values })
    }

    pub fn from_columns(n_rows: usize, columns: Vec<(String, Vec<f64>)>) -> Result<Self, CausalError> {
        if let Some((name, col)) = columns.iter().find(|(_, c)| c.len() != n_rows) {
            return Err(CausalError::LengthMismatch(format!(
                "column {name} has {} rows, expected {n_rows}",
                col.len()
            )));
        }
        let names = columns.iter().map(|(n, _)| n.clone()).collect();
        let values = DMatrix::from_fn(n_rows, columns.len(), |i, j| columns[j].1[i]);
        Ok(Self { names, values })
    }

    pub fn empty(n_rows: usize) -> Self {
        Self {
            names: vec![],
            values: DMatrix::zeros(n_rows, 0),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn rows(&self, indices: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.select_rows(indices),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OlsFit {
    pub coefficients: DVector<f64>,
    pub rss: f64,
}

/// Least squares by Householder QR. A column whose pivot is negligible
/// against its own norm is reported with the earlier columns it depends on.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit, CausalError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(CausalError::LengthMismatch(format!("{} responses for {n} rows", y.len())));
    }
    if n < p {
        return Err(CausalError::TooFewRows { rows: n, columns: p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = x.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOL * norm || norm == 0.0 {
            let coef = r
                .view((0, 0), (j, j))
                .solve_upper_triangular(&r.view((0, j), (j, 1)))
                .unwrap_or_else(|| DMatrix::zeros(j, 1));
            let partners = (0..j)
                .filter(|&i| (coef[i] * x.column(i).norm()).abs() > 1e-8 * norm.max(f64::MIN_POSITIVE))
                .map(|i| names[i].clone())
                .collect();
            return Err(CausalError::RankDeficient {
                column: names[j].clone(),
                collinear_with: partners,
            });
        }
    }
    let qty = qr.q().transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .expect("pivots checked nonzero");
    let rss = (y - x * &coefficients).norm_squared();
    Ok(OlsFit { coefficients, rss })
}

/// `T | X ~ N(β₀ + Xβ, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsModel {
    /// Intercept first, then one per covariate.
    pub coefficients: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub sigma2: f64,
}

impl GpsModel {
    pub fn mean(&self, covariates: &CovariateMatrix, row: usize) -> f64 {
        let x = covariates.values.row(row);
        self.coefficients[0]
            + x.iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn density(&self, t: f64, mean: f64) -> f64 {
        let z2 = (t - mean).powi(2) / self.sigma2;
        (-0.5 * z2).exp() / (2.0 * std::f64::consts::PI * self.sigma2).sqrt()
    }
}

pub fn fit_gps(treatment: &[f64], covariates: &CovariateMatrix) -> Result<GpsModel, CausalError> {
    let n = treatment.len();
    if covariates.n_rows() != n {
        return Err(CausalError::LengthMismatch(format!(
            "{n} treatments for {} covariate rows",
            covariates.n_rows()
        )));
    }
    let p = covariates.names.len() + 1;
    if n < p + 2 {
        return Err(CausalError::TooFewRows { rows: n, columns: p });
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { covariates.values[(i, j - 1)] });
    let mut names = vec!["intercept".to_string()];
    names.extend(covariates.names.iter().cloned());
    let fit = ols(&design, &DVector::from_column_slice(treatment), &names)?;
    let sigma2 = fit.rss / (n - p) as f64;
    if !(sigma2 >= MIN_GPS_VARIANCE) {
        return Err(CausalError::DegenerateVariance(sigma2));
    }
    Ok(GpsModel {
        coefficients: fit.coefficients.iter().copied().collect(),
        covariate_names: covariates.names.clone(),
        sigma2,
    })
}
