//! Spatial binomial mixed model for case prediction.
//!
//! `logit p = β0 + β1·pool_size + β2·test_positive + β3·risk + β4·week + β5·(year − year_center) + b(site)`
//!
//! The site effects `b` are jointly Gaussian with covariance
//! `σ²·C(d/ρ) + nugget·I`, `C` a Matérn correlation. Parameters maximise the
//! Laplace approximation to the marginal likelihood.

mod fit;
mod matern;
mod predict;
mod problem;

pub use fit::fit;
pub use matern::{build_correlation_matrix, covariance_cholesky, matern_correlation};
pub use predict::{predict_linear, predict_prob};
pub use problem::{GlmmProblem, LaplaceMode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of the serialised model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Number of fixed-effect coefficients, intercept included.
pub const N_COEF: usize = 6;

pub const COEFFICIENT_NAMES: [&str; N_COEF] = [
    "intercept",
    "pool_size",
    "test_positive",
    "risk",
    "week",
    "year",
];

/// Standardised coefficients beyond this magnitude indicate separation.
pub const SEPARATION_LIMIT: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmmError {
    #[error("Matérn correlation needs finite d ≥ 0 and ν > 0 (got d={d}, ν={nu})")]
    Domain { d: f64, nu: f64 },
    #[error("invalid Matérn parameters: {0}")]
    InvalidParams(String),
    #[error("covariance matrix is not positive definite (smallest eigenvalue ≈ {smallest_eigenvalue:e}); increase the nugget")]
    Singular { smallest_eigenvalue: f64 },
    #[error("pool at trap {trap_id} is missing covariate {field}")]
    MissingCovariate { field: &'static str, trap_id: String },
    #[error("pool references unknown trap {0}")]
    UnknownTrap(String),
    #[error("need at least {needed} distinct trap locations, found {found}")]
    TooFewLocations { needed: usize, found: usize },
    #[error("no pools to fit")]
    NoData,
    #[error("response is degenerate: every pool has response={0}")]
    OneClass(bool),
    #[error("complete separation: standardised coefficient {coefficient} reached {value:.3}")]
    Separation { coefficient: &'static str, value: f64 },
    #[error("optimiser did not converge after {iterations} iterations (objective {objective}, gradient norm {gradient_norm:e})")]
    NotConverged {
        objective: f64,
        gradient_norm: f64,
        iterations: usize,
    },
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

/// Matérn covariance parameters. Distances enter the kernel as `d / rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub nugget: f64,
}

impl MaternParams {
    pub fn validate(&self) -> Result<(), GlmmError> {
        let bad = |what: &str| Err(GlmmError::InvalidParams(what.to_string()));
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return bad("nu must be finite and > 0");
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad("rho must be finite and > 0");
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return bad("sigma2 must be finite and ≥ 0");
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return bad("nugget must be finite and ≥ 0");
        }
        Ok(())
    }
}

/// Fixed-effect coefficients on the original covariate scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GlmmCoefficients {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl GlmmCoefficients {
    pub fn to_array(&self) -> [f64; N_COEF] {
        [
            self.beta0, self.beta1, self.beta2, self.beta3, self.beta4, self.beta5,
        ]
    }

    pub fn from_array(b: [f64; N_COEF]) -> Self {
        Self {
            beta0: b[0],
            beta1: b[1],
            beta2: b[2],
            beta3: b[3],
            beta4: b[4],
            beta5: b[5],
        }
    }
}

/// Smoothness handling during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMode {
    Fixed(f64),
    /// Fit at each value and keep the best marginal likelihood.
    Grid(Vec<f64>),
}

impl Default for NuMode {
    fn default() -> Self {
        Self::Fixed(0.5)
    }
}

impl std::str::FromStr for NuMode {
    type Err = String;

    /// `fixed:<value>`, `grid` (0.5, 1.5, 2.5) or `grid:<v1>,<v2>,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_nu = |v: &str| -> Result<f64, String> {
            let nu: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("invalid ν value {v:?}"))?;
            if nu.is_finite() && nu > 0.0 {
                Ok(nu)
            } else {
                Err(format!("ν must be > 0, got {v}"))
            }
        };
        match s.split_once(':') {
            None if s == "grid" => Ok(Self::Grid(vec![0.5, 1.5, 2.5])),
            Some(("fixed", v)) => parse_nu(v).map(Self::Fixed),
            Some(("grid", vs)) => vs
                .split(',')
                .map(parse_nu)
                .collect::<Result<Vec<_>, _>>()
                .map(Self::Grid),
            _ => Err(format!(
                "unknown ν mode {s:?} (expected fixed:<ν>, grid or grid:<ν,...>)"
            )),
        }
    }
}

impl std::fmt::Display for NuMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(nu) => write!(f, "fixed:{nu}"),
            Self::Grid(nus) => {
                let parts: Vec<String> = nus.iter().map(|v| v.to_string()).collect();
                write!(f, "grid:{}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub nu: NuMode,
    pub random_effects: bool,
    pub standardize: bool,
    /// Nugget as a fraction of σ².
    pub nugget_ratio: f64,
    /// Outer quasi-Newton iteration budget.
    pub max_iterations: usize,
    /// Relative objective tolerance of the outer optimiser.
    pub rel_tol: f64,
    /// Reference year for the year term; the median pool year when `None`.
    pub year_center: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nu: NuMode::default(),
            random_effects: true,
            standardize: true,
            nugget_ratio: 1e-6,
            max_iterations: 500,
            rel_tol: 1e-6,
            year_center: None,
        }
    }
}

/// Posterior mode and conditional variance of one location's effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteEffect {
    pub latitude: f64,
    pub longitude: f64,
    pub mode: f64,
    pub variance: f64,
}

/// Affine map between raw covariates and the internal design.
///
/// Column order is pool_size, test_positive, risk, week, year; the year is
/// first shifted by `year_center`. A zero `scale` marks a constant column
/// whose coefficient is pinned at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub year_center: f64,
    pub means: [f64; N_COEF - 1],
    pub scales: [f64; N_COEF - 1],
}

impl Standardization {
    pub fn is_active(&self, column: usize) -> bool {
        column == 0 || self.scales[column - 1] > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    /// `(ν, log marginal likelihood)` for every ν tried.
    pub nu_profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlmm {
    pub format_version: u32,
    pub coefficients: GlmmCoefficients,
    /// `None` for coefficients of constant columns.
    pub standard_errors: [Option<f64>; N_COEF],
    pub standardized_coefficients: [f64; N_COEF],
    pub random_effects: bool,
    pub matern: MaternParams,
    /// One entry per unique training location.
    pub site_effects: Vec<SiteEffect>,
    /// `Σ⁻¹ b̂`, aligned with `site_effects`; kriging uses `σ²·c(d/ρ)ᵀ` times this.
    pub kriging_weights: Vec<f64>,
    pub standardization: Standardization,
    /// Laplace-approximate log marginal likelihood (plain log-likelihood without
    /// random effects).
    pub log_likelihood: f64,
    pub diagnostics: FitDiagnostics,
}

impl FittedGlmm {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, GlmmError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| GlmmError::Config(format!("model document: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(GlmmError::FormatVersion(header.format_version));
        }
        serde_json::from_str(text).map_err(|e| GlmmError::Config(format!("model document: {e}")))
    }

    pub fn training_locations(&self) -> Vec<(f64, f64)> {
        self.site_effects
            .iter()
            .map(|s| (s.latitude, s.longitude))
            .collect()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_mode_parsing() {
        assert_eq!("fixed:1.5".parse::<NuMode>().unwrap(), NuMode::Fixed(1.5));
        assert_eq!(
            "grid".parse::<NuMode>().unwrap(),
            NuMode::Grid(vec![0.5, 1.5, 2.5])
        );
        assert_eq!(
            "grid:0.5,1".parse::<NuMode>().unwrap(),
            NuMode::Grid(vec![0.5, 1.0])
        );
        assert!("fixed:-1".parse::<NuMode>().is_err());
        assert!("bessel".parse::<NuMode>().is_err());
        let m: NuMode = "grid:0.5,2.5".parse().unwrap();
        assert_eq!(m.to_string().parse::<NuMode>().unwrap(), m);
    }

    #[test]
    fn matern_params_validation() {
        let ok = MaternParams {
            nu: 0.5,
            rho: 1.0,
            sigma2: 0.0,
            nugget: 0.0,
        };
        assert!(ok.validate().is_ok());
        assert!(MaternParams { rho: 0.0, ..ok }.validate().is_err());
        assert!(MaternParams { nu: f64::NAN, ..ok }.validate().is_err());
        assert!(MaternParams { sigma2: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn logistic_helpers_are_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((log1p_exp(1.0) - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
        assert_eq!(log1p_exp(1000.0), 1000.0);
    }
}
