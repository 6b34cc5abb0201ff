use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::matern::{cholesky_with_escalation, correlation_from_distances, distance_matrix};
use super::{log1p_exp, logistic, FitConfig, GlmmError, MaternParams, Standardization, N_COEF};
use crate::data::{Dataset, GeoPoint, PoolObservation};

const NEWTON_MAX_ITER: usize = 200;

/// Raw covariates of a pool in model order, year shifted by `year_center`.
pub(crate) fn raw_covariates(
    pool: &PoolObservation,
    year_center: f64,
) -> Result<[f64; N_COEF - 1], GlmmError> {
    let risk = pool.risk.ok_or_else(|| GlmmError::MissingCovariate {
        field: "risk",
        trap_id: pool.trap_id.clone(),
    })?;
    if !risk.is_finite() {
        return Err(GlmmError::MissingCovariate {
            field: "risk",
            trap_id: pool.trap_id.clone(),
        });
    }
    Ok([
        pool.pool_size as f64,
        if pool.test_positive { 1.0 } else { 0.0 },
        risk,
        pool.week as f64,
        pool.year as f64 - year_center,
    ])
}

pub(crate) fn location_key(latitude: f64, longitude: f64) -> (u64, u64) {
    (latitude.to_bits(), longitude.to_bits())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Training data in model form: standardised design, responses and the
/// pool → location map.
#[derive(Debug, Clone)]
pub struct GlmmProblem {
    pub(crate) design: DMatrix<f64>,
    pub(crate) response: DVector<f64>,
    pub(crate) site_of: Vec<usize>,
    pub(crate) locations: Vec<GeoPoint>,
    pub(crate) distances: DMatrix<f64>,
    pub(crate) standardization: Standardization,
}

/// Posterior mode of the location effects for fixed `(β, Σ)`.
#[derive(Debug, Clone)]
pub struct LaplaceMode {
    pub mode: DVector<f64>,
    /// `Σ⁻¹ · mode`.
    pub weights: DVector<f64>,
    pub log_marginal: f64,
    pub newton_iterations: usize,
    sqrt_w: DVector<f64>,
    chol_b: DMatrix<f64>,
}

impl GlmmProblem {
    pub fn new(dataset: &Dataset, config: &FitConfig) -> Result<Self, GlmmError> {
        let pools = &dataset.pools;
        if pools.is_empty() {
            return Err(GlmmError::NoData);
        }
        let positives = pools.iter().filter(|p| p.response).count();
        if positives == 0 || positives == pools.len() {
            return Err(GlmmError::OneClass(positives > 0));
        }
        let year_center = match config.year_center {
            Some(c) => c,
            None => median(&mut pools.iter().map(|p| p.year as f64).collect::<Vec<_>>()),
        };

        let site_index = dataset.site_index();
        let mut location_ids: HashMap<(u64, u64), usize> = HashMap::new();
        let mut locations = Vec::new();
        let mut site_of = Vec::with_capacity(pools.len());
        let mut raw = Vec::with_capacity(pools.len());
        for pool in pools {
            let site = site_index
                .get(pool.trap_id.as_str())
                .ok_or_else(|| GlmmError::UnknownTrap(pool.trap_id.clone()))?;
            let key = location_key(site.latitude, site.longitude);
            let id = *location_ids.entry(key).or_insert_with(|| {
                locations.push(site.location());
                locations.len() - 1
            });
            site_of.push(id);
            raw.push(raw_covariates(pool, year_center)?);
        }

        let n = pools.len() as f64;
        let mut means = [0.0; N_COEF - 1];
        let mut scales = [0.0; N_COEF - 1];
        for j in 0..N_COEF - 1 {
            let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let constant = sd <= 1e-12 * mean.abs().max(1.0);
            (means[j], scales[j]) = match (constant, config.standardize) {
                (true, _) => (mean, 0.0),
                (false, true) => (mean, sd),
                (false, false) => (0.0, 1.0),
            };
        }
        let standardization = Standardization {
            year_center,
            means,
            scales,
        };

        let design = DMatrix::from_fn(pools.len(), N_COEF, |i, j| {
            if j == 0 {
                1.0
            } else if scales[j - 1] > 0.0 {
                (raw[i][j - 1] - means[j - 1]) / scales[j - 1]
            } else {
                0.0
            }
        });
        let response = DVector::from_iterator(
            pools.len(),
            pools.iter().map(|p| if p.response { 1.0 } else { 0.0 }),
        );
        let distances = distance_matrix(&locations);
        Ok(Self {
            design,
            response,
            site_of,
            locations,
            distances,
            standardization,
        })
    }

    pub fn n_pools(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.locations.len()
    }

    pub fn locations(&self) -> &[GeoPoint] {
        &self.locations
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Location index of every pool.
    pub fn site_of(&self) -> &[usize] {
        &self.site_of
    }

    pub(crate) fn fixed_linear(&self, beta: &[f64]) -> DVector<f64> {
        &self.design * DVector::from_column_slice(beta)
    }

    /// Bernoulli log-likelihood with per-location gradient and curvature.
    fn site_terms(&self, eta_fixed: &DVector<f64>, f: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let s = self.n_sites();
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(s);
        let mut curv = DVector::zeros(s);
        for i in 0..self.n_pools() {
            let site = self.site_of[i];
            let eta = eta_fixed[i] + f[site];
            let y = self.response[i];
            let p = logistic(eta);
            loglik += y * eta - log1p_exp(eta);
            grad[site] += y - p;
            curv[site] += p * (1.0 - p);
        }
        (loglik, grad, curv)
    }

    /// Covariance of the location effects, `σ²(C + ratio·I)`.
    pub(crate) fn covariance(&self, correlation: &DMatrix<f64>, sigma2: f64, nugget_ratio: f64) -> DMatrix<f64> {
        let s = self.n_sites();
        (correlation + DMatrix::<f64>::identity(s, s) * nugget_ratio) * sigma2
    }

    pub(crate) fn correlation(&self, rho: f64, nu: f64) -> DMatrix<f64> {
        correlation_from_distances(&self.distances, rho, nu)
    }

    /// Newton iteration for the mode of `log p(y | b) − ½ bᵀK⁻¹b`, carried in
    /// terms of `a = K⁻¹b` so that `K` is never inverted. Starts from
    /// `b = K·warm`.
    pub fn laplace_mode(
        &self,
        beta: &[f64],
        cov: &DMatrix<f64>,
        warm: Option<&DVector<f64>>,
    ) -> LaplaceMode {
        let s = self.n_sites();
        let eta_fixed = self.fixed_linear(beta);
        let mut a = warm.cloned().unwrap_or_else(|| DVector::zeros(s));
        let mut f = cov * &a;
        let (mut loglik, mut grad, mut curv) = self.site_terms(&eta_fixed, &f);
        let mut psi = -0.5 * a.dot(&f) + loglik;
        let mut iterations = 0;

        for it in 0..NEWTON_MAX_ITER {
            iterations = it + 1;
            let (sqrt_w, chol) = factor_b(cov, &curv);
            let b = curv.component_mul(&f) + &grad;
            let kb = cov * &b;
            let t = solve_lt(&chol, &solve_l(&chol, &sqrt_w.component_mul(&kb)));
            let a_newton = &b - sqrt_w.component_mul(&t);
            let direction = &a_newton - &a;

            let mut step = 1.0;
            let (a_next, f_next, terms, psi_next) = loop {
                let a_try = &a + &direction * step;
                let f_try = cov * &a_try;
                let terms = self.site_terms(&eta_fixed, &f_try);
                let psi_try = -0.5 * a_try.dot(&f_try) + terms.0;
                if psi_try >= psi - 1e-12 * psi.abs().max(1.0) || step < 1e-10 {
                    break (a_try, f_try, terms, psi_try);
                }
                step *= 0.5;
            };
            let df = (&f_next - &f).amax();
            let scale = f_next.amax().max(1.0);
            a = a_next;
            f = f_next;
            (loglik, grad, curv) = terms;
            let dpsi = (psi_next - psi).abs();
            psi = psi_next;
            if df <= 1e-10 * scale || dpsi <= 1e-15 * psi.abs().max(1.0) {
                break;
            }
        }
        if iterations == NEWTON_MAX_ITER {
            log::warn!("location-effect Newton iteration hit its budget");
        }
        let _ = loglik;
        let (sqrt_w, chol_b) = factor_b(cov, &curv);
        let half_log_det: f64 = chol_b.diagonal().iter().map(|v| v.ln()).sum();
        LaplaceMode {
            mode: f,
            weights: a,
            log_marginal: psi - half_log_det,
            newton_iterations: iterations,
            sqrt_w,
            chol_b,
        }
    }

    /// Laplace-approximate log marginal likelihood at standardised `beta` and
    /// covariance `σ²(C(ρ) + nugget_ratio·I)`.
    pub fn laplace_log_marginal(
        &self,
        beta: &[f64],
        params: &MaternParams,
        nugget_ratio: f64,
    ) -> Result<f64, GlmmError> {
        params.validate()?;
        let cov = self.covariance(&self.correlation(params.rho, params.nu), params.sigma2, nugget_ratio);
        Ok(self.laplace_mode(beta, &cov, None).log_marginal)
    }

    /// Log-likelihood of a model without location effects, with gradient and
    /// Fisher information in standardised coordinates.
    pub(crate) fn fixed_terms(&self, beta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let eta = self.fixed_linear(beta);
        let mut loglik = 0.0;
        let mut resid = DVector::zeros(self.n_pools());
        let mut w = DVector::zeros(self.n_pools());
        for i in 0..self.n_pools() {
            let p = logistic(eta[i]);
            loglik += self.response[i] * eta[i] - log1p_exp(eta[i]);
            resid[i] = self.response[i] - p;
            w[i] = p * (1.0 - p);
        }
        let grad = self.design.tr_mul(&resid);
        let weighted = DMatrix::from_fn(self.n_pools(), N_COEF, |i, j| self.design[(i, j)] * w[i]);
        let info = self.design.tr_mul(&weighted);
        (loglik, grad, info)
    }

    /// Information matrix of the standardised coefficients with the location
    /// effects profiled out: `H_ββ − H_βb (H_bb)⁻¹ H_bβ` at the mode, where
    /// `H_bb⁻¹ = K − K√W B⁻¹ √W K`.
    pub(crate) fn profiled_information(
        &self,
        beta: &[f64],
        cov: &DMatrix<f64>,
        mode: &LaplaceMode,
    ) -> DMatrix<f64> {
        let s = self.n_sites();
        let eta = self.fixed_linear(beta);
        let mut h_bb_cross = DMatrix::<f64>::zeros(N_COEF, s);
        let mut h_beta = DMatrix::<f64>::zeros(N_COEF, N_COEF);
        for i in 0..self.n_pools() {
            let site = self.site_of[i];
            let p = logistic(eta[i] + mode.mode[site]);
            let w = p * (1.0 - p);
            for j in 0..N_COEF {
                let xj = self.design[(i, j)];
                h_bb_cross[(j, site)] += w * xj;
                for k in 0..=j {
                    h_beta[(j, k)] += w * xj * self.design[(i, k)];
                }
            }
        }
        for j in 0..N_COEF {
            for k in 0..j {
                h_beta[(k, j)] = h_beta[(j, k)];
            }
        }
        // V = L⁻¹ √W K, so that K√W B⁻¹ √W K = VᵀV
        let swk = DMatrix::from_fn(s, s, |i, j| mode.sqrt_w[i] * cov[(i, j)]);
        let v = solve_l_mat(&mode.chol_b, &swk);
        let posterior_cov = cov - v.tr_mul(&v);
        let cross = &h_bb_cross * &posterior_cov * h_bb_cross.transpose();
        h_beta - cross
    }

    /// Conditional variances of the location effects at the mode.
    pub(crate) fn mode_variances(&self, cov: &DMatrix<f64>, mode: &LaplaceMode) -> Vec<f64> {
        let s = self.n_sites();
        let swk = DMatrix::from_fn(s, s, |i, j| mode.sqrt_w[i] * cov[(i, j)]);
        let v = solve_l_mat(&mode.chol_b, &swk);
        (0..s)
            .map(|i| (cov[(i, i)] - v.column(i).norm_squared()).max(0.0))
            .collect()
    }

    /// Joint log-density `log p(y | β, b) + log N(b; 0, Σ)` in standardised
    /// coefficients.
    pub fn joint_log_density(
        &self,
        params: &MaternParams,
        beta: &[f64],
        effects: &[f64],
    ) -> Result<f64, GlmmError> {
        let (chol, _) = self.effect_cholesky(params)?;
        let f = DVector::from_column_slice(effects);
        let (loglik, _, _) = self.site_terms(&self.fixed_linear(beta), &f);
        let l = chol.l();
        let z = solve_l(&l, &f);
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let s = self.n_sites() as f64;
        Ok(loglik - 0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * s * (2.0 * std::f64::consts::PI).ln())
    }

    /// Gradient of [`Self::joint_log_density`] with respect to `(β, b)`.
    pub fn joint_gradient(
        &self,
        params: &MaternParams,
        beta: &[f64],
        effects: &[f64],
    ) -> Result<Vec<f64>, GlmmError> {
        let (chol, _) = self.effect_cholesky(params)?;
        let f = DVector::from_column_slice(effects);
        let eta = self.fixed_linear(beta);
        let mut resid = DVector::zeros(self.n_pools());
        let mut by_site = DVector::zeros(self.n_sites());
        for i in 0..self.n_pools() {
            let r = self.response[i] - logistic(eta[i] + f[self.site_of[i]]);
            resid[i] = r;
            by_site[self.site_of[i]] += r;
        }
        let beta_grad = self.design.tr_mul(&resid);
        let effect_grad = by_site - chol.solve(&f);
        Ok(beta_grad.iter().chain(effect_grad.iter()).copied().collect())
    }

    fn effect_cholesky(
        &self,
        params: &MaternParams,
    ) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), GlmmError> {
        params.validate()?;
        let corr = self.correlation(params.rho, params.nu);
        cholesky_with_escalation(&corr, params.sigma2, params.nugget)
    }
}

/// `√W` and the lower Cholesky factor of `B = I + √W K √W`, which is always
/// positive definite.
fn factor_b(cov: &DMatrix<f64>, curv: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = cov.nrows();
    let sqrt_w = curv.map(|w| w.max(0.0).sqrt());
    let b = DMatrix::from_fn(s, s, |i, j| {
        let v = sqrt_w[i] * cov[(i, j)] * sqrt_w[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    let chol = b.cholesky().expect("I + √W K √W is positive definite");
    (sqrt_w, chol.unpack())
}

fn solve_l(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(rhs).expect("triangular factor has a positive diagonal")
}

fn solve_lt(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(rhs).expect("triangular factor has a positive diagonal")
}

fn solve_l_mat(l: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(rhs).expect("triangular factor has a positive diagonal")
}
