use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trapscore_core::data::{Dataset, PoolObservation, TrapSite};
use trapscore_core::glmm::{
    fit, matern_correlation, predict_prob, FitConfig, GlmmProblem, MaternParams, NuMode, N_COEF,
};
use trapscore_core::prevalence::{annotate_risk, Grouping};
use trapscore_core::synth::{generate_world, WorldConfig};

fn world(seed: u64, sigma2: f64) -> (Dataset, f64) {
    let mut config = WorldConfig {
        seed,
        ..WorldConfig::default()
    };
    config.true_matern.sigma2 = sigma2;
    let (ds, truth) = generate_world(&config).unwrap();
    (annotate_risk(&ds, Grouping::TrapWeek).unwrap(), truth.year_center)
}

/// Plain logistic regression by iteratively reweighted least squares on the
/// raw design, solved with Gauss–Jordan elimination.
fn irls(rows: &[[f64; N_COEF]], y: &[f64]) -> [f64; N_COEF] {
    let mut beta = [0.0; N_COEF];
    for _ in 0..100 {
        let mut a = [[0.0; N_COEF + 1]; N_COEF];
        for (x, &yi) in rows.iter().zip(y) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            let z = eta + (yi - p) / w;
            for r in 0..N_COEF {
                for c in 0..N_COEF {
                    a[r][c] += w * x[r] * x[c];
                }
                a[r][N_COEF] += w * x[r] * z;
            }
        }
        for col in 0..N_COEF {
            let pivot = (col..N_COEF)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            for r in 0..N_COEF {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=N_COEF {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let next: Vec<f64> = (0..N_COEF).map(|r| a[r][N_COEF] / a[r][r]).collect();
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta.copy_from_slice(&next);
        if change < 1e-12 {
            break;
        }
    }
    beta
}

fn raw_rows(ds: &Dataset, year_center: f64) -> (Vec<[f64; N_COEF]>, Vec<f64>) {
    let rows = ds
        .pools
        .iter()
        .map(|p| {
            [
                1.0,
                p.pool_size as f64,
                if p.test_positive { 1.0 } else { 0.0 },
                p.risk.unwrap(),
                p.week as f64,
                p.year as f64 - year_center,
            ]
        })
        .collect();
    let y = ds
        .pools
        .iter()
        .map(|p| if p.response { 1.0 } else { 0.0 })
        .collect();
    (rows, y)
}

#[test]
fn fixed_effects_only_matches_irls() {
    for seed in [11, 12] {
        let (ds, center) = world(seed, 0.0);
        let config = FitConfig {
            random_effects: false,
            year_center: Some(center),
            ..FitConfig::default()
        };
        let model = fit(&ds, &config).unwrap();
        let (rows, y) = raw_rows(&ds, center);
        let oracle = irls(&rows, &y);
        let got = model.coefficients.to_array();
        for j in 0..N_COEF {
            assert!((got[j] - oracle[j]).abs() < 1e-4, "β{j}: {} vs {}", got[j], oracle[j]);
        }
    }
}

fn twenty_pool_problem() -> GlmmProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let sites: Vec<TrapSite> = (0..5)
        .map(|i| TrapSite {
            trap_id: format!("S{i}"),
            latitude: 41.8 + 0.03 * i as f64,
            longitude: -87.7 + 0.01 * (i * i) as f64,
            covariates: Default::default(),
        })
        .collect();
    let pools = (0..20)
        .map(|i| PoolObservation {
            trap_id: format!("S{}", i % 5),
            year: 2016 + (i % 3) as i32,
            week: 20 + rng.random_range(0..15),
            day_of_week: 0,
            pool_size: rng.random_range(5..=50),
            test_positive: rng.random::<f64>() < 0.4,
            mosquito_count_week: 50,
            pools_in_week: 1,
            pools_on_day: 1,
            risk: Some(rng.random::<f64>() * 0.05),
            response: i % 3 == 0,
        })
        .collect();
    let ds = Dataset {
        sites,
        pools,
        cases: vec![],
    };
    GlmmProblem::new(&ds, &FitConfig::default()).unwrap()
}

#[test]
fn joint_density_gradient_matches_central_differences() {
    let problem = twenty_pool_problem();
    let params = MaternParams {
        nu: 1.5,
        rho: 2.5,
        sigma2: 0.8,
        nugget: 0.8e-6,
    };
    let beta = [-0.4, 0.3, -0.2, 0.5, 0.1, -0.3];
    let b = [0.6, -0.2, 0.9, -0.7, 0.1];
    let mut x: Vec<f64> = beta.iter().chain(&b).copied().collect();
    let analytic = problem.joint_gradient(&params, &beta, &b).unwrap();
    let h = 1e-5;
    for k in 0..x.len() {
        let orig = x[k];
        let eval = |x: &[f64]| problem.joint_log_density(&params, &x[..N_COEF], &x[N_COEF..]).unwrap();
        x[k] = orig + h;
        let up = eval(&x);
        x[k] = orig - h;
        let down = eval(&x);
        x[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(1e-12);
        assert!(rel <= 1e-4, "component {k}: analytic {} fd {fd}", analytic[k]);
    }
}

#[test]
fn optimum_beats_random_perturbations() {
    let (ds, center) = world(31, 1.0);
    let config = FitConfig {
        year_center: Some(center),
        ..FitConfig::default()
    };
    let model = fit(&ds, &config).unwrap();
    let problem = GlmmProblem::new(&ds, &config).unwrap();
    let at = |beta: &[f64], log_s2: f64, log_rho: f64| {
        let params = MaternParams {
            sigma2: log_s2.exp(),
            rho: log_rho.exp(),
            ..model.matern
        };
        problem.laplace_log_marginal(beta, &params, config.nugget_ratio).unwrap()
    };
    let best = at(
        &model.standardized_coefficients,
        model.matern.sigma2.ln(),
        model.matern.rho.ln(),
    );
    assert_relative_eq!(best, model.log_likelihood, max_relative = 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut jitter = |v: f64| {
        let scale = 0.1 * v.abs().max(0.1);
        v + scale * (2.0 * rng.random::<f64>() - 1.0)
    };
    for _ in 0..50 {
        let beta: Vec<f64> = model
            .standardized_coefficients
            .iter()
            .enumerate()
            .map(|(j, &b)| if problem.standardization().is_active(j) { jitter(b) } else { b })
            .collect();
        let s2 = jitter(model.matern.sigma2.ln());
        let rho = jitter(model.matern.rho.ln());
        assert!(at(&beta, s2, rho) <= best + 1e-8);
    }
}

#[test]
fn predictions_do_not_depend_on_standardisation() {
    let (ds, center) = world(41, 1.0);
    let base = FitConfig {
        year_center: Some(center),
        ..FitConfig::default()
    };
    let a = fit(&ds, &base).unwrap();
    let b = fit(
        &ds,
        &FitConfig {
            standardize: false,
            ..base.clone()
        },
    )
    .unwrap();
    let sites = ds.site_index();
    let pa = predict_prob(&a, &ds.pools, &sites).unwrap();
    let pb = predict_prob(&b, &ds.pools, &sites).unwrap();
    let worst = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "max difference {worst}");
}

#[test]
fn training_pools_reproduce_fitted_probabilities() {
    let (ds, center) = world(51, 1.0);
    let config = FitConfig {
        year_center: Some(center),
        ..FitConfig::default()
    };
    let model = fit(&ds, &config).unwrap();
    let problem = GlmmProblem::new(&ds, &config).unwrap();
    let predicted = predict_prob(&model, &ds.pools, &ds.site_index()).unwrap();
    // fitted value: standardised design, standardised coefficients, location modes
    let standardized = &model.standardized_coefficients;
    for (i, pool) in ds.pools.iter().enumerate() {
        let st = problem.standardization();
        let raw = [
            pool.pool_size as f64,
            if pool.test_positive { 1.0 } else { 0.0 },
            pool.risk.unwrap(),
            pool.week as f64,
            pool.year as f64 - st.year_center,
        ];
        let mut eta = standardized[0];
        for j in 1..N_COEF {
            if st.is_active(j) {
                eta += standardized[j] * (raw[j - 1] - st.means[j - 1]) / st.scales[j - 1];
            }
        }
        eta += model.site_effects[problem.site_of()[i]].mode;
        let fitted = 1.0 / (1.0 + (-eta).exp());
        assert!((predicted[i] - fitted).abs() < 1e-12);
    }
}

#[test]
fn absent_field_gives_small_variance_estimate() {
    let (ds, center) = world(61, 0.0);
    let model = fit(
        &ds,
        &FitConfig {
            year_center: Some(center),
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ds.pools.len(), 2000);
    assert!(model.matern.sigma2 < 0.1, "σ̂² = {}", model.matern.sigma2);
}

#[test]
fn smoothness_grid_keeps_the_best_profile() {
    let (ds, center) = world(71, 1.0);
    let model = fit(
        &ds,
        &FitConfig {
            nu: NuMode::Grid(vec![0.5, 1.5, 2.5]),
            year_center: Some(center),
            ..FitConfig::default()
        },
    )
    .unwrap();
    let profile = &model.diagnostics.nu_profile;
    assert_eq!(profile.len(), 3);
    let best = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    assert_relative_eq!(model.log_likelihood, best, max_relative = 1e-9);
    assert!(profile.iter().any(|&(nu, ll)| nu == model.matern.nu && ll == best));
}

#[test]
fn exponential_kernel_on_a_grid() {
    for k in 1..=1000 {
        let d = 0.01 * k as f64;
        let c = matern_correlation(d, 0.5).unwrap();
        assert!((c - (-d).exp()).abs() < 1e-10);
    }
}

#[test]
fn kernels_decrease_strictly() {
    for nu in [0.5, 0.8, 1.5, 2.5, 3.2] {
        let mut prev = matern_correlation(0.0, nu).unwrap();
        assert_eq!(prev, 1.0);
        for k in 1..=1500 {
            let c = matern_correlation(0.01 * k as f64, nu).unwrap();
            assert!(c < prev, "ν={nu} d={}", 0.01 * k as f64);
            prev = c;
        }
    }
}
