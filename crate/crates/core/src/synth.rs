//! Synthetic surveillance worlds with known ground truth.
//!
//! Traps are placed uniformly in a lat/lon box with a minimum separation, and
//! each trap is visited every other week. A responsive visit emits one human
//! case within `case_offset_km` of the trap in the following week. With the
//! separation exceeding `label_radius_km + case_offset_km` and visits two
//! weeks apart, labelling the generated cases reproduces the generated
//! responses exactly.
//!
//! Trap quality is the probability that a visit's response follows the
//! logistic model; otherwise it is drawn from the trap's average rate, so
//! the pool covariates carry no signal for that visit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    iso_weeks_in_year, write_dataset, DataError, Dataset, GeoPoint, HumanCase, PoolObservation,
    TrapSite,
};
use crate::glmm::{covariance_cholesky, GlmmCoefficients, GlmmError, MaternParams};
use crate::prevalence::{annotate_risk, Grouping, PrevalenceError};

const PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("could not place {n_traps} traps {separation_km} km apart inside the region; enlarge the region or reduce n_traps")]
    Placement { n_traps: usize, separation_km: f64 },
    #[error("random-field covariance failed ({0}); use a larger nugget")]
    Covariance(GlmmError),
    #[error(transparent)]
    Prevalence(#[from] PrevalenceError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("writing ground truth: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

/// Marginal distribution of a site covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    /// `intercept + slope·parent + N(0, noise_sd²)`; the parent must be
    /// listed earlier.
    Linear {
        parent: String,
        intercept: f64,
        slope: f64,
        noise_sd: f64,
    },
}

/// Contribution of a covariate to trap quality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityEffect {
    #[default]
    None,
    Linear { slope: f64 },
    /// `slope · min(x, knee)`: rises until `knee`, flat beyond.
    Plateau { slope: f64, knee: f64 },
}

impl QualityEffect {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Linear { slope } => slope * x,
            Self::Plateau { slope, knee } => slope * x.min(knee),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub distribution: CovariateDistribution,
    #[serde(default)]
    pub effect: QualityEffect,
}

/// Weekly infection rate of mosquitoes at a trap:
/// `logistic(base_logit + seasonal_amplitude·sin(π·season) + u_trap)`, with
/// `season` running from 0 to 1 over the sampled weeks and `u_trap ~ N(0, trap_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectionConfig {
    pub base_logit: f64,
    pub seasonal_amplitude: f64,
    pub trap_sd: f64,
}

impl Default for InfectionConfig {
    fn default() -> Self {
        Self {
            base_logit: -5.5,
            seasonal_amplitude: 1.5,
            trap_sd: 0.5,
        }
    }
}

/// Missing fields take their default values when deserialised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_traps: usize,
    pub region: Region,
    pub years: Vec<i32>,
    pub first_week: u32,
    pub weeks_per_year: u32,
    pub pools_per_visit: u32,
    pub true_beta: GlmmCoefficients,
    pub true_matern: MaternParams,
    pub covariate_specs: Vec<CovariateSpec>,
    /// Quality before covariate effects; the total is clamped to [0, 1].
    pub base_quality: f64,
    pub infection: InfectionConfig,
    /// Mean of the negative-binomial surplus of mosquitoes caught beyond the
    /// tested pools.
    pub mean_surplus: f64,
    pub surplus_dispersion: f64,
    pub min_separation_km: f64,
    pub case_offset_km: f64,
    pub label_radius_km: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_traps: 100,
            region: Region {
                lat_min: 41.60,
                lat_max: 42.05,
                lon_min: -87.95,
                lon_max: -87.50,
            },
            years: vec![2017, 2018],
            first_week: 22,
            weeks_per_year: 20,
            pools_per_visit: 1,
            true_beta: GlmmCoefficients {
                beta0: -4.0,
                beta1: 0.02,
                beta2: 1.2,
                beta3: 4.0,
                beta4: 0.05,
                beta5: 0.3,
            },
            true_matern: MaternParams {
                nu: 0.5,
                rho: 5.0,
                sigma2: 1.0,
                nugget: 1e-6,
            },
            covariate_specs: vec![],
            base_quality: 1.0,
            infection: InfectionConfig::default(),
            mean_surplus: 30.0,
            surplus_dispersion: 2.0,
            min_separation_km: 2.5,
            case_offset_km: 0.5,
            label_radius_km: 1.5,
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_traps < 2 {
            return bad("n_traps must be ≥ 2".into());
        }
        let r = &self.region;
        if !(r.lat_min < r.lat_max && r.lon_min < r.lon_max)
            || r.lat_min < -90.0
            || r.lat_max > 90.0
            || r.lon_min < -180.0
            || r.lon_max > 180.0
        {
            return bad("region must be a non-empty lat/lon box".into());
        }
        if self.years.is_empty() {
            return bad("at least one year is required".into());
        }
        if self.weeks_per_year < 2 || self.first_week < 1 || self.first_week + self.weeks_per_year - 1 > 52 {
            return bad("sampled weeks must lie within weeks 1..52 and number at least 2".into());
        }
        if self.pools_per_visit < 1 {
            return bad("pools_per_visit must be ≥ 1".into());
        }
        self.true_matern
            .validate()
            .map_err(|e| SynthError::Config(e.to_string()))?;
        if self.case_offset_km < 0.0 || self.label_radius_km <= self.case_offset_km {
            return bad("need 0 ≤ case_offset_km < label_radius_km".into());
        }
        if self.min_separation_km <= self.label_radius_km + self.case_offset_km {
            return bad(format!(
                "min_separation_km must exceed label_radius_km + case_offset_km = {} for label consistency",
                self.label_radius_km + self.case_offset_km
            ));
        }
        if !(self.mean_surplus >= 0.0 && self.surplus_dispersion > 0.0) {
            return bad("mean_surplus must be ≥ 0 and surplus_dispersion > 0".into());
        }
        if self.infection.trap_sd < 0.0 {
            return bad("infection.trap_sd must be ≥ 0".into());
        }
        let mut seen: Vec<&str> = Vec::new();
        for spec in &self.covariate_specs {
            match &spec.distribution {
                CovariateDistribution::Uniform { low, high } if !(low < high) => {
                    return bad(format!("{}: uniform needs low < high", spec.name))
                }
                CovariateDistribution::Normal { sd, .. } if *sd < 0.0 => {
                    return bad(format!("{}: sd must be ≥ 0", spec.name))
                }
                CovariateDistribution::Linear {
                    parent, noise_sd, ..
                } => {
                    if !seen.contains(&parent.as_str()) {
                        return bad(format!("{}: parent {parent} must be listed earlier", spec.name));
                    }
                    if *noise_sd < 0.0 {
                        return bad(format!("{}: noise_sd must be ≥ 0", spec.name));
                    }
                }
                _ => {}
            }
            if seen.contains(&spec.name.as_str()) {
                return bad(format!("duplicate covariate {}", spec.name));
            }
            seen.push(&spec.name);
        }
        Ok(())
    }

    /// Median of the configured years; the reference point of the year term.
    pub fn year_center(&self) -> f64 {
        let mut y: Vec<f64> = self.years.iter().map(|&v| v as f64).collect();
        y.sort_by(f64::total_cmp);
        let n = y.len();
        if n % 2 == 1 {
            y[n / 2]
        } else {
            0.5 * (y[n / 2 - 1] + y[n / 2])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapTruth {
    pub trap_id: String,
    /// Realised random-field value at the trap.
    pub effect: f64,
    pub quality: f64,
    /// Trap-level shift of the infection logit.
    pub infection_shift: f64,
    /// Visits happen on weeks `first_week + parity + 2k`.
    pub parity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub beta: GlmmCoefficients,
    pub matern: MaternParams,
    pub year_center: f64,
    pub traps: Vec<TrapTruth>,
    pub quality_effects: BTreeMap<String, QualityEffect>,
    pub n_pools: usize,
    pub n_responsive_visits: usize,
}

/// Samples a world and its latent values.
pub fn generate_world(config: &WorldConfig) -> Result<(Dataset, GroundTruth), SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let locations = place_traps(config, &mut rng)?;
    let n = locations.len();
    let trap_ids: Vec<String> = (0..n).map(|i| format!("T{:03}", i + 1)).collect();

    let mut sites: Vec<TrapSite> = Vec::with_capacity(n);
    let mut quality = vec![config.base_quality; n];
    for (i, loc) in locations.iter().enumerate() {
        let mut covariates = BTreeMap::new();
        for spec in &config.covariate_specs {
            let value = match &spec.distribution {
                CovariateDistribution::Uniform { low, high } => rng.random_range(*low..*high),
                CovariateDistribution::Normal { mean, sd } => mean + sd * std_normal.sample(&mut rng),
                CovariateDistribution::Linear {
                    parent,
                    intercept,
                    slope,
                    noise_sd,
                } => intercept + slope * covariates[parent] + noise_sd * std_normal.sample(&mut rng),
            };
            quality[i] += spec.effect.apply(value);
            covariates.insert(spec.name.clone(), value);
        }
        quality[i] = quality[i].clamp(0.0, 1.0);
        sites.push(TrapSite {
            trap_id: trap_ids[i].clone(),
            latitude: loc.latitude,
            longitude: loc.longitude,
            covariates,
        });
    }

    let field = sample_field(config, &locations, &mut rng, &std_normal)?;
    let infection_shift: Vec<f64> = (0..n)
        .map(|_| config.infection.trap_sd * std_normal.sample(&mut rng))
        .collect();
    let parity: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();

    let surplus_gamma = Gamma::new(
        config.surplus_dispersion,
        config.mean_surplus.max(1e-12) / config.surplus_dispersion,
    )
    .map_err(|e| SynthError::Config(e.to_string()))?;

    // visits in (year, week, trap) order
    let mut pools = Vec::new();
    let mut visit_of_pool = Vec::new();
    let mut visits: Vec<(usize, i32, u32)> = Vec::new();
    let last_week = config.first_week + config.weeks_per_year - 1;
    for &year in &config.years {
        for week in config.first_week..=last_week {
            let offset = week - config.first_week;
            let season = offset as f64 / (config.weeks_per_year - 1) as f64;
            for trap in 0..n {
                if offset % 2 != parity[trap] {
                    continue;
                }
                let logit = config.infection.base_logit
                    + config.infection.seasonal_amplitude * (std::f64::consts::PI * season).sin()
                    + infection_shift[trap];
                let infection_rate = 1.0 / (1.0 + (-logit).exp());
                let day = rng.random_range(0..7);
                let sizes: Vec<u32> = (0..config.pools_per_visit)
                    .map(|_| rng.random_range(10..=50))
                    .collect();
                let surplus = if config.mean_surplus > 0.0 {
                    let lambda = surplus_gamma.sample(&mut rng);
                    if lambda > 0.0 {
                        Poisson::new(lambda)
                            .map(|p| p.sample(&mut rng) as u32)
                            .unwrap_or(0)
                    } else {
                        0
                    }
                } else {
                    0
                };
                let count = sizes.iter().sum::<u32>() + surplus;
                for &size in &sizes {
                    let p_pos = 1.0 - (1.0 - infection_rate).powi(size as i32);
                    pools.push(PoolObservation {
                        trap_id: trap_ids[trap].clone(),
                        year,
                        week,
                        day_of_week: day,
                        pool_size: size,
                        test_positive: rng.random::<f64>() < p_pos,
                        mosquito_count_week: count,
                        pools_in_week: config.pools_per_visit,
                        pools_on_day: config.pools_per_visit,
                        risk: None,
                        response: false,
                    });
                    visit_of_pool.push(visits.len());
                }
                visits.push((trap, year, week));
            }
        }
    }

    let annotated = annotate_risk(
        &Dataset {
            sites: vec![],
            pools,
            cases: vec![],
        },
        Grouping::TrapWeek,
    )?;
    let mut pools = annotated.pools;

    let beta = config.true_beta.to_array();
    let year_center = config.year_center();
    let linear = |p: &PoolObservation| -> f64 {
        beta[0]
            + beta[1] * p.pool_size as f64
            + beta[2] * if p.test_positive { 1.0 } else { 0.0 }
            + beta[3] * p.risk.unwrap_or(0.0)
            + beta[4] * p.week as f64
            + beta[5] * (p.year as f64 - year_center)
    };

    // First pool of each visit decides the visit's response.
    let mut first_pool = vec![usize::MAX; visits.len()];
    for (i, &v) in visit_of_pool.iter().enumerate() {
        if first_pool[v] == usize::MAX {
            first_pool[v] = i;
        }
    }
    let mut trap_mean = vec![(0.0, 0usize); n];
    for (v, &(trap, _, _)) in visits.iter().enumerate() {
        trap_mean[trap].0 += linear(&pools[first_pool[v]]);
        trap_mean[trap].1 += 1;
    }

    let mut responsive = vec![false; visits.len()];
    let mut cases = Vec::new();
    for (v, &(trap, year, week)) in visits.iter().enumerate() {
        let eta = if rng.random::<f64>() < quality[trap] {
            linear(&pools[first_pool[v]]) + field[trap]
        } else {
            let (sum, count) = trap_mean[trap];
            sum / count.max(1) as f64 + field[trap]
        };
        let p = 1.0 / (1.0 + (-eta).exp());
        if rng.random::<f64>() < p {
            responsive[v] = true;
            let distance = config.case_offset_km * rng.random::<f64>();
            let bearing = rng.random::<f64>() * std::f64::consts::TAU;
            let point = locations[trap].destination(distance, bearing);
            let (case_year, case_week) = if week + 1 > iso_weeks_in_year(year) {
                (year + 1, 1)
            } else {
                (year, week + 1)
            };
            cases.push(HumanCase {
                latitude: point.latitude,
                longitude: point.longitude,
                year: case_year,
                week: case_week,
            });
        }
    }
    for (i, pool) in pools.iter_mut().enumerate() {
        pool.response = responsive[visit_of_pool[i]];
        pool.risk = None;
    }

    let truth = GroundTruth {
        seed: config.seed,
        beta: config.true_beta,
        matern: config.true_matern,
        year_center,
        traps: (0..n)
            .map(|i| TrapTruth {
                trap_id: trap_ids[i].clone(),
                effect: field[i],
                quality: quality[i],
                infection_shift: infection_shift[i],
                parity: parity[i],
            })
            .collect(),
        quality_effects: config
            .covariate_specs
            .iter()
            .map(|s| (s.name.clone(), s.effect))
            .collect(),
        n_pools: pools.len(),
        n_responsive_visits: responsive.iter().filter(|&&r| r).count(),
    };
    Ok((
        Dataset {
            sites,
            pools,
            cases,
        },
        truth,
    ))
}

fn place_traps(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<GeoPoint>, SynthError> {
    let r = &config.region;
    let mut placed: Vec<GeoPoint> = Vec::with_capacity(config.n_traps);
    let mut attempts = 0;
    while placed.len() < config.n_traps {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(SynthError::Placement {
                n_traps: config.n_traps,
                separation_km: config.min_separation_km,
            });
        }
        let candidate = GeoPoint::new(
            rng.random_range(r.lat_min..r.lat_max),
            rng.random_range(r.lon_min..r.lon_max),
        );
        if placed
            .iter()
            .all(|p| p.distance_km(&candidate) >= config.min_separation_km)
        {
            placed.push(candidate);
        }
    }
    Ok(placed)
}

fn sample_field(
    config: &WorldConfig,
    locations: &[GeoPoint],
    rng: &mut ChaCha8Rng,
    std_normal: &Normal<f64>,
) -> Result<Vec<f64>, SynthError> {
    let z: Vec<f64> = (0..locations.len()).map(|_| std_normal.sample(rng)).collect();
    if config.true_matern.sigma2 == 0.0 {
        return Ok(vec![0.0; locations.len()]);
    }
    let (chol, _) = covariance_cholesky(locations, &config.true_matern).map_err(SynthError::Covariance)?;
    let field = chol.l() * nalgebra::DVector::from_vec(z);
    Ok(field.iter().copied().collect())
}

/// Writes `pools.csv`, `sites.csv`, `cases.csv` and `ground_truth.json` into `dir`.
pub fn write_world(dir: &Path, dataset: &Dataset, truth: &GroundTruth) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    write_dataset(
        dataset,
        &dir.join("pools.csv"),
        &dir.join("sites.csv"),
        &dir.join("cases.csv"),
    )?;
    let json = serde_json::to_string_pretty(truth).expect("ground truth serialises");
    std::fs::write(dir.join("ground_truth.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_responses;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_traps: 40,
            seed,
            covariate_specs: vec![
                CovariateSpec {
                    name: "population".into(),
                    distribution: CovariateDistribution::Uniform {
                        low: 0.0,
                        high: 20_000.0,
                    },
                    effect: QualityEffect::Plateau {
                        slope: 6e-5,
                        knee: 10_000.0,
                    },
                },
                CovariateSpec {
                    name: "canopy".into(),
                    distribution: CovariateDistribution::Linear {
                        parent: "population".into(),
                        intercept: 0.4,
                        slope: -1e-5,
                        noise_sd: 0.05,
                    },
                    effect: QualityEffect::None,
                },
            ],
            base_quality: 0.3,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn labels_are_reproduced_by_the_labeller() {
        for seed in 1..4 {
            let (ds, _) = generate_world(&small(seed)).unwrap();
            ds.validate().unwrap();
            let relabelled = label_responses(&ds, 1.5, 2).unwrap();
            let a: Vec<bool> = ds.pools.iter().map(|p| p.response).collect();
            let b: Vec<bool> = relabelled.pools.iter().map(|p| p.response).collect();
            assert_eq!(a, b, "seed {seed}");
            assert!(a.iter().any(|&r| r) && a.iter().any(|&r| !r));
        }
    }

    #[test]
    fn multiple_pools_per_visit_stay_consistent() {
        let config = WorldConfig {
            pools_per_visit: 3,
            ..small(9)
        };
        let (ds, truth) = generate_world(&config).unwrap();
        ds.validate().unwrap();
        assert_eq!(truth.n_pools, ds.pools.len());
        let relabelled = label_responses(&ds, 1.5, 2).unwrap();
        assert_eq!(relabelled.pools, ds.pools);
    }

    #[test]
    fn seed_determines_the_world() {
        let (a, ta) = generate_world(&small(5)).unwrap();
        let (b, tb) = generate_world(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_world(&small(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_variance_field_is_identically_zero() {
        let mut config = small(2);
        config.true_matern.sigma2 = 0.0;
        config.true_matern.nugget = 0.0;
        let (_, truth) = generate_world(&config).unwrap();
        assert!(truth.traps.iter().all(|t| t.effect == 0.0));
    }

    #[test]
    fn quality_follows_the_plateau() {
        let (ds, truth) = generate_world(&small(3)).unwrap();
        for (site, t) in ds.sites.iter().zip(&truth.traps) {
            let pop = site.covariates["population"];
            let want = (0.3 + 6e-5 * pop.min(10_000.0)).clamp(0.0, 1.0);
            assert!((t.quality - want).abs() < 1e-12);
        }
    }

    #[test]
    fn crowded_region_is_reported() {
        let config = WorldConfig {
            n_traps: 50,
            region: Region {
                lat_min: 41.80,
                lat_max: 41.82,
                lon_min: -87.70,
                lon_max: -87.68,
            },
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&config), Err(SynthError::Placement { .. })));
    }

    #[test]
    fn inconsistent_geometry_is_rejected() {
        let config = WorldConfig {
            min_separation_km: 1.9,
            ..WorldConfig::default()
        };
        assert!(matches!(config.validate(), Err(SynthError::Config(_))));
    }

    #[test]
    fn writes_the_four_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, truth) = generate_world(&small(4)).unwrap();
        write_world(dir.path(), &ds, &truth).unwrap();
        for f in ["pools.csv", "sites.csv", "cases.csv", "ground_truth.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = crate::data::parse_dataset(
            &dir.path().join("pools.csv"),
            &dir.path().join("sites.csv"),
            &dir.path().join("cases.csv"),
        )
        .unwrap();
        assert_eq!(back.pools.len(), ds.pools.len());
    }
}
