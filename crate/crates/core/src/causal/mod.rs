//! Dose-response of the trap score on site covariates, adjusted for the
//! confounders a causal DAG names.

mod adrf;
mod bspline;
mod dag;
mod gps;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adrf::{bootstrap_adrf, estimate_adrf, AdrfEstimate, AdrfOptions, OutcomeModel, MIN_BOOTSTRAP};
pub use bspline::{quantile, BSplineBasis};
pub use dag::CausalDag;
pub use gps::{fit_gps, CovariateMatrix, GpsModel};

use crate::data::{write_rows, DataError, TrapSite};
use crate::scoring::{ScoreReport, TrapScorecard};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("DAG line {line}: {message}")]
    DagSyntax { line: usize, message: String },
    #[error("DAG has a cycle: {0}")]
    Cycle(String),
    #[error("node {0:?} is not in the DAG")]
    UnknownNode(String),
    #[error("exposure and outcome are both {0:?}")]
    SameNode(String),
    #[error("effect of {exposure} on {outcome} is not identifiable: every adjustment leaves a backdoor path open")]
    NotIdentifiable { exposure: String, outcome: String },
    #[error("site covariate column {0:?} does not exist")]
    MissingColumn(String),
    #[error("{0}")]
    LengthMismatch(String),
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("{rows} rows are too few for {columns} columns")]
    TooFewRows { rows: usize, columns: usize },
    #[error("column {column} is collinear with [{}]", .collinear_with.join(", "))]
    RankDeficient {
        column: String,
        collinear_with: Vec<String>,
    },
    #[error("treatment residual variance {0:e} is degenerate")]
    DegenerateVariance(f64),
    #[error("spline: {0}")]
    Spline(String),
    #[error("grid point {x} lies outside the observed treatment range [{lower}, {upper}]")]
    Extrapolation { x: f64, lower: f64, upper: f64 },
    #[error("grid: {0}")]
    Grid(String),
    #[error("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("bootstrap replicate {replicate} failed on every draw: {source}")]
    BootstrapExhausted {
        replicate: usize,
        #[source]
        source: Box<CausalError>,
    },
    #[error("exposure {exposure}: {source}")]
    Exposure {
        exposure: String,
        #[source]
        source: Box<CausalError>,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which trap score is the outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Weighted score, defined on T* only.
    #[default]
    Score,
    /// Specificity score, defined on every trap with negative pools.
    ScorePrime,
}

impl ScoreKind {
    pub fn of(self, card: &TrapScorecard) -> Option<f64> {
        match self {
            Self::Score => card.score,
            Self::ScorePrime => card.score_prime,
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "score" => Ok(Self::Score),
            "score_prime" => Ok(Self::ScorePrime),
            other => Err(format!("unknown score kind {other:?} (expected score|score_prime)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase3Config {
    /// DAG node standing for the trap score.
    pub outcome_node: String,
    pub score: ScoreKind,
    pub grid_points: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub adrf: AdrfOptions,
}

impl Default for Phase3Config {
    fn default() -> Self {
        Self {
            outcome_node: "score".into(),
            score: ScoreKind::default(),
            grid_points: 50,
            lower_quantile: 0.05,
            upper_quantile: 0.95,
            n_boot: 500,
            seed: 1,
            adrf: AdrfOptions::default(),
        }
    }
}

impl Phase3Config {
    pub fn validate(&self) -> Result<(), CausalError> {
        if self.grid_points < 2 {
            return Err(CausalError::Config("grid_points must be at least 2".into()));
        }
        if !(0.0 <= self.lower_quantile && self.lower_quantile < self.upper_quantile && self.upper_quantile <= 1.0) {
            return Err(CausalError::Config(format!(
                "grid quantiles must satisfy 0 <= lower < upper <= 1, got {} and {}",
                self.lower_quantile, self.upper_quantile
            )));
        }
        if self.n_boot < MIN_BOOTSTRAP {
            return Err(CausalError::TooFewReplicates(self.n_boot));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureResult {
    pub exposure: String,
    pub identifiable: bool,
    /// Every minimal backdoor set; the first one is used.
    pub minimal_sets: Vec<Vec<String>>,
    pub adjustment_set: Option<Vec<String>>,
    pub n_units: usize,
    pub estimate: Option<AdrfEstimate>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase3Report {
    pub outcome: ScoreKind,
    pub outcome_node: String,
    pub n_boot: usize,
    pub exposures: Vec<ExposureResult>,
}

fn site_column(sites: &[&TrapSite], name: &str) -> Result<Vec<f64>, CausalError> {
    sites
        .iter()
        .map(|s| {
            s.covariates
                .get(name)
                .copied()
                .ok_or_else(|| CausalError::MissingColumn(name.to_string()))
        })
        .collect()
}

/// Evenly spaced points between two quantiles of `values`.
pub fn quantile_grid(values: &[f64], lower: f64, upper: f64, points: usize) -> Result<Vec<f64>, CausalError> {
    let s = bspline::sorted(values);
    if s.is_empty() {
        return Err(CausalError::Grid("no treatment values".into()));
    }
    let (lo, hi) = (quantile(&s, lower), quantile(&s, upper));
    if !(hi > lo) {
        return Err(CausalError::Grid(format!("treatment quantiles coincide at {lo}")));
    }
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect())
}

/// One dose-response curve per exposure. Exposures without a valid
/// adjustment set are reported, not fatal.
pub fn run_phase3(
    report: &ScoreReport,
    sites: &[TrapSite],
    dag: &CausalDag,
    exposures: &[String],
    config: &Phase3Config,
) -> Result<Phase3Report, CausalError> {
    config.validate()?;
    if !dag.contains(&config.outcome_node) {
        return Err(CausalError::UnknownNode(config.outcome_node.clone()));
    }
    let columns: BTreeSet<&str> = sites
        .iter()
        .flat_map(|s| s.covariates.keys().map(String::as_str))
        .collect();
    let by_id: std::collections::HashMap<&str, &TrapSite> =
        sites.iter().map(|s| (s.trap_id.as_str(), s)).collect();
    let units: Vec<(&TrapSite, f64)> = report
        .scorecards
        .iter()
        .filter_map(|c| Some((*by_id.get(c.trap_id.as_str())?, config.score.of(c)?)))
        .collect();
    let unit_sites: Vec<&TrapSite> = units.iter().map(|u| u.0).collect();
    let outcome: Vec<f64> = units.iter().map(|u| u.1).collect();

    let mut results = Vec::with_capacity(exposures.len());
    for exposure in exposures {
        if !dag.contains(exposure) {
            return Err(CausalError::UnknownNode(exposure.clone()));
        }
        if !columns.contains(exposure.as_str()) {
            return Err(CausalError::MissingColumn(exposure.clone()));
        }
        let sets = match dag.backdoor_adjustment_sets(exposure, &config.outcome_node) {
            Ok(sets) => sets,
            Err(e @ CausalError::NotIdentifiable { .. }) => {
                log::warn!("{e}");
                results.push(ExposureResult {
                    exposure: exposure.clone(),
                    identifiable: false,
                    minimal_sets: vec![],
                    adjustment_set: None,
                    n_units: units.len(),
                    estimate: None,
                    note: Some("not identifiable".into()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let minimal_sets: Vec<Vec<String>> = sets.iter().map(|s| s.iter().cloned().collect()).collect();
        let chosen = minimal_sets[0].clone();
        let wrap = |source: CausalError| CausalError::Exposure {
            exposure: exposure.clone(),
            source: Box::new(source),
        };
        let treatment = site_column(&unit_sites, exposure)?;
        let adjust = chosen
            .iter()
            .map(|name| Ok((name.clone(), site_column(&unit_sites, name)?)))
            .collect::<Result<Vec<_>, CausalError>>()?;
        let covariates = CovariateMatrix::from_columns(units.len(), adjust)?;
        let grid = quantile_grid(&treatment, config.lower_quantile, config.upper_quantile, config.grid_points)
            .map_err(wrap)?;
        let estimate = bootstrap_adrf(
            &outcome,
            &treatment,
            &covariates,
            &grid,
            config.n_boot,
            config.seed,
            &config.adrf,
        )
        .map_err(wrap)?;
        results.push(ExposureResult {
            exposure: exposure.clone(),
            identifiable: true,
            minimal_sets,
            adjustment_set: Some(chosen),
            n_units: units.len(),
            estimate: Some(estimate),
            note: None,
        });
    }
    Ok(Phase3Report {
        outcome: config.score,
        outcome_node: config.outcome_node.clone(),
        n_boot: config.n_boot,
        exposures: results,
    })
}

/// `exposure,x,mu,se`; `se` is blank for a point estimate.
pub fn write_adrf_csv(path: &Path, exposure: &str, estimate: &AdrfEstimate) -> Result<(), CausalError> {
    let mut rows = vec![["exposure", "x", "mu", "se"].iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for (i, (x, mu)) in estimate.grid.iter().zip(&estimate.mu).enumerate() {
        rows.push(vec![
            exposure.to_string(),
            x.to_string(),
            mu.to_string(),
            estimate.se.as_ref().map(|s| s[i].to_string()).unwrap_or_default(),
        ]);
    }
    Ok(write_rows(path, &rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::TrapScorecard;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(n: usize) -> (ScoreReport, Vec<TrapSite>) {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cards = Vec::new();
        let mut sites = Vec::new();
        for i in 0..n {
            let impervious: f64 = rng.random();
            let low_density = (0.6 * impervious + 0.4 * rng.random::<f64>()).min(1.0);
            let score = (0.3 + 0.3 * low_density + 0.2 * impervious + 0.05 * rng.random::<f64>()).min(1.0);
            let id = format!("T{i:03}");
            sites.push(TrapSite {
                trap_id: id.clone(),
                latitude: 41.0,
                longitude: -87.0,
                covariates: [("impervious".to_string(), impervious), ("low_density".to_string(), low_density)]
                    .into_iter()
                    .collect(),
            });
            cards.push(TrapScorecard {
                trap_id: id,
                avg_sens: Some(score),
                avg_spec: Some(score),
                score: Some(score),
                score_prime: Some(score),
                m: 0.9,
                in_tstar: true,
            });
        }
        let report = ScoreReport {
            m: 0.9,
            scorecards: cards,
            tstar_size: n,
            score_summary: None,
            score_prime_summary: None,
        };
        (report, sites)
    }

    fn dag() -> CausalDag {
        CausalDag::parse("impervious -> low_density\nimpervious -> score\nlow_density -> score\nhidden:u -> impervious\nu -> score")
            .unwrap()
    }

    fn config() -> Phase3Config {
        Phase3Config {
            n_boot: 100,
            ..Phase3Config::default()
        }
    }

    #[test]
    fn adjusts_and_reports_each_exposure() {
        let (report, sites) = fixture(300);
        let out = run_phase3(
            &report,
            &sites,
            &dag(),
            &["low_density".to_string(), "impervious".to_string()],
            &config(),
        )
        .unwrap();
        let low = &out.exposures[0];
        assert_eq!(low.adjustment_set, Some(vec!["impervious".to_string()]));
        let est = low.estimate.as_ref().unwrap();
        assert_eq!(est.grid.len(), 50);
        assert!((est.slope() - 0.3).abs() < 0.1, "{}", est.slope());
        let imp = &out.exposures[1];
        assert!(!imp.identifiable && imp.estimate.is_none());
    }

    #[test]
    fn unknown_exposures_are_named() {
        let (report, sites) = fixture(50);
        match run_phase3(&report, &sites, &dag(), &["canopy".to_string()], &config()) {
            Err(CausalError::UnknownNode(n)) => assert_eq!(n, "canopy"),
            other => panic!("{other:?}"),
        }
        let dag = CausalDag::parse("canopy -> score").unwrap();
        match run_phase3(&report, &sites, &dag, &["canopy".to_string()], &config()) {
            Err(CausalError::MissingColumn(n)) => assert_eq!(n, "canopy"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_spans_the_inner_quantiles() {
        let values: Vec<f64> = (0..=100).map(f64::from).collect();
        let g = quantile_grid(&values, 0.05, 0.95, 50).unwrap();
        assert_eq!((g[0], g[49]), (5.0, 95.0));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(quantile_grid(&[2.0; 10], 0.05, 0.95, 50).is_err());
    }

    #[test]
    fn adrf_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adrf.csv");
        let est = AdrfEstimate {
            grid: vec![0.5, 1.0],
            mu: vec![0.25, 0.75],
            se: Some(vec![0.125, 0.0625]),
            n_boot: 100,
            gps: GpsModel {
                coefficients: vec![0.0],
                covariate_names: vec![],
                sigma2: 1.0,
            },
        };
        write_adrf_csv(&path, "pop", &est).unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            "exposure,x,mu,se\npop,0.5,0.25,0.125\npop,1,0.75,0.0625\n"
        );
    }
}
