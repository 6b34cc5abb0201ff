//! Trap scores from cross-validated sensitivity and specificity.
//!
//! `score` is the sensitivity-weighted mean over traps with a defined
//! sensitivity (T*); `score_prime` is specificity alone and covers every trap.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_rows, DataError, TrapSite};
use crate::evaluation::{check_weight, EvaluationError, TrapConfusion};

pub const DEFAULT_WEIGHT: f64 = 0.9;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("sensitivity is undefined (no positive pools in any test fold)")]
    UndefinedSensitivity,
    #[error("specificity is undefined (no negative pools in any test fold)")]
    UndefinedSpecificity,
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error(transparent)]
    Weight(#[from] EvaluationError),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn unit(name: &'static str, value: f64) -> Result<f64, ScoringError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ScoringError::OutOfRange { name, value })
    }
}

/// Traps whose sensitivity is defined. Independent of the weight `m`.
pub fn select_tstar(confusions: &BTreeMap<String, TrapConfusion>) -> BTreeSet<String> {
    confusions
        .values()
        .filter(|c| c.avg_sens.is_some())
        .map(|c| c.trap_id.clone())
        .collect()
}

/// `(m·spec + sens) / (m + 1)`.
pub fn score(avg_sens: Option<f64>, avg_spec: Option<f64>, m: f64) -> Result<f64, ScoringError> {
    check_weight(m)?;
    let sens = unit("avg_sens", avg_sens.ok_or(ScoringError::UndefinedSensitivity)?)?;
    let spec = unit("avg_spec", avg_spec.ok_or(ScoringError::UndefinedSpecificity)?)?;
    Ok((m * spec + sens) / (m + 1.0))
}

pub fn specificity_score(avg_spec: Option<f64>) -> Result<f64, ScoringError> {
    unit("avg_spec", avg_spec.ok_or(ScoringError::UndefinedSpecificity)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapScorecard {
    pub trap_id: String,
    pub avg_sens: Option<f64>,
    pub avg_spec: Option<f64>,
    /// Defined for T* traps that also have a defined specificity.
    pub score: Option<f64>,
    pub score_prime: Option<f64>,
    pub m: f64,
    pub in_tstar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub deciles: [usize; 10],
    pub histogram: [usize; HISTOGRAM_BINS],
}

/// Equal-width bin counts on [0, 1]; 1.0 falls in the last bin.
pub fn histogram<const N: usize>(values: &[f64]) -> [usize; N] {
    let mut counts = [0; N];
    for &v in values {
        let bin = ((v * N as f64).floor() as usize).min(N - 1);
        counts[bin] += 1;
    }
    counts
}

impl ScoreSummary {
    /// `None` for an empty set of scores.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            deciles: histogram(values),
            histogram: histogram(values),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub m: f64,
    pub scorecards: Vec<TrapScorecard>,
    pub tstar_size: usize,
    /// Weighted scores over T*; `None` when no trap has a score.
    pub score_summary: Option<ScoreSummary>,
    pub score_prime_summary: Option<ScoreSummary>,
}

pub fn score_report(
    confusions: &BTreeMap<String, TrapConfusion>,
    m: f64,
) -> Result<ScoreReport, ScoringError> {
    check_weight(m)?;
    let tstar = select_tstar(confusions);
    let mut scorecards = Vec::with_capacity(confusions.len());
    for c in confusions.values() {
        let in_tstar = tstar.contains(&c.trap_id);
        let weighted = if in_tstar {
            match score(c.avg_sens, c.avg_spec, m) {
                Ok(s) => Some(s),
                Err(ScoringError::UndefinedSpecificity) => {
                    log::warn!("trap {} has only positive pools; it has no score", c.trap_id);
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        scorecards.push(TrapScorecard {
            trap_id: c.trap_id.clone(),
            avg_sens: c.avg_sens,
            avg_spec: c.avg_spec,
            score: weighted,
            score_prime: c.avg_spec.map(|s| specificity_score(Some(s))).transpose()?,
            m,
            in_tstar,
        });
    }
    let scores: Vec<f64> = scorecards.iter().filter_map(|s| s.score).collect();
    let primes: Vec<f64> = scorecards.iter().filter_map(|s| s.score_prime).collect();
    Ok(ScoreReport {
        m,
        tstar_size: tstar.len(),
        score_summary: ScoreSummary::of(&scores),
        score_prime_summary: ScoreSummary::of(&primes),
        scorecards,
    })
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `trap_id,latitude,longitude,avg_sens,avg_spec,score,score_prime,in_tstar`.
pub fn write_scores_csv(
    path: &Path,
    report: &ScoreReport,
    sites: &HashMap<&str, &TrapSite>,
) -> Result<(), ScoringError> {
    let header = [
        "trap_id",
        "latitude",
        "longitude",
        "avg_sens",
        "avg_spec",
        "score",
        "score_prime",
        "in_tstar",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for card in &report.scorecards {
        let site = sites.get(card.trap_id.as_str());
        rows.push(vec![
            card.trap_id.clone(),
            optional(site.map(|s| s.latitude)),
            optional(site.map(|s| s.longitude)),
            optional(card.avg_sens),
            optional(card.avg_spec),
            optional(card.score),
            optional(card.score_prime),
            (card.in_tstar as u8).to_string(),
        ]);
    }
    Ok(write_rows(path, &rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ConfusionCounts, N_FOLDS};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn confusion(id: &str, sens: Option<f64>, spec: Option<f64>) -> TrapConfusion {
        TrapConfusion {
            trap_id: id.into(),
            folds: [ConfusionCounts::default(); N_FOLDS],
            avg_sens: sens,
            avg_spec: spec,
        }
    }

    fn map(items: Vec<TrapConfusion>) -> BTreeMap<String, TrapConfusion> {
        items.into_iter().map(|c| (c.trap_id.clone(), c)).collect()
    }

    #[test]
    fn worked_scores() {
        assert_eq!(score(Some(1.0), Some(1.0), 0.3).unwrap(), 1.0);
        assert_eq!(score(Some(0.0), Some(0.0), 0.9).unwrap(), 0.0);
        // (0.9·0.6 + 0.8) / 1.9
        assert_relative_eq!(score(Some(0.8), Some(0.6), 0.9).unwrap(), 1.34 / 1.9, max_relative = 1e-15);
        assert!((score(Some(0.8), Some(0.6), 0.9).unwrap() - 0.705263).abs() < 5e-7);
        assert!(matches!(score(None, Some(0.5), 0.9), Err(ScoringError::UndefinedSensitivity)));
        assert!(matches!(score(Some(0.5), Some(1.5), 0.9), Err(ScoringError::OutOfRange { .. })));
        assert!(matches!(score(Some(0.5), Some(0.5), 0.0), Err(ScoringError::Weight(_))));
    }

    #[test]
    fn specificity_only_score() {
        assert_eq!(specificity_score(Some(0.95)).unwrap(), 0.95);
        assert!(matches!(specificity_score(None), Err(ScoringError::UndefinedSpecificity)));
    }

    #[test]
    fn tstar_needs_a_defined_sensitivity() {
        let c = map(vec![
            confusion("A", None, Some(1.0)),
            confusion("B", Some(1.0), Some(0.5)),
            confusion("C", Some(0.0), Some(0.9)),
        ]);
        let t: Vec<String> = select_tstar(&c).into_iter().collect();
        assert_eq!(t, ["B", "C"]);
        let report = score_report(&c, 0.9).unwrap();
        let a = &report.scorecards[0];
        assert!(!a.in_tstar && a.score.is_none());
        assert_eq!(a.score_prime, Some(1.0));
        assert_eq!(report.score_prime_summary.unwrap().count, 3);
    }

    #[test]
    fn perfect_traps_fill_one_bin() {
        let c = map((0..4).map(|i| confusion(&format!("T{i}"), Some(1.0), Some(1.0))).collect());
        let s = score_report(&c, 0.9).unwrap().score_summary.unwrap();
        assert_eq!((s.mean, s.min, s.max), (1.0, 1.0, 1.0));
        assert_eq!(s.histogram.iter().filter(|&&n| n > 0).count(), 1);
        assert_eq!(s.histogram[HISTOGRAM_BINS - 1], 4);
        assert_eq!(s.deciles[9], 4);
    }

    #[test]
    fn empty_tstar_reports_specificity_only() {
        let c = map(vec![confusion("A", None, Some(0.7)), confusion("B", None, Some(0.9))]);
        let r = score_report(&c, 0.9).unwrap();
        assert_eq!(r.tstar_size, 0);
        assert!(r.score_summary.is_none());
        assert_relative_eq!(r.score_prime_summary.unwrap().mean, 0.8);
    }

    #[test]
    fn all_positive_trap_has_no_score() {
        let c = map(vec![confusion("A", Some(0.5), None)]);
        let r = score_report(&c, 0.9).unwrap();
        assert!(r.scorecards[0].in_tstar);
        assert_eq!(r.scorecards[0].score, None);
        assert!(r.score_summary.is_none());
    }

    #[test]
    fn scores_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let c = map(vec![confusion("A", None, Some(0.75)), confusion("B", Some(1.0), Some(0.5))]);
        let site = TrapSite {
            trap_id: "B".into(),
            latitude: 41.5,
            longitude: -87.25,
            covariates: Default::default(),
        };
        let sites = HashMap::from([("B", &site)]);
        write_scores_csv(&path, &score_report(&c, 1.0).unwrap(), &sites).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "trap_id,latitude,longitude,avg_sens,avg_spec,score,score_prime,in_tstar\n\
             A,,,,0.75,,0.75,0\n\
             B,41.5,-87.25,1,0.5,0.75,0.5,1\n"
        );
    }

    proptest! {
        #[test]
        fn score_is_a_monotone_weighted_mean(
            sens in 0.0f64..=1.0,
            spec in 0.0f64..=1.0,
            bump in 0.0f64..=1.0,
            m in 0.01f64..=1.0,
        ) {
            let s = score(Some(sens), Some(spec), m).unwrap();
            prop_assert!(s >= sens.min(spec) - 1e-15 && s <= sens.max(spec) + 1e-15);
            let sens_up = (sens + bump).min(1.0);
            let spec_up = (spec + bump).min(1.0);
            prop_assert!(score(Some(sens_up), Some(spec), m).unwrap() >= s);
            prop_assert!(score(Some(sens), Some(spec_up), m).unwrap() >= s);
            let mean = score(Some(sens), Some(spec), 1.0).unwrap();
            prop_assert!((mean - 0.5 * (sens + spec)).abs() < 1e-15);
        }

        #[test]
        fn weight_never_changes_tstar(
            traps in prop::collection::vec((prop::option::of(0.0f64..=1.0), prop::option::of(0.0f64..=1.0)), 0..30),
            m1 in 0.01f64..=1.0,
            m2 in 0.01f64..=1.0,
        ) {
            let c = map(traps.iter().enumerate().map(|(i, &(s, p))| confusion(&format!("T{i:02}"), s, p)).collect());
            let membership = |m: f64| -> Vec<bool> {
                score_report(&c, m).unwrap().scorecards.iter().map(|s| s.in_tstar).collect()
            };
            prop_assert_eq!(membership(m1), membership(m2));
        }
    }
}
