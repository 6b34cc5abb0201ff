//! Per-year stratified five-fold cross-validation of the case model, ROC
//! curves, weighted threshold choice and per-trap confusion statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_rows, DataError, Dataset};
use crate::glmm::{fit, predict_prob, FitConfig, FittedGlmm, GlmmError};

pub const N_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("ROC curve needs both classes among the labels")]
    OneClass,
    #[error("{labels} labels but {probs} probabilities")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("probability at index {0} is not in [0, 1]")]
    InvalidProbability(usize),
    #[error("sensitivity weight m must lie in (0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: GlmmError,
    },
    #[error("fold {fold}: {reason}")]
    FoldData { fold: usize, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

pub fn check_weight(m: f64) -> Result<(), EvaluationError> {
    if m > 0.0 && m <= 1.0 {
        Ok(())
    } else {
        Err(EvaluationError::InvalidWeight(m))
    }
}

/// Fold index of every pool, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_index: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> [usize; N_FOLDS] {
        let mut sizes = [0; N_FOLDS];
        for &f in &self.fold_index {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each year's pools and deals them to folds in turn, so fold sizes
/// within a year differ by at most one.
pub fn make_folds(dataset: &Dataset, seed: u64) -> FoldAssignment {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, pool) in dataset.pools.iter().enumerate() {
        by_year.entry(pool.year).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_index = vec![0; dataset.pools.len()];
    for (year, mut indices) in by_year {
        if indices.len() < N_FOLDS {
            log::warn!(
                "year {year} has only {} pools; some folds get none of them",
                indices.len()
            );
        }
        indices.shuffle(&mut rng);
        for (position, &i) in indices.iter().enumerate() {
            fold_index[i] = position % N_FOLDS;
        }
    }
    FoldAssignment { fold_index, seed }
}

/// Points `(FPR(k), TPR(k))` for ascending thresholds `k`; a pool is called
/// positive when its probability exceeds `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl RocCurve {
    /// Area under the curve by the trapezoid rule.
    pub fn auc(&self) -> f64 {
        let n = self.thresholds.len();
        (1..n)
            .map(|i| {
                // thresholds ascend, so FPR descends
                let dx = self.fpr[i - 1] - self.fpr[i];
                dx * 0.5 * (self.tpr[i - 1] + self.tpr[i])
            })
            .sum()
    }
}

pub fn roc_curve(labels: &[bool], probs: &[f64]) -> Result<RocCurve, EvaluationError> {
    if labels.len() != probs.len() {
        return Err(EvaluationError::LengthMismatch {
            labels: labels.len(),
            probs: probs.len(),
        });
    }
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(EvaluationError::InvalidProbability(i));
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&y, &p) in labels.iter().zip(probs) {
        if y {
            pos.push(p)
        } else {
            neg.push(p)
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(EvaluationError::OneClass);
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = probs.to_vec();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let above = |sorted: &[f64], k: f64| sorted.len() - sorted.partition_point(|&p| p <= k);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let tpr = thresholds.iter().map(|&k| above(&pos, k) as f64 / np).collect();
    let fpr = thresholds.iter().map(|&k| above(&neg, k) as f64 / nn).collect();
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
    })
}

/// Objective values this close to the maximum count as ties. Exact ties are
/// common (counts over shared denominators) and rounding must not break them.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Threshold maximising `TPR(k) − m·FPR(k)`; ties go to the smaller threshold.
pub fn optimal_threshold(roc: &RocCurve, m: f64) -> f64 {
    roc.thresholds[optimal_index(roc, m)]
}

pub fn optimal_index(roc: &RocCurve, m: f64) -> usize {
    let values: Vec<f64> = roc.tpr.iter().zip(&roc.fpr).map(|(t, f)| t - m * f).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= best - TIE_TOLERANCE)
        .expect("a ROC curve has at least two points")
}

/// Which predictions choose the classification threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Each fold's own test predictions.
    #[default]
    PerFoldTest,
    /// Each fold's training predictions.
    PerFoldTrain,
    /// One threshold from all out-of-fold predictions, shared by every fold.
    GlobalTest,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" | "per_fold_test" => Ok(Self::PerFoldTest),
            "train" | "per_fold_train" => Ok(Self::PerFoldTrain),
            "global" | "global_test" => Ok(Self::GlobalTest),
            other => Err(format!("unknown threshold policy {other:?} (expected test|train|global)")),
        }
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerFoldTest => "test",
            Self::PerFoldTrain => "train",
            Self::GlobalTest => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub fit: FitConfig,
    /// Sensitivity weight in (0, 1].
    pub m: f64,
    pub seed: u64,
    pub threshold: ThresholdPolicy,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            m: 0.9,
            seed: 1,
            threshold: ThresholdPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

/// Per-fold confusion counts of one trap. Averages run over the folds whose
/// denominator is positive and are `None` when there is no such fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapConfusion {
    pub trap_id: String,
    pub folds: [ConfusionCounts; N_FOLDS],
    pub avg_sens: Option<f64>,
    pub avg_spec: Option<f64>,
}

impl TrapConfusion {
    fn from_folds(trap_id: String, folds: [ConfusionCounts; N_FOLDS]) -> Self {
        let average = |ratios: Vec<f64>| {
            (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
        };
        let sens = folds
            .iter()
            .filter(|c| c.positives() > 0)
            .map(|c| c.tp as f64 / c.positives() as f64)
            .collect();
        let spec = folds
            .iter()
            .filter(|c| c.negatives() > 0)
            .map(|c| c.tn as f64 / c.negatives() as f64)
            .collect();
        Self {
            trap_id,
            folds,
            avg_sens: average(sens),
            avg_spec: average(spec),
        }
    }

    pub fn n_pos(&self) -> usize {
        self.folds.iter().map(ConfusionCounts::positives).sum()
    }

    pub fn n_neg(&self) -> usize {
        self.folds.iter().map(ConfusionCounts::negatives).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: FoldAssignment,
    pub fold_summaries: Vec<FoldSummary>,
    /// ROC of each fold's test predictions (absent for one-class folds).
    pub rocs: Vec<Option<RocCurve>>,
    /// Out-of-fold probability of every pool, in dataset order.
    pub oof_probs: Vec<f64>,
    pub confusions: BTreeMap<String, TrapConfusion>,
}

struct FoldRun {
    model: FittedGlmm,
    test: Vec<usize>,
    test_probs: Vec<f64>,
    train_roc: Option<RocCurve>,
    n_train: usize,
}

fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    Dataset {
        sites: dataset.sites.clone(),
        pools: indices.iter().map(|&i| dataset.pools[i].clone()).collect(),
        cases: vec![],
    }
}

/// Fits on four folds and predicts the fifth, for every fold.
pub fn cross_validate(dataset: &Dataset, config: &CvConfig) -> Result<CvResult, EvaluationError> {
    check_weight(config.m)?;
    let folds = make_folds(dataset, config.seed);
    let sites = dataset.site_index();
    let labels: Vec<bool> = dataset.pools.iter().map(|p| p.response).collect();

    let runs: Vec<FoldRun> = (0..N_FOLDS)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..dataset.pools.len()).partition(|&i| folds.fold_index[i] == fold);
            if test.is_empty() {
                return Err(EvaluationError::FoldData {
                    fold,
                    reason: "test split is empty".into(),
                });
            }
            let train_set = subset(dataset, &train);
            let model = fit(&train_set, &config.fit).map_err(|source| EvaluationError::Fold { fold, source })?;
            let test_set = subset(dataset, &test);
            let test_probs = predict_prob(&model, &test_set.pools, &sites)
                .map_err(|source| EvaluationError::Fold { fold, source })?;
            let train_roc = if config.threshold == ThresholdPolicy::PerFoldTrain {
                let probs = predict_prob(&model, &train_set.pools, &sites)
                    .map_err(|source| EvaluationError::Fold { fold, source })?;
                let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                Some(roc_curve(&y, &probs).map_err(|e| EvaluationError::FoldData {
                    fold,
                    reason: e.to_string(),
                })?)
            } else {
                None
            };
            Ok(FoldRun {
                model,
                test,
                test_probs,
                train_roc,
                n_train: train.len(),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut oof_probs = vec![f64::NAN; dataset.pools.len()];
    for run in &runs {
        for (&i, &p) in run.test.iter().zip(&run.test_probs) {
            oof_probs[i] = p;
        }
    }
    let rocs: Vec<Option<RocCurve>> = runs
        .iter()
        .map(|run| {
            let y: Vec<bool> = run.test.iter().map(|&i| labels[i]).collect();
            roc_curve(&y, &run.test_probs).ok()
        })
        .collect();

    let global = match config.threshold {
        ThresholdPolicy::GlobalTest => Some(optimal_threshold(&roc_curve(&labels, &oof_probs)?, config.m)),
        _ => None,
    };
    let thresholds: Vec<f64> = runs
        .iter()
        .zip(&rocs)
        .enumerate()
        .map(|(fold, (run, roc))| match (config.threshold, global) {
            (_, Some(k)) => Ok(k),
            (ThresholdPolicy::PerFoldTrain, _) => {
                Ok(optimal_threshold(run.train_roc.as_ref().expect("train ROC computed"), config.m))
            }
            _ => roc
                .as_ref()
                .map(|r| optimal_threshold(r, config.m))
                .ok_or_else(|| EvaluationError::FoldData {
                    fold,
                    reason: "test split has a single response class; use the train or global threshold policy"
                        .into(),
                }),
        })
        .collect::<Result<_, _>>()?;

    let mut counts: BTreeMap<&str, [ConfusionCounts; N_FOLDS]> = BTreeMap::new();
    for (fold, run) in runs.iter().enumerate() {
        for (&i, &p) in run.test.iter().zip(&run.test_probs) {
            let pool = &dataset.pools[i];
            let c = &mut counts.entry(pool.trap_id.as_str()).or_default()[fold];
            match (pool.response, p > thresholds[fold]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
    }
    let confusions = counts
        .into_iter()
        .map(|(id, folds)| (id.to_string(), TrapConfusion::from_folds(id.to_string(), folds)))
        .collect();

    let fold_summaries = runs
        .iter()
        .enumerate()
        .map(|(fold, run)| FoldSummary {
            fold,
            n_train: run.n_train,
            n_test: run.test.len(),
            threshold: thresholds[fold],
            auc: rocs[fold].as_ref().map(RocCurve::auc),
            log_likelihood: run.model.log_likelihood,
        })
        .collect();

    Ok(CvResult {
        folds,
        fold_summaries,
        rocs,
        oof_probs,
        confusions,
    })
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `trap_id,avg_sens,avg_spec,n_pos,n_neg`, blank cells for undefined values.
pub fn write_confusion_csv(
    path: &Path,
    confusions: &BTreeMap<String, TrapConfusion>,
) -> Result<(), EvaluationError> {
    let mut rows = vec![["trap_id", "avg_sens", "avg_spec", "n_pos", "n_neg"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for c in confusions.values() {
        rows.push(vec![
            c.trap_id.clone(),
            optional(c.avg_sens),
            optional(c.avg_spec),
            c.n_pos().to_string(),
            c.n_neg().to_string(),
        ]);
    }
    Ok(write_rows(path, &rows)?)
}

/// `fold,threshold,tpr,fpr` for every fold with a defined ROC curve.
pub fn write_roc_csv(path: &Path, rocs: &[Option<RocCurve>]) -> Result<(), EvaluationError> {
    let mut rows = vec![["fold", "threshold", "tpr", "fpr"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for (fold, roc) in rocs.iter().enumerate() {
        let Some(roc) = roc else { continue };
        for i in 0..roc.thresholds.len() {
            rows.push(vec![
                fold.to_string(),
                roc.thresholds[i].to_string(),
                roc.tpr[i].to_string(),
                roc.fpr[i].to_string(),
            ]);
        }
    }
    Ok(write_rows(path, &rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PoolObservation, TrapSite};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn pools_in_years(counts: &[(i32, usize)]) -> Dataset {
        let mut pools = Vec::new();
        for &(year, n) in counts {
            for i in 0..n {
                pools.push(PoolObservation {
                    trap_id: "A".into(),
                    year,
                    week: 20 + (i % 30) as u32,
                    day_of_week: 0,
                    pool_size: 10,
                    test_positive: false,
                    mosquito_count_week: 10,
                    pools_in_week: 1,
                    pools_on_day: 1,
                    risk: Some(0.0),
                    response: false,
                });
            }
        }
        Dataset {
            sites: vec![TrapSite {
                trap_id: "A".into(),
                latitude: 41.0,
                longitude: -87.0,
                covariates: Default::default(),
            }],
            pools,
            cases: vec![],
        }
    }

    #[test]
    fn folds_divide_each_year_evenly() {
        let ds = pools_in_years(&[(2017, 100)]);
        let f = make_folds(&ds, 4);
        assert_eq!(f.fold_sizes(), [20; 5]);
        assert_eq!(f, make_folds(&ds, 4));
        assert_ne!(f, make_folds(&ds, 5));
    }

    #[test]
    fn small_year_is_dealt_round_robin() {
        let ds = pools_in_years(&[(2016, 7)]);
        assert_eq!(make_folds(&ds, 1).fold_sizes(), [2, 2, 1, 1, 1]);
    }

    #[test]
    fn folds_are_stratified_by_year() {
        let ds = pools_in_years(&[(2015, 13), (2016, 21), (2017, 5)]);
        let f = make_folds(&ds, 9);
        for year in [2015, 2016, 2017] {
            let mut sizes = [0usize; N_FOLDS];
            for (i, p) in ds.pools.iter().enumerate() {
                if p.year == year {
                    sizes[f.fold_index[i]] += 1;
                }
            }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "{year}: {sizes:?}");
        }
    }

    #[test]
    fn four_point_roc_matches_counting() {
        let labels = [true, false, true, false];
        let probs = [0.9, 0.8, 0.7, 0.1];
        let roc = roc_curve(&labels, &probs).unwrap();
        assert_eq!(roc.thresholds, vec![0.0, 0.1, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(roc.tpr, vec![1.0, 1.0, 0.5, 0.5, 0.0, 0.0]);
        assert_eq!(roc.fpr, vec![1.0, 0.5, 0.5, 0.0, 0.0, 0.0]);
        // J = tpr − fpr: 0, 0.5, 0, 0.5, 0, 0 → smaller threshold wins the tie
        assert_eq!(optimal_threshold(&roc, 1.0), 0.1);
        assert_eq!(roc.auc(), 0.75);
    }

    #[test]
    fn separating_and_constant_scores() {
        let labels = [false, false, true, true];
        let roc = roc_curve(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap();
        let k = optimal_threshold(&roc, 1.0);
        assert_eq!(k, 0.2);
        let i = optimal_index(&roc, 1.0);
        assert_eq!((roc.tpr[i], roc.fpr[i]), (1.0, 0.0));
        assert!(roc.tpr.iter().zip(&roc.fpr).any(|(&t, &f)| t == 1.0 && f == 0.0));

        let flat = roc_curve(&labels, &[0.3; 4]).unwrap();
        let points: BTreeSet<(u64, u64)> = flat
            .tpr
            .iter()
            .zip(&flat.fpr)
            .map(|(t, f)| (f.to_bits(), t.to_bits()))
            .collect();
        assert_eq!(points.len(), 2);
        assert_eq!(flat.auc(), 0.5);
    }

    #[test]
    fn roc_rejects_bad_input() {
        assert!(matches!(roc_curve(&[true, true], &[0.2, 0.3]), Err(EvaluationError::OneClass)));
        assert!(matches!(
            roc_curve(&[true], &[0.2, 0.3]),
            Err(EvaluationError::LengthMismatch { .. })
        ));
        assert!(matches!(
            roc_curve(&[true, false], &[0.2, f64::NAN]),
            Err(EvaluationError::InvalidProbability(1))
        ));
    }

    #[test]
    fn averages_skip_empty_denominators() {
        let mut folds = [ConfusionCounts::default(); N_FOLDS];
        folds[0] = ConfusionCounts { tp: 1, fn_: 1, tn: 3, fp: 1 };
        folds[2] = ConfusionCounts { tp: 0, fn_: 0, tn: 2, fp: 0 };
        let c = TrapConfusion::from_folds("A".into(), folds);
        assert_eq!(c.avg_sens, Some(0.5));
        assert_eq!(c.avg_spec, Some((0.75 + 1.0) / 2.0));
        let none = TrapConfusion::from_folds("B".into(), [ConfusionCounts { tn: 2, ..Default::default() }; N_FOLDS]);
        assert_eq!(none.avg_sens, None);
        assert_eq!(none.avg_spec, Some(1.0));
    }

    #[test]
    fn policy_names() {
        for p in [ThresholdPolicy::PerFoldTest, ThresholdPolicy::PerFoldTrain, ThresholdPolicy::GlobalTest] {
            assert_eq!(p.to_string().parse::<ThresholdPolicy>().unwrap(), p);
        }
        assert!("median".parse::<ThresholdPolicy>().is_err());
        assert!(check_weight(0.0).is_err() && check_weight(1.2).is_err() && check_weight(1.0).is_ok());
    }

    fn brute_force(labels: &[bool], probs: &[f64], m: f64) -> (f64, f64) {
        let np = labels.iter().filter(|&&y| y).count() as f64;
        let nn = labels.len() as f64 - np;
        let mut candidates: Vec<f64> = probs.to_vec();
        candidates.extend([0.0, 1.0]);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let scored: Vec<(f64, f64, f64)> = candidates
            .iter()
            .map(|&k| {
                let tp = labels.iter().zip(probs).filter(|(&y, &p)| y && p > k).count() as f64;
                let fp = labels.iter().zip(probs).filter(|(&y, &p)| !y && p > k).count() as f64;
                (tp / np - m * fp / nn, k, tp / np)
            })
            .collect();
        let top = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let best = *scored.iter().find(|s| s.0 >= top - TIE_TOLERANCE).unwrap();
        (best.1, best.2)
    }

    proptest! {
        #[test]
        fn threshold_matches_enumeration(
            data in prop::collection::vec((any::<bool>(), 0u32..40), 4..60),
            m_step in 1u32..=10,
        ) {
            let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let probs: Vec<f64> = data.iter().map(|d| d.1 as f64 / 40.0).collect();
            let m = m_step as f64 / 10.0;
            let roc = roc_curve(&labels, &probs).unwrap();
            let (k, _) = brute_force(&labels, &probs, m);
            prop_assert_eq!(optimal_threshold(&roc, m), k);
        }

        #[test]
        fn roc_is_monotone(data in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 2..50)) {
            let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let probs: Vec<f64> = data.iter().map(|d| d.1).collect();
            let roc = roc_curve(&labels, &probs).unwrap();
            for i in 1..roc.thresholds.len() {
                prop_assert!(roc.thresholds[i] > roc.thresholds[i - 1]);
                prop_assert!(roc.tpr[i] <= roc.tpr[i - 1] && roc.fpr[i] <= roc.fpr[i - 1]);
            }
            let last = roc.thresholds.len() - 1;
            prop_assert_eq!((roc.tpr[last], roc.fpr[last]), (0.0, 0.0));
            prop_assert_eq!(roc.thresholds[0], 0.0);
            // k = 0 calls every pool with positive probability positive
            let zero_pos = labels.iter().zip(&probs).filter(|(&y, &p)| y && p == 0.0).count();
            prop_assert_eq!(roc.tpr[0] == 1.0, zero_pos == 0);
        }
    }
}
