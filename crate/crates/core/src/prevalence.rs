//! Infection prevalence from pooled test results and the vector-index risk.
//!
//! For pools of sizes `n_i` with outcomes `y_i`, the pooled likelihood is
//! `L(p) = Π [1 − (1 − p)^n_i]^y_i [(1 − p)^n_i]^(1 − y_i)`. Its log is concave
//! in `p`, so the maximiser is the unique root of the score function, found by
//! bracketed bisection.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum PrevalenceError {
    #[error("pool group must contain at least one pool")]
    EmptyGroup,
    #[error("pool sizes and outcomes differ in length ({sizes} vs {outcomes})")]
    LengthMismatch { sizes: usize, outcomes: usize },
    #[error("pool sizes must be positive")]
    ZeroPoolSize,
    #[error(
        "trap {trap_id} year {year} week {week}: inconsistent mosquito_count_week/pools_in_week across pools"
    )]
    Inconsistent { trap_id: String, year: i32, week: u32 },
}

/// Pools tested together for one prevalence estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolGroup {
    sizes: Vec<u32>,
    positives: Vec<bool>,
}

impl PoolGroup {
    pub fn new(sizes: Vec<u32>, positives: Vec<bool>) -> Result<Self, PrevalenceError> {
        if sizes.len() != positives.len() {
            return Err(PrevalenceError::LengthMismatch {
                sizes: sizes.len(),
                outcomes: positives.len(),
            });
        }
        if sizes.is_empty() {
            return Err(PrevalenceError::EmptyGroup);
        }
        if sizes.contains(&0) {
            return Err(PrevalenceError::ZeroPoolSize);
        }
        Ok(Self { sizes, positives })
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn positives(&self) -> &[bool] {
        &self.positives
    }

    pub fn push(&mut self, size: u32, positive: bool) {
        assert!(size > 0, "pool size must be positive");
        self.sizes.push(size);
        self.positives.push(positive);
    }

    /// Log-likelihood of prevalence `p`.
    pub fn log_likelihood(&self, p: f64) -> f64 {
        let log_q = (-p).ln_1p();
        self.sizes
            .iter()
            .zip(&self.positives)
            .map(|(&n, &y)| {
                let log_all_neg = n as f64 * log_q;
                if y {
                    (-log_all_neg.exp_m1()).ln()
                } else {
                    log_all_neg
                }
            })
            .sum()
    }

    /// d/dp of the log-likelihood; strictly decreasing on (0, 1).
    fn score(&self, p: f64) -> f64 {
        let log_q = (-p).ln_1p();
        self.sizes
            .iter()
            .zip(&self.positives)
            .map(|(&n, &y)| {
                let n = n as f64;
                if y {
                    // n (1-p)^(n-1) / (1 - (1-p)^n)
                    let log_num = (n - 1.0) * log_q;
                    n * log_num.exp() / -(n * log_q).exp_m1()
                } else {
                    -n / (1.0 - p)
                }
            })
            .sum()
    }
}

/// Prevalence estimate with a flag for groups in which every pool tested
/// positive (likelihood increasing on the whole interval).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub p: f64,
    pub saturated: bool,
}

/// Maximum-likelihood per-mosquito infection prevalence.
pub fn mle_prevalence(group: &PoolGroup) -> f64 {
    mle_prevalence_detailed(group).p
}

pub fn mle_prevalence_detailed(group: &PoolGroup) -> PrevalenceEstimate {
    let any_pos = group.positives.iter().any(|&y| y);
    let any_neg = group.positives.iter().any(|&y| !y);
    if !any_pos {
        return PrevalenceEstimate {
            p: 0.0,
            saturated: false,
        };
    }
    if !any_neg {
        return PrevalenceEstimate {
            p: 1.0,
            saturated: true,
        };
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if group.score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    PrevalenceEstimate {
        p: 0.5 * (lo + hi),
        saturated: false,
    }
}

/// Vector index: `avg_abundance × pools_on_day × mle / 1000`.
pub fn vector_index(avg_abundance: f64, pools_on_day: u32, mle: f64) -> f64 {
    avg_abundance * pools_on_day as f64 * mle / 1000.0
}

/// Which pools share one prevalence estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    TrapWeek,
    TrapDay,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trap_week" => Ok(Self::TrapWeek),
            "trap_day" => Ok(Self::TrapDay),
            other => Err(format!("unknown grouping {other:?} (expected trap_week|trap_day)")),
        }
    }
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TrapWeek => "trap_week",
            Self::TrapDay => "trap_day",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RiskReport {
    /// Groups in which every pool tested positive (estimate pinned at 1).
    pub saturated_groups: Vec<String>,
}

type GroupKey = (String, i32, u32, Option<u32>);

/// Populates every pool's `risk` from the prevalence of its group.
pub fn annotate_risk(dataset: &Dataset, grouping: Grouping) -> Result<Dataset, PrevalenceError> {
    annotate_risk_with_report(dataset, grouping).map(|(d, _)| d)
}

pub fn annotate_risk_with_report(
    dataset: &Dataset,
    grouping: Grouping,
) -> Result<(Dataset, RiskReport), PrevalenceError> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, pool) in dataset.pools.iter().enumerate() {
        let day = match grouping {
            Grouping::TrapWeek => None,
            Grouping::TrapDay => Some(pool.day_of_week),
        };
        groups
            .entry((pool.trap_id.clone(), pool.year, pool.week, day))
            .or_default()
            .push(i);
    }

    let groups: Vec<(GroupKey, Vec<usize>)> = groups.into_iter().collect();
    let estimates: Vec<Result<(PrevalenceEstimate, f64), PrevalenceError>> = groups
        .par_iter()
        .map(|((trap_id, year, week, _), members)| {
            let first = &dataset.pools[members[0]];
            let consistent = members.iter().all(|&i| {
                let p = &dataset.pools[i];
                p.mosquito_count_week == first.mosquito_count_week
                    && p.pools_in_week == first.pools_in_week
            });
            if !consistent {
                return Err(PrevalenceError::Inconsistent {
                    trap_id: trap_id.clone(),
                    year: *year,
                    week: *week,
                });
            }
            let group = PoolGroup::new(
                members.iter().map(|&i| dataset.pools[i].pool_size).collect(),
                members
                    .iter()
                    .map(|&i| dataset.pools[i].test_positive)
                    .collect(),
            )?;
            let avg_abundance = first.mosquito_count_week as f64 / first.pools_in_week as f64;
            Ok((mle_prevalence_detailed(&group), avg_abundance))
        })
        .collect();

    let mut out = dataset.clone();
    let mut report = RiskReport::default();
    for ((key, members), est) in groups.iter().zip(estimates) {
        let (estimate, avg_abundance) = est?;
        if estimate.saturated {
            report.saturated_groups.push(match key.3 {
                Some(day) => format!("{}/{}/w{}/d{}", key.0, key.1, key.2, day),
                None => format!("{}/{}/w{}", key.0, key.1, key.2),
            });
        }
        for &i in members {
            let pool = &mut out.pools[i];
            pool.risk = Some(vector_index(avg_abundance, pool.pools_on_day, estimate.p));
        }
    }
    Ok((out, report))
}
