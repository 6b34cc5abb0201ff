use trapscore_core::data::{Dataset, PoolObservation, TrapSite};
use trapscore_core::evaluation::{cross_validate, CvConfig, ThresholdPolicy, N_FOLDS};
use trapscore_core::prevalence::{annotate_risk, Grouping};
use trapscore_core::scoring::score_report;
use trapscore_core::synth::{generate_world, WorldConfig};

fn world(seed: u64, n_traps: usize) -> Dataset {
    let config = WorldConfig {
        n_traps,
        seed,
        ..WorldConfig::default()
    };
    annotate_risk(&generate_world(&config).unwrap().0, Grouping::TrapWeek).unwrap()
}

#[test]
fn confusion_counts_match_fold_composition() {
    let ds = world(5, 40);
    let cv = cross_validate(&ds, &CvConfig::default()).unwrap();
    for (trap, c) in &cv.confusions {
        for fold in 0..N_FOLDS {
            let (mut pos, mut neg) = (0, 0);
            for (i, p) in ds.pools.iter().enumerate() {
                if &p.trap_id == trap && cv.folds.fold_index[i] == fold {
                    if p.response {
                        pos += 1
                    } else {
                        neg += 1
                    }
                }
            }
            assert_eq!(c.folds[fold].positives(), pos);
            assert_eq!(c.folds[fold].negatives(), neg);
        }
        for v in [c.avg_sens, c.avg_spec].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(c.avg_sens.is_some(), c.n_pos() > 0);
        assert_eq!(c.avg_spec.is_some(), c.n_neg() > 0);
    }
    assert!(cv.oof_probs.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn cross_validation_is_deterministic() {
    let ds = world(6, 30);
    for threshold in [ThresholdPolicy::PerFoldTest, ThresholdPolicy::PerFoldTrain, ThresholdPolicy::GlobalTest] {
        let config = CvConfig {
            threshold,
            ..CvConfig::default()
        };
        let a = cross_validate(&ds, &config).unwrap();
        let b = cross_validate(&ds, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        if threshold == ThresholdPolicy::GlobalTest {
            let k = a.fold_summaries[0].threshold;
            assert!(a.fold_summaries.iter().all(|f| f.threshold == k));
        }
    }
}

/// Responses follow the test indicator except for one flip per trap and
/// year; trap A is positive and responsive on every visit.
fn informative_dataset() -> Dataset {
    let sites: Vec<TrapSite> = (0..8)
        .map(|i| TrapSite {
            trap_id: if i == 0 { "A".into() } else { format!("B{i}") },
            latitude: 41.6 + 0.05 * i as f64,
            longitude: -87.7 + 0.03 * (i % 3) as f64,
            covariates: Default::default(),
        })
        .collect();
    let mut pools = Vec::new();
    for (s, site) in sites.iter().enumerate() {
        for year in [2016, 2017] {
            for k in 0..20u32 {
                let positive = s == 0 || (k + s as u32) % 3 == 0;
                let flip = s > 0 && k == 7;
                pools.push(PoolObservation {
                    trap_id: site.trap_id.clone(),
                    year,
                    week: 20 + k,
                    day_of_week: 0,
                    pool_size: 25,
                    test_positive: positive,
                    mosquito_count_week: 100,
                    pools_in_week: 1,
                    pools_on_day: 1,
                    risk: Some(0.0),
                    response: positive != flip,
                });
            }
        }
    }
    Dataset {
        sites,
        pools,
        cases: vec![],
    }
}

#[test]
fn informative_trap_has_perfect_sensitivity() {
    let ds = informative_dataset();
    let cv = cross_validate(&ds, &CvConfig::default()).unwrap();
    let a = &cv.confusions["A"];
    assert_eq!(a.avg_sens, Some(1.0));
    assert_eq!(a.avg_spec, None);
    assert_eq!(a.n_pos(), 40);
}

#[test]
fn fold_failures_name_the_fold() {
    let mut ds = world(7, 12);
    for p in &mut ds.pools {
        p.risk = None;
    }
    let err = cross_validate(&ds, &CvConfig::default()).unwrap_err();
    assert!(err.to_string().starts_with("fold "), "{err}");
}

#[test]
fn mean_score_is_stable_across_seeds() {
    // per-seed baseline captured on the first run of the default world
    const BASELINE: [f64; 5] = [0.615_210_835, 0.638_660_720, 0.600_291_941, 0.610_569_164, 0.593_594_513];
    let means: Vec<f64> = (1..=5)
        .map(|seed| {
            let ds = world(seed, 100);
            let cv = cross_validate(&ds, &CvConfig { seed, ..CvConfig::default() }).unwrap();
            score_report(&cv.confusions, 0.9).unwrap().score_summary.unwrap().mean
        })
        .collect();
    for (m, b) in means.iter().zip(BASELINE) {
        assert!((m - b).abs() <= 0.02, "{means:?}");
    }
}
