//! Subcommand bodies. Each phase reads the previous phase's artifacts from
//! `<out>/phaseN/` so phases can be rerun independently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trapscore_core::causal::{run_phase3, write_adrf_csv, AdrfOptions, CausalDag, Phase3Config, Phase3Report};
use trapscore_core::data::{label_responses, parse_dataset_with, Dataset, ParseOptions};
use trapscore_core::evaluation::{
    cross_validate, write_confusion_csv, write_roc_csv, CvConfig, FoldSummary, ThresholdPolicy, TrapConfusion,
};
use trapscore_core::glmm::{fit, FitConfig, NuMode};
use trapscore_core::prevalence::{annotate_risk_with_report, Grouping};
use trapscore_core::scoring::{score_report, write_scores_csv, ScoreReport};
use trapscore_core::synth::{generate_world, write_world, WorldConfig};

use crate::config::Settings;
use crate::error::CliError;
use crate::svg;

/// Bumped whenever a phase summary changes shape.
pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// The bundled synthetic world and its DAG, used by `simulate` without `--world`.
pub const DEFAULT_WORLD: &str = include_str!("../fixtures/synthetic/world.json");
pub const DEFAULT_DAG: &str = include_str!("../fixtures/synthetic/dag.txt");

const PHASE1_HINT: &str = "run `trapscore phase1` with the same --out first";
const PHASE2_HINT: &str = "run `trapscore phase2` with the same --out first";

#[derive(Debug, Serialize, Deserialize)]
pub struct Phase1Summary {
    pub format_version: u32,
    pub seed: u64,
    pub m: f64,
    pub nu: NuMode,
    pub grouping: Grouping,
    pub threshold_split: ThresholdPolicy,
    pub radius_km: f64,
    pub lead_weeks: u32,
    pub random_effects: bool,
    pub n_traps: usize,
    pub n_pools: usize,
    pub n_responses: usize,
    pub n_cases: usize,
    pub fit_iterations: usize,
    pub fit_log_likelihood: f64,
    pub folds: Vec<FoldSummary>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serialises");
    write_text(path, &(text + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path, hint: &'static str) -> Result<T, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            hint,
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: format!("{e}; {hint}"),
    })
}

fn phase_dir(settings: &Settings, phase: &str) -> Result<PathBuf, CliError> {
    let dir = settings.out.join(phase);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Write {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path))
    }
}

fn load_dataset(settings: &Settings) -> Result<Dataset, CliError> {
    let pools = existing(settings.pools_path()?)?;
    let sites = existing(settings.sites_path()?)?;
    let cases = existing(settings.cases_path()?)?;
    let options = ParseOptions {
        skip_invalid: settings.skip_invalid,
    };
    let (dataset, report) = parse_dataset_with(&pools, &sites, &cases, &options)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    info!(
        "read {} traps, {} pools, {} cases",
        dataset.sites.len(),
        dataset.pools.len(),
        dataset.cases.len()
    );
    Ok(dataset)
}

fn fit_config(settings: &Settings) -> FitConfig {
    FitConfig {
        nu: settings.nu.clone(),
        random_effects: settings.random_effects,
        ..FitConfig::default()
    }
}

pub fn phase1(settings: &Settings) -> Result<(), CliError> {
    let raw = load_dataset(settings)?;
    let labelled = label_responses(&raw, settings.radius_km, settings.lead_weeks)?;
    let (dataset, risk) = annotate_risk_with_report(&labelled, settings.grouping)?;
    if !risk.saturated_groups.is_empty() {
        info!(
            "{} pool groups tested all positive; their prevalence is pinned at 1",
            risk.saturated_groups.len()
        );
    }
    let n_responses = dataset.pools.iter().filter(|p| p.response).count();
    info!("{n_responses} of {} pools precede a nearby case", dataset.pools.len());

    let fit_config = fit_config(settings);
    let model = fit(&dataset, &fit_config)?;
    info!(
        "full-data fit: {} iterations, {} evaluations, log-likelihood {:.6}, gradient norm {:.3e}",
        model.diagnostics.iterations,
        model.diagnostics.evaluations,
        model.log_likelihood,
        model.diagnostics.gradient_norm
    );

    let cv = cross_validate(
        &dataset,
        &CvConfig {
            fit: fit_config,
            m: settings.m,
            seed: settings.seed(),
            threshold: settings.threshold_split,
        },
    )?;
    for f in &cv.fold_summaries {
        info!(
            "fold {}: {} train / {} test pools, threshold {:.6}, AUC {}",
            f.fold,
            f.n_train,
            f.n_test,
            f.threshold,
            f.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }

    let dir = phase_dir(settings, "phase1")?;
    write_text(&dir.join("model.json"), &(model.to_json() + "\n"))?;
    write_confusion_csv(&dir.join("confusion.csv"), &cv.confusions)?;
    write_json(&dir.join("confusion.json"), &cv.confusions)?;
    write_roc_csv(&dir.join("roc.csv"), &cv.rocs)?;
    let curves: Vec<_> = cv
        .rocs
        .iter()
        .map(|r| r.as_ref().map(|r| (r.fpr.clone(), r.tpr.clone())))
        .collect();
    write_text(&dir.join("roc.svg"), &svg::roc(&curves))?;
    write_json(
        &dir.join("summary.json"),
        &Phase1Summary {
            format_version: SUMMARY_FORMAT_VERSION,
            seed: settings.seed(),
            m: settings.m,
            nu: settings.nu.clone(),
            grouping: settings.grouping,
            threshold_split: settings.threshold_split,
            radius_km: settings.radius_km,
            lead_weeks: settings.lead_weeks,
            random_effects: settings.random_effects,
            n_traps: dataset.sites.len(),
            n_pools: dataset.pools.len(),
            n_responses,
            n_cases: dataset.cases.len(),
            fit_iterations: model.diagnostics.iterations,
            fit_log_likelihood: model.log_likelihood,
            folds: cv.fold_summaries.clone(),
        },
    )?;
    info!("phase 1 artifacts in {}", dir.display());
    Ok(())
}

pub fn phase2(settings: &Settings) -> Result<(), CliError> {
    let phase1 = settings.out.join("phase1");
    let confusions: BTreeMap<String, TrapConfusion> =
        read_json(&phase1.join("confusion.json"), PHASE1_HINT)?;
    let p1: Phase1Summary = read_json(&phase1.join("summary.json"), PHASE1_HINT)?;
    if p1.m != settings.m {
        warn!(
            "phase 1 chose thresholds with m = {} but scores use m = {}",
            p1.m, settings.m
        );
    }
    let dataset = load_dataset(settings)?;
    let report = score_report(&confusions, settings.m)?;
    info!("{} of {} traps are in T*", report.tstar_size, report.scorecards.len());

    let dir = phase_dir(settings, "phase2")?;
    write_scores_csv(&dir.join("scores.csv"), &report, &dataset.site_index())?;
    write_json(&dir.join("summary.json"), &report)?;
    let histogram = dir.join("histogram.svg");
    match &report.score_summary {
        Some(s) => write_text(
            &histogram,
            &svg::histogram(&s.histogram, &format!("Trap scores (m = {})", settings.m), "score"),
        )?,
        None => {
            warn!("T* is empty; no score histogram written");
            // a stale plot from an earlier run would contradict this one
            let _ = std::fs::remove_file(&histogram);
        }
    }
    let sites = dataset.site_index();
    let points: Vec<svg::MapPoint> = report
        .scorecards
        .iter()
        .filter_map(|c| {
            sites.get(c.trap_id.as_str()).map(|s| svg::MapPoint {
                latitude: s.latitude,
                longitude: s.longitude,
                score: c.score,
            })
        })
        .collect();
    write_text(&dir.join("score_map.svg"), &svg::score_map(&points))?;
    info!("phase 2 artifacts in {}", dir.display());
    Ok(())
}

fn file_stem(exposure: &str) -> String {
    exposure
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn phase3(settings: &Settings) -> Result<(), CliError> {
    let report: ScoreReport = read_json(&settings.out.join("phase2").join("summary.json"), PHASE2_HINT)?;
    let dag_path = settings.dag_path().ok_or_else(|| {
        CliError::Config("phase 3 needs a DAG; pass --dag FILE or put dag.txt in --data".into())
    })?;
    let dag = CausalDag::load(&existing(dag_path)?)?;
    let dataset = load_dataset(settings)?;
    let exposures = match &settings.exposures {
        Some(list) => list.clone(),
        None => {
            let columns = dataset.covariate_names();
            dag.node_names()
                .iter()
                .filter(|n| **n != settings.outcome_node && columns.contains(n))
                .cloned()
                .collect()
        }
    };
    if exposures.is_empty() {
        warn!("no exposures: no DAG node other than the outcome is a site column");
    }
    let config = Phase3Config {
        outcome_node: settings.outcome_node.clone(),
        score: settings.score,
        grid_points: settings.grid_points,
        n_boot: settings.n_boot,
        seed: settings.seed(),
        adrf: AdrfOptions {
            outcome_model: settings.outcome_model,
            ..AdrfOptions::default()
        },
        ..Phase3Config::default()
    };
    let result: Phase3Report = run_phase3(&report, &dataset.sites, &dag, &exposures, &config)?;

    let dir = phase_dir(settings, "phase3")?;
    for e in &result.exposures {
        match &e.estimate {
            Some(est) => {
                let stem = file_stem(&e.exposure);
                write_adrf_csv(&dir.join(format!("adrf_{stem}.csv")), &e.exposure, est)?;
                write_text(
                    &dir.join(format!("adrf_{stem}.svg")),
                    &svg::adrf(&e.exposure, &est.grid, &est.mu, est.se.as_deref()),
                )?;
                info!(
                    "{}: adjusted for {:?}, μ̂ from {:.4} to {:.4}",
                    e.exposure,
                    e.adjustment_set.clone().unwrap_or_default(),
                    est.mu[0],
                    est.mu[est.mu.len() - 1]
                );
            }
            None => warn!(
                "{}: {}",
                e.exposure,
                e.note.as_deref().unwrap_or("no estimate")
            ),
        }
    }
    write_json(&dir.join("summary.json"), &result)?;
    info!("phase 3 artifacts in {}", dir.display());
    Ok(())
}

pub fn all(settings: &Settings) -> Result<(), CliError> {
    phase1(settings)?;
    phase2(settings)?;
    if settings.dag_path().is_some() {
        phase3(settings)
    } else {
        warn!("no DAG given; skipping phase 3");
        Ok(())
    }
}

pub fn simulate(settings: &Settings) -> Result<(), CliError> {
    let mut world: WorldConfig = match &settings.world {
        Some(path) => {
            let text = std::fs::read_to_string(existing(path.clone())?)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::from_str(DEFAULT_WORLD).expect("bundled world parses"),
    };
    if let Some(seed) = settings.seed {
        world.seed = seed;
    }
    if let Some(n) = settings.n_traps {
        world.n_traps = n;
    }
    let (dataset, truth) = generate_world(&world)?;
    write_world(&settings.out, &dataset, &truth)?;
    if settings.world.is_none() {
        write_text(&settings.out.join("dag.txt"), DEFAULT_DAG)?;
    }
    let config = serde_json::to_string_pretty(&world).expect("world serialises");
    write_text(&settings.out.join("world.json"), &(config + "\n"))?;
    info!(
        "wrote {} traps, {} pools, {} cases to {}",
        dataset.sites.len(),
        dataset.pools.len(),
        dataset.cases.len(),
        settings.out.display()
    );
    Ok(())
}
