//! Run settings: defaults, then the `key = value` config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use trapscore_core::causal::{OutcomeModel, ScoreKind};
use trapscore_core::data::{DEFAULT_LEAD_WEEKS, DEFAULT_RADIUS_KM};
use trapscore_core::evaluation::{check_weight, ThresholdPolicy};
use trapscore_core::glmm::NuMode;
use trapscore_core::prevalence::Grouping;

use crate::error::CliError;

/// Flags shared by every subcommand. Each one overrides the config-file key
/// of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Directory holding pools.csv, sites.csv, cases.csv and optionally dag.txt.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub pools: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub sites: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub cases: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub dag: Option<PathBuf>,
    /// Comma-separated exposures; defaults to every DAG node that is a site column.
    #[arg(long, global = true, value_delimiter = ',')]
    pub exposures: Option<Vec<String>>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative cost of a false positive, in (0, 1].
    #[arg(long, global = true)]
    pub m: Option<f64>,
    /// `fixed:<ν>`, `grid` or `grid:<ν,...>`.
    #[arg(long, global = true)]
    pub nu: Option<NuMode>,
    /// `trap_week` or `trap_day`.
    #[arg(long, global = true)]
    pub grouping: Option<Grouping>,
    /// `test`, `train` or `global`.
    #[arg(long, global = true)]
    pub threshold_split: Option<ThresholdPolicy>,
    #[arg(long, global = true)]
    pub radius_km: Option<f64>,
    #[arg(long, global = true)]
    pub lead_weeks: Option<u32>,
    #[arg(long, global = true)]
    pub random_effects: Option<bool>,
    #[arg(long, global = true)]
    pub n_boot: Option<usize>,
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    /// `score` (T* only) or `score_prime` (all traps).
    #[arg(long, global = true)]
    pub score: Option<ScoreKind>,
    /// `augmented` or `gps_only`.
    #[arg(long, global = true)]
    pub outcome_model: Option<OutcomeModel>,
    /// DAG node that stands for the trap score.
    #[arg(long, global = true)]
    pub outcome_node: Option<String>,
    /// Drop invalid input rows with a warning instead of failing.
    #[arg(long, global = true)]
    pub skip_invalid: bool,
    /// simulate: number of traps.
    #[arg(long, global = true)]
    pub n_traps: Option<usize>,
    /// simulate: world configuration JSON.
    #[arg(long, global = true, value_name = "FILE")]
    pub world: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub sites: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub dag: Option<PathBuf>,
    pub exposures: Option<Vec<String>>,
    pub out: PathBuf,
    /// `None` keeps a world file's own seed in `simulate`.
    pub seed: Option<u64>,
    pub m: f64,
    pub nu: NuMode,
    pub grouping: Grouping,
    pub threshold_split: ThresholdPolicy,
    pub radius_km: f64,
    pub lead_weeks: u32,
    pub random_effects: bool,
    pub n_boot: usize,
    pub grid_points: usize,
    pub score: ScoreKind,
    pub outcome_model: OutcomeModel,
    pub outcome_node: String,
    pub skip_invalid: bool,
    pub n_traps: Option<usize>,
    pub world: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data: None,
            pools: None,
            sites: None,
            cases: None,
            dag: None,
            exposures: None,
            out: PathBuf::from("trapscore-out"),
            seed: None,
            m: 0.9,
            nu: NuMode::default(),
            grouping: Grouping::default(),
            threshold_split: ThresholdPolicy::default(),
            radius_km: DEFAULT_RADIUS_KM,
            lead_weeks: DEFAULT_LEAD_WEEKS,
            random_effects: true,
            n_boot: 500,
            grid_points: 50,
            score: ScoreKind::default(),
            outcome_model: OutcomeModel::default(),
            outcome_node: "score".into(),
            skip_invalid: false,
            n_traps: None,
            world: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

impl Settings {
    /// Applies one config-file entry. Relative paths resolve against `base`.
    fn apply(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = || Some(base.join(value));
        match key.replace('-', "_").as_str() {
            "data" => self.data = path(),
            "pools" => self.pools = path(),
            "sites" => self.sites = path(),
            "cases" => self.cases = path(),
            "dag" => self.dag = path(),
            "world" => self.world = path(),
            "out" => self.out = base.join(value),
            "exposures" => {
                self.exposures = Some(
                    value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                )
            }
            "seed" => self.seed = Some(parse(key, value)?),
            "m" => self.m = parse(key, value)?,
            "nu" => self.nu = parse(key, value)?,
            "grouping" => self.grouping = parse(key, value)?,
            "threshold_split" => self.threshold_split = parse(key, value)?,
            "radius_km" => self.radius_km = parse(key, value)?,
            "lead_weeks" => self.lead_weeks = parse(key, value)?,
            "random_effects" => self.random_effects = parse_bool(key, value)?,
            "n_boot" => self.n_boot = parse(key, value)?,
            "grid_points" => self.grid_points = parse(key, value)?,
            "score" => self.score = parse(key, value)?,
            "outcome_model" => self.outcome_model = parse(key, value)?,
            "outcome_node" => self.outcome_node = value.to_string(),
            "skip_invalid" => self.skip_invalid = parse_bool(key, value)?,
            "n_traps" => self.n_traps = Some(parse(key, value)?),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn override_with(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &o.$field {
                    self.$field = Some(v.clone());
                }
            )*};
        }
        take!(data, pools, sites, cases, dag, exposures, seed, n_traps, world);
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        self.m = o.m.unwrap_or(self.m);
        if let Some(v) = &o.nu {
            self.nu = v.clone();
        }
        self.grouping = o.grouping.unwrap_or(self.grouping);
        self.threshold_split = o.threshold_split.unwrap_or(self.threshold_split);
        self.radius_km = o.radius_km.unwrap_or(self.radius_km);
        self.lead_weeks = o.lead_weeks.unwrap_or(self.lead_weeks);
        self.random_effects = o.random_effects.unwrap_or(self.random_effects);
        self.n_boot = o.n_boot.unwrap_or(self.n_boot);
        self.grid_points = o.grid_points.unwrap_or(self.grid_points);
        self.score = o.score.unwrap_or(self.score);
        self.outcome_model = o.outcome_model.unwrap_or(self.outcome_model);
        if let Some(v) = &o.outcome_node {
            self.outcome_node = v.clone();
        }
        self.skip_invalid |= o.skip_invalid;
    }

    /// Defaults, then `config_file`, then `overrides`; validated before any
    /// input is read.
    pub fn resolve(config_file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut settings = Self::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            let base = path.parent().unwrap_or(Path::new(""));
            for (key, (line, value)) in parse_config(&text)? {
                settings
                    .apply(&key, &value, base)
                    .map_err(|e| CliError::Config(format!("{} line {line}: {e}", path.display())))?;
            }
        }
        settings.override_with(overrides);
        settings.validate()?;
        Ok(settings)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_weight(self.m).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.radius_km > 0.0 && self.radius_km.is_finite()) {
            return Err(CliError::Config(format!("radius_km must be positive, got {}", self.radius_km)));
        }
        if self.lead_weeks == 0 {
            return Err(CliError::Config("lead_weeks must be at least 1".into()));
        }
        if self.grid_points < 2 {
            return Err(CliError::Config("grid_points must be at least 2".into()));
        }
        Ok(())
    }

    fn input(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf, CliError> {
        match (explicit, &self.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(file)),
            (None, None) => Err(CliError::Config(format!(
                "no input for {file}; pass --data DIR or --{}",
                file.trim_end_matches(".csv")
            ))),
        }
    }

    pub fn pools_path(&self) -> Result<PathBuf, CliError> {
        self.input(&self.pools, "pools.csv")
    }

    pub fn sites_path(&self) -> Result<PathBuf, CliError> {
        self.input(&self.sites, "sites.csv")
    }

    pub fn cases_path(&self) -> Result<PathBuf, CliError> {
        self.input(&self.cases, "cases.csv")
    }

    /// An explicit DAG must exist; `<data>/dag.txt` is used only if present.
    pub fn dag_path(&self) -> Option<PathBuf> {
        match (&self.dag, &self.data) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) => Some(dir.join("dag.txt")).filter(|p| p.is_file()),
            (None, None) => None,
        }
    }
}

/// `key = value` lines; `#` starts a comment. Later duplicates are an error.
fn parse_config(text: &str) -> Result<BTreeMap<String, (usize, String)>, CliError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected key = value", i + 1)));
        };
        let key = key.trim().replace('-', "_");
        let value = value.trim().trim_matches('"').to_string();
        if entries.insert(key.clone(), (i + 1, value)).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(entries)
}
