use std::path::PathBuf;

use thiserror::Error;
use trapscore_core::causal::CausalError;
use trapscore_core::data::DataError;
use trapscore_core::evaluation::EvaluationError;
use trapscore_core::glmm::GlmmError;
use trapscore_core::prevalence::PrevalenceError;
use trapscore_core::scoring::ScoringError;
use trapscore_core::synth::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input file {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("{} not found; {hint}", .path.display())]
    MissingArtifact { path: PathBuf, hint: &'static str },
    #[error("cannot write {}: {source}", .path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {}: {message}", .path.display())]
    Artifact { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prevalence(#[from] PrevalenceError),
    #[error(transparent)]
    Glmm(#[from] GlmmError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    /// 2 for anything the user can fix in the invocation or inputs, 1 for
    /// failures of the computation itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_)
            | Self::MissingInput(_)
            | Self::MissingArtifact { .. }
            | Self::Artifact { .. }
            | Self::Data(_) => 2,
            Self::Causal(
                CausalError::Io { .. }
                | CausalError::DagSyntax { .. }
                | CausalError::Cycle(_)
                | CausalError::UnknownNode(_)
                | CausalError::SameNode(_)
                | CausalError::MissingColumn(_)
                | CausalError::Config(_)
                | CausalError::TooFewReplicates(_),
            ) => 2,
            Self::Synth(SynthError::Config(_)) => 2,
            Self::Evaluation(EvaluationError::InvalidWeight(_)) => 2,
            Self::Glmm(GlmmError::Config(_)) => 2,
            _ => 1,
        }
    }
}
