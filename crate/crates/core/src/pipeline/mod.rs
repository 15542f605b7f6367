//! Run orchestration: config, manifests, result stores and the five commands.

mod classify;
mod config;
mod ingest;
mod manifest;
mod report;
mod store;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use classify::{cmd_classify, ClassifyOptions, ClassifySummary, LabelCounts};
pub use config::{
    BackendEntry, CodebookSection, CorpusSection, EvaluationSection, OutputSection, PromptingSection, RunConfig,
    SplitSide, DEFAULT_SEED,
};
pub use ingest::{cmd_ingest, derive_corpus, IngestOutput, IngestSummary};
pub use manifest::{hash_file, sha256_hex, RunLock, RunManifest, MANIFEST_FILE};
pub use report::{
    cmd_distribute, cmd_evaluate, cmd_evaluate_metrics, cmd_rank, read_metrics_table, render_ranking,
    DistributionReport, EvalOptions, EvalReport, LabelDistribution, MetricInterval, ModelReport, ThemeDelta,
    ThemeRow,
};
pub use store::{
    Ledger, LedgerCounts, PartialWriter, PostStatus, ResultRecord, ResultsStore, FINAL_FILE, PARTIAL_FILE,
};

use crate::backends::BackendError;
use crate::codebook::{CodebookError, GoldError};
use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::prompting::PromptError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{dir} is in use by process {pid}")]
    Locked { dir: PathBuf, pid: u32 },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: CorpusError,
    },
    #[error("codebook: {0}")]
    Codebook(#[from] CodebookError),
    #[error("gold labels: {0}")]
    Gold(#[from] GoldError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) | PipelineError::Locked { .. } => 1,
            PipelineError::Backend(_) => 3,
            _ => 2,
        }
    }
}
