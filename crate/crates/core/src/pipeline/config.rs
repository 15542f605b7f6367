use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backends::{BackendConfig, RetryPolicy};
use crate::corpus::{parse_timestamp, PostFormat};
use crate::evaluation::FailurePolicy;
use crate::parsing::ParseMode;
use crate::prompting::TemplateVersion;

/// Seed used when a config leaves one unset; recorded in the manifest.
pub const DEFAULT_SEED: u64 = 20_251_015;

/// Which side of a temporal split feeds classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSide {
    #[default]
    Both,
    Before,
    After,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Dataset name used in labels, e.g. `DS1`.
    pub name: String,
    pub paths: Vec<PathBuf>,
    /// Inferred from each file extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<PostFormat>,
    /// Keyword file; the shipped set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<PathBuf>,
    /// Filter rule; the keyword file's default rule when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default = "yes")]
    pub filter: bool,
    #[serde(default = "yes")]
    pub clean: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_at: Option<String>,
    #[serde(default)]
    pub keep: SplitSide,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    /// The shipped codebook when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub gold: Vec<PathBuf>,
}

fn default_budget() -> usize {
    1500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingSection {
    #[serde(default)]
    pub template: TemplateVersion,
    /// Replacement scaffold for the chosen version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaffold: Option<PathBuf>,
    #[serde(default)]
    pub shots: usize,
    /// Explicit exemplar indices; seeded selection when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_seed: Option<u64>,
    #[serde(default)]
    pub include_title: bool,
    #[serde(default = "default_budget")]
    pub exemplar_char_budget: usize,
    #[serde(default)]
    pub parse_mode: ParseMode,
}

impl Default for PromptingSection {
    fn default() -> Self {
        Self {
            template: TemplateVersion::default(),
            scaffold: None,
            shots: 0,
            exemplars: None,
            exemplar_seed: None,
            include_title: false,
            exemplar_char_budget: default_budget(),
            parse_mode: ParseMode::default(),
        }
    }
}

/// A backend plus an optional explicit result label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub config: BackendConfig,
}

fn default_resamples() -> usize {
    2000
}

fn default_confidence() -> f64 {
    0.95
}

fn default_top_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_seed: Option<u64>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Runs per backend; 1 for deterministic backends and 3 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<u32>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            failure_policy: FailurePolicy::default(),
            bootstrap_resamples: default_resamples(),
            bootstrap_seed: None,
            confidence: default_confidence(),
            repeats: None,
            top_k: default_top_k(),
        }
    }
}

fn default_label_template() -> String {
    "{dataset}_{shots}shot_{model}".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Placeholders: `{dataset}`, `{shots}`, `{model}`, `{template}`.
    #[serde(default = "default_label_template")]
    pub label_template: String,
    /// Cache remote responses under the run directory.
    #[serde(default = "yes")]
    pub cache: bool,
}

/// A complete run description. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub codebook: CodebookSection,
    #[serde(default)]
    pub prompting: PromptingSection,
    #[serde(default)]
    pub backend: Vec<BackendEntry>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.paths.iter_mut().for_each(fix);
        self.corpus.keywords.iter_mut().for_each(fix);
        self.codebook.path.iter_mut().for_each(fix);
        self.codebook.gold.iter_mut().for_each(fix);
        self.prompting.scaffold.iter_mut().for_each(fix);
        for b in &mut self.backend {
            b.config.rules.iter_mut().for_each(fix);
            b.config.replay.iter_mut().for_each(fix);
        }
        fix(&mut self.output.dir);
    }

    /// Fills every unset seed and repeat count with its default.
    pub fn materialize(&mut self) {
        self.corpus.seed.get_or_insert(DEFAULT_SEED);
        self.prompting.exemplar_seed.get_or_insert(DEFAULT_SEED);
        self.evaluation.bootstrap_seed.get_or_insert(DEFAULT_SEED);
    }

    /// Applies a `--seed key=value` override (`sampling`, `exemplar`,
    /// `bootstrap`).
    pub fn override_seed(&mut self, assignment: &str) -> Result<(), PipelineError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| PipelineError::Usage(format!("seed override {assignment:?} is not key=value")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| PipelineError::Usage(format!("seed {value:?} is not a non-negative integer")))?;
        let slot = match key.trim() {
            "sampling" => &mut self.corpus.seed,
            "exemplar" => &mut self.prompting.exemplar_seed,
            "bootstrap" => &mut self.evaluation.bootstrap_seed,
            other => return Err(PipelineError::Usage(format!("unknown seed {other:?}"))),
        };
        *slot = Some(value);
        Ok(())
    }

    pub fn split_boundary(&self) -> Result<Option<DateTime<Utc>>, PipelineError> {
        self.corpus
            .split_at
            .as_deref()
            .map(|s| parse_timestamp(s).map_err(|e| PipelineError::Config(format!("split_at: {e}"))))
            .transpose()
    }

    /// Checks value ranges and that referenced input files exist.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus.paths.is_empty() {
            return bad("corpus.paths is empty".into());
        }
        let mut inputs: Vec<&PathBuf> = self.corpus.paths.iter().collect();
        inputs.extend(&self.corpus.keywords);
        inputs.extend(&self.codebook.path);
        inputs.extend(&self.codebook.gold);
        inputs.extend(&self.prompting.scaffold);
        for b in &self.backend {
            inputs.extend(&b.config.rules);
            inputs.extend(&b.config.replay);
        }
        if let Some(missing) = inputs.into_iter().find(|p| !p.exists()) {
            return bad(format!("input {} does not exist", missing.display()));
        }
        if let Some(ix) = &self.prompting.exemplars {
            if ix.len() != self.prompting.shots {
                return bad(format!("{} exemplar indices for {} shots", ix.len(), self.prompting.shots));
            }
        }
        if !(self.evaluation.confidence > 0.0 && self.evaluation.confidence < 1.0) {
            return bad("evaluation.confidence must lie in (0, 1)".into());
        }
        if self.evaluation.bootstrap_resamples < 100 {
            return bad("evaluation.bootstrap_resamples must be at least 100".into());
        }
        if self.evaluation.repeats == Some(0) {
            return bad("evaluation.repeats must be at least 1".into());
        }
        self.retry.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for b in &self.backend {
            b.config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.split_boundary()?;
        let labels = self.labels();
        let mut unique = labels.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != labels.len() {
            return bad(format!("backend labels are not unique: {labels:?}"));
        }
        Ok(())
    }

    pub fn label_for(&self, entry: &BackendEntry) -> String {
        entry.label.clone().unwrap_or_else(|| {
            self.output
                .label_template
                .replace("{dataset}", &self.corpus.name)
                .replace("{shots}", &self.prompting.shots.to_string())
                .replace("{model}", &entry.config.model)
                .replace("{template}", self.prompting.template.as_str())
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.backend.iter().map(|b| self.label_for(b)).collect()
    }

    pub fn repeats_for(&self, entry: &BackendEntry) -> u32 {
        self.evaluation
            .repeats
            .unwrap_or(if entry.config.is_deterministic() { 1 } else { 3 })
    }
}
