use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SplitSide};
use super::store::write_atomic;
use super::PipelineError;
use crate::corpus::{
    dedup_clean, keyword_filter, load_posts, sample_random, temporal_split, write_posts, Corpus, KeywordSet,
    PostFormat, RemovalCounts, SamplingSpec,
};

/// Post counts after each ingest stage. Skipped stages carry the previous
/// count forward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub loaded: usize,
    pub filtered: usize,
    pub cleaned: usize,
    pub removed: RemovalCounts,
    /// Sizes of the (before, after) halves when split.
    pub split: Option<(usize, usize)>,
    pub sampled: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "loaded={}, filtered={}, cleaned={}, sampled={}",
            self.loaded, self.filtered, self.cleaned, self.sampled
        )?;
        writeln!(
            f,
            "removed: duplicate={}, blank={}, malformed={}",
            self.removed.duplicate, self.removed.blank, self.removed.malformed
        )?;
        if let Some((before, after)) = self.split {
            writeln!(f, "split: before={before}, after={after}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub summary: IngestSummary,
    pub filtered: Corpus,
    pub cleaned: Corpus,
    pub split: Option<(Corpus, Corpus)>,
    /// The corpus handed to classification.
    pub working: Corpus,
}

pub(crate) fn keyword_set(cfg: &RunConfig) -> Result<KeywordSet, PipelineError> {
    match &cfg.corpus.keywords {
        Some(path) => KeywordSet::load(path).map_err(|source| PipelineError::Stage {
            stage: "keywords",
            source,
        }),
        None => Ok(KeywordSet::shipped()),
    }
}

/// Load, filter, clean, split and sample in memory.
pub fn derive_corpus(cfg: &RunConfig) -> Result<IngestOutput, PipelineError> {
    let stage = |stage| move |source| PipelineError::Stage { stage, source };
    let parts = cfg
        .corpus
        .paths
        .iter()
        .map(|p| load_posts(p, cfg.corpus.format.unwrap_or_else(|| PostFormat::from_extension(p))))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("load"))?;
    let loaded = Corpus::merge(cfg.corpus.name.clone(), &parts).map_err(stage("load"))?;

    let filtered = if cfg.corpus.filter {
        let keywords = keyword_set(cfg)?;
        let rule = cfg
            .corpus
            .rule
            .clone()
            .or_else(|| keywords.default_rule().map(str::to_string))
            .ok_or_else(|| PipelineError::Config("no keyword rule configured".into()))?;
        keyword_filter(&loaded, &keywords, &rule).map_err(stage("keyword_filter"))?
    } else {
        loaded.clone()
    };

    let (cleaned, removed) = if cfg.corpus.clean {
        let c = dedup_clean(&filtered);
        (c.corpus, c.removed)
    } else {
        (filtered.clone(), RemovalCounts::default())
    };

    let split = cfg.split_boundary()?.map(|b| temporal_split(&cleaned, b));
    let kept = match (&split, cfg.corpus.keep) {
        (Some((before, _)), SplitSide::Before) => before.clone(),
        (Some((_, after)), SplitSide::After) => after.clone(),
        (None, SplitSide::Before | SplitSide::After) => {
            return Err(PipelineError::Config("corpus.keep needs corpus.split_at".into()))
        }
        _ => cleaned.clone(),
    };

    let working = match cfg.corpus.sample_n {
        Some(n) => sample_random(
            &kept,
            SamplingSpec {
                target_n: n,
                seed: cfg.corpus.seed.unwrap_or(super::DEFAULT_SEED),
            },
        )
        .map_err(stage("sample_random"))?,
        None => kept,
    }
    .with_name(cfg.corpus.name.clone());

    Ok(IngestOutput {
        summary: IngestSummary {
            loaded: loaded.len(),
            filtered: filtered.len(),
            cleaned: cleaned.len(),
            removed,
            split: split.as_ref().map(|(a, b)| (a.len(), b.len())),
            sampled: working.len(),
        },
        filtered,
        cleaned,
        split,
        working,
    })
}

/// Runs the ingest stages and writes each derived corpus under
/// `<output>/corpus/` together with `ingest_summary.txt`.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestOutput, PipelineError> {
    cfg.validate()?;
    let out = derive_corpus(cfg)?;
    let dir = cfg.output.dir.join("corpus");
    let write = |c: &Corpus, name: &str| {
        write_posts(c, &dir.join(format!("{name}.jsonl")), PostFormat::PostLines)
            .map_err(|source| PipelineError::Stage { stage: "write", source })
    };
    write(&out.filtered, "filtered")?;
    write(&out.cleaned, "cleaned")?;
    if let Some((before, after)) = &out.split {
        write(before, "before")?;
        write(after, "after")?;
    }
    write(&out.working, "working")?;
    write_atomic(&dir.join("ingest_summary.txt"), out.summary.to_string().as_bytes())?;
    Ok(out)
}
