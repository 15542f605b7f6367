//! Post collections: ingestion, keyword relevance filtering, cleanup,
//! reproducible sampling and temporal splits.
//!
//! Every transformation returns a fresh [`Corpus`]; inputs are never mutated.
//! Posts inside a corpus are always ordered by `(created_at, id)`.

mod clean;
mod io;
mod keywords;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

pub use clean::{dedup_clean, is_poorly_formatted, normalize_text, Cleaned, RemovalCounts};
pub use io::{load_posts, write_posts, FileSource, PostFormat, PostSource};
pub use keywords::{keyword_filter, KeywordGroup, KeywordSet, MatchMode, Rule, Term};
pub(crate) use keywords::{TermSpec, DEFAULT_KEYWORDS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {record}: {message}")]
    Malformed {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("duplicate post id {id:?} (records {first} and {second})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("post at position {0} has an empty id")]
    EmptyId(usize),
    #[error("keyword set: {0}")]
    Keywords(String),
    #[error("rule references unknown keyword group {0:?}")]
    UnknownGroup(String),
    #[error("rule syntax error: {0}")]
    RuleSyntax(String),
    #[error("cannot sample {requested} posts from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

/// One social-media document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub source: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Post {
    /// Title and body joined, the text keyword rules are evaluated on.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

/// An ordered, id-unique collection of posts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    posts: Vec<Post>,
    provenance: String,
}

impl Corpus {
    /// Builds a corpus, normalizing order and rejecting empty or duplicate ids.
    pub fn new(
        name: impl Into<String>,
        posts: Vec<Post>,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, post) in posts.iter().enumerate() {
            if post.id.is_empty() {
                return Err(CorpusError::EmptyId(i + 1));
            }
            if let Some(first) = seen.insert(post.id.as_str(), i + 1) {
                return Err(CorpusError::DuplicateId {
                    id: post.id.clone(),
                    first,
                    second: i + 1,
                });
            }
        }
        Ok(Self::from_unique(name.into(), posts, provenance.into()))
    }

    // Callers guarantee id uniqueness (subsets of an existing corpus).
    fn from_unique(name: String, mut posts: Vec<Post>, provenance: String) -> Self {
        posts.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        Self {
            name,
            posts,
            provenance,
        }
    }

    fn derive(&self, posts: Vec<Post>, step: &str) -> Self {
        let provenance = if self.provenance.is_empty() {
            step.to_string()
        } else {
            format!("{}; {}", self.provenance, step)
        };
        Self::from_unique(self.name.clone(), posts, provenance)
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self::from_unique(name.into(), Vec::new(), String::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.posts.iter().map(|p| p.id.as_str()).collect()
    }

    /// Earliest and latest `created_at`, if any posts exist.
    pub fn time_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        Some((self.posts.first()?.created_at, self.posts.last()?.created_at))
    }

    /// Concatenates corpora; ids must stay unique.
    pub fn merge(name: impl Into<String>, parts: &[Corpus]) -> Result<Self, CorpusError> {
        let posts = parts.iter().flat_map(|c| c.posts.iter().cloned()).collect();
        let provenance = parts
            .iter()
            .map(|c| c.provenance.as_str())
            .collect::<Vec<_>>()
            .join(" + ");
        Corpus::new(name, posts, provenance)
    }
}

/// Uniform sampling without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub target_n: usize,
    pub seed: u64,
}

/// Draws `spec.target_n` posts uniformly without replacement.
///
/// The draw runs over the normalized `(created_at, id)` order, so the result
/// depends only on the post set and the seed. See [`crate::rng`] for the
/// exact algorithm.
pub fn sample_random(corpus: &Corpus, spec: SamplingSpec) -> Result<Corpus, CorpusError> {
    if spec.target_n == 0 || spec.target_n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: spec.target_n,
            available: corpus.len(),
        });
    }
    let picked = SeededRng::new(spec.seed).choose_indices(corpus.len(), spec.target_n);
    let posts = picked.into_iter().map(|i| corpus.posts[i].clone()).collect();
    Ok(corpus.derive(
        posts,
        &format!("sample_random(n={}, seed={})", spec.target_n, spec.seed),
    ))
}

/// Splits into posts strictly before `boundary` and the remainder.
pub fn temporal_split(corpus: &Corpus, boundary: DateTime<Utc>) -> (Corpus, Corpus) {
    let (before, after): (Vec<Post>, Vec<Post>) = corpus
        .posts
        .iter()
        .cloned()
        .partition(|p| p.created_at < boundary);
    let stamp = boundary.format("%Y-%m-%dT%H:%M:%SZ");
    (
        corpus
            .derive(before, &format!("created_at < {stamp}"))
            .with_name(format!("{}_before", corpus.name)),
        corpus
            .derive(after, &format!("created_at >= {stamp}"))
            .with_name(format!("{}_after", corpus.name)),
    )
}

pub(crate) mod timestamp {
    use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(FORMAT).to_string()
    }

    /// Accepts RFC 3339 (any offset, converted to UTC) or a naive
    /// `YYYY-MM-DD[ T]HH:MM:SS` taken as UTC. Sub-second parts are dropped.
    pub fn parse(s: &str) -> Result<DateTime<Utc>, String> {
        let s = s.trim();
        if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
            return Ok(ts.with_timezone(&Utc).trunc_subsecs(0));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(naive.and_utc().trunc_subsecs(0));
            }
        }
        if let Ok(date) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
        }
        Err(format!("invalid timestamp {s:?}"))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}

pub use timestamp::parse as parse_timestamp;

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use chrono::TimeZone;

    pub fn post(id: &str, title: &str, body: &str, secs: i64) -> Post {
        Post {
            id: id.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            source: "r/test".to_string(),
            created_at: Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap(),
            url: None,
        }
    }

    pub fn corpus(posts: Vec<Post>) -> Corpus {
        Corpus::new("test", posts, "").unwrap()
    }
}
