//! Measurement suite: confusion matrices, precision / recall / F1 /
//! accuracy under per-theme, micro and macro aggregation, interval
//! estimates, repeat-run statistics, average-rank leaderboards and theme
//! distributions.
//!
//! All numeric results are generic over [`Scalar`]; the crate root exports
//! `f64` aliases.

mod distribution;
mod interval;
mod ranking;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{LabelVector, ThemeCode};
use crate::scalar::Scalar;

pub use distribution::{distribution_delta, theme_distribution, DistributionDelta, ThemeDistribution, ThemeShare};
pub use interval::{bootstrap_ci, wald_ci, z_for_confidence, IntervalEstimate, IntervalMethod};
pub use ranking::{avg_rank, fractional_ranks, MetricRow, ModelRanking, RankedRow};
pub use stats::{run_stats, RunStats, Summary};

/// Label vectors keyed by post id.
pub type LabelSet = BTreeMap<String, LabelVector>;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold and predictions cover different posts (only in gold: [{}]; only in predictions: [{}])", .only_gold.join(", "), .only_pred.join(", "))]
    IdMismatch {
        only_gold: Vec<String>,
        only_pred: Vec<String>,
    },
    #[error("post {post:?} has no label for code {code}")]
    MissingCode { post: String, code: ThemeCode },
    #[error("runs mix aggregation modes")]
    MixedAggregation,
    #[error("codebook mismatch between distributions")]
    AlphabetMismatch,
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn gold_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted_positives(&self) -> u64 {
        self.tp + self.fp
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    PerTheme,
    #[default]
    Micro,
    Macro,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::PerTheme => "per-theme",
            Aggregation::Micro => "micro",
            Aggregation::Macro => "macro",
        })
    }
}

/// Which of the four headline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Precision,
        MetricKind::Recall,
        MetricKind::F1,
        MetricKind::Accuracy,
    ];
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::F1 => "f1",
            MetricKind::Accuracy => "accuracy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub accuracy: T,
    pub aggregation: Aggregation,
    pub n_decisions: u64,
    /// A zero denominator was replaced by 0 somewhere in the computation.
    #[serde(default)]
    pub zero_division: bool,
}

impl<T: Scalar> MetricSet<T> {
    pub fn get(&self, kind: MetricKind) -> T {
        match kind {
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::F1 => self.f1,
            MetricKind::Accuracy => self.accuracy,
        }
    }

    /// Metrics of a single matrix.
    pub fn from_matrix(m: &ConfusionMatrix, aggregation: Aggregation) -> Self {
        let (precision, zp) = ratio(m.tp, m.tp + m.fp);
        let (recall, zr) = ratio(m.tp, m.tp + m.fn_);
        let (accuracy, _) = ratio(m.tp + m.tn, m.total());
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            accuracy,
            aggregation,
            n_decisions: m.total(),
            zero_division: zp || zr,
        }
    }
}

// 0 when the denominator is 0, flagged.
fn ratio<T: Scalar>(num: u64, den: u64) -> (T, bool) {
    if den == 0 {
        (T::zero(), true)
    } else {
        (T::from_count(num) / T::from_count(den), false)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score<T: Scalar>(precision: T, recall: T) -> T {
    let sum = precision + recall;
    if sum > T::zero() {
        T::lit(2.0) * precision * recall / sum
    } else {
        T::zero()
    }
}

/// Aggregates per-theme matrices.
///
/// Micro and per-theme pool all counts and compute once. Macro averages the
/// per-theme precision, recall and F1 (themes with zero denominators
/// contribute 0). Accuracy is always pooled over every decision.
pub fn metrics<T: Scalar>(matrices: &[ConfusionMatrix], aggregation: Aggregation) -> MetricSet<T> {
    let pooled: ConfusionMatrix = matrices.iter().copied().sum();
    let micro = MetricSet::<T>::from_matrix(&pooled, aggregation);
    match aggregation {
        Aggregation::Micro | Aggregation::PerTheme => micro,
        Aggregation::Macro => {
            if matrices.is_empty() {
                return micro;
            }
            let per: Vec<MetricSet<T>> = matrices
                .iter()
                .map(|m| MetricSet::from_matrix(m, Aggregation::PerTheme))
                .collect();
            let k = T::from_count(per.len() as u64);
            let mean = |f: fn(&MetricSet<T>) -> T| per.iter().map(f).fold(T::zero(), |a, b| a + b) / k;
            MetricSet {
                precision: mean(|m| m.precision),
                recall: mean(|m| m.recall),
                f1: mean(|m| m.f1),
                accuracy: micro.accuracy,
                aggregation,
                n_decisions: pooled.total(),
                zero_division: per.iter().any(|m| m.zero_division),
            }
        }
    }
}

/// Errors unless both sets cover exactly the same post ids.
pub fn check_same_posts(gold: &LabelSet, pred: &LabelSet) -> Result<(), EvalError> {
    let g: BTreeSet<&String> = gold.keys().collect();
    let p: BTreeSet<&String> = pred.keys().collect();
    if g == p {
        return Ok(());
    }
    Err(EvalError::IdMismatch {
        only_gold: g.difference(&p).map(|s| s.to_string()).collect(),
        only_pred: p.difference(&g).map(|s| s.to_string()).collect(),
    })
}

/// Counts for one theme over all posts.
pub fn confusion_per_theme(
    gold: &LabelSet,
    pred: &LabelSet,
    code: ThemeCode,
) -> Result<ConfusionMatrix, EvalError> {
    check_same_posts(gold, pred)?;
    let mut m = ConfusionMatrix::default();
    for (id, g) in gold {
        let missing = || EvalError::MissingCode {
            post: id.clone(),
            code,
        };
        let gv = g.get(code).ok_or_else(missing)?;
        let pv = pred[id].get(code).ok_or_else(missing)?;
        m.record(gv, pv);
    }
    Ok(m)
}

/// One matrix per code, in `alphabet` order.
pub fn confusion_all(
    gold: &LabelSet,
    pred: &LabelSet,
    alphabet: &[ThemeCode],
) -> Result<Vec<ConfusionMatrix>, EvalError> {
    alphabet
        .iter()
        .map(|&c| confusion_per_theme(gold, pred, c))
        .collect()
}

/// Treatment of posts whose responses never parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Drop from matrices and distributions; report the count.
    #[default]
    ExcludeAndReport,
    /// Score as an all-negative prediction.
    ScoreAllZero,
    /// Score as the complement of the gold vector (every decision wrong).
    ScoreAsWrong,
}

impl fmt::Display for FailurePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailurePolicy::ExcludeAndReport => "exclude-and-report",
            FailurePolicy::ScoreAllZero => "score-all-zero",
            FailurePolicy::ScoreAsWrong => "score-as-wrong",
        })
    }
}

impl std::str::FromStr for FailurePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude-and-report" => Ok(FailurePolicy::ExcludeAndReport),
            "score-all-zero" => Ok(FailurePolicy::ScoreAllZero),
            "score-as-wrong" => Ok(FailurePolicy::ScoreAsWrong),
            other => Err(format!("unknown failure policy {other:?}")),
        }
    }
}

/// Gold and prediction sets ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub gold: LabelSet,
    pub pred: LabelSet,
    /// Failed posts dropped under exclude-and-report.
    pub excluded: Vec<String>,
    /// Failed posts given a substitute prediction.
    pub imputed: Vec<String>,
}

/// Resolves classification failures (`None`) under `policy`.
pub fn apply_failure_policy(
    gold: &LabelSet,
    outcomes: &BTreeMap<String, Option<LabelVector>>,
    policy: FailurePolicy,
) -> Result<Scored, EvalError> {
    let g: BTreeSet<&String> = gold.keys().collect();
    let o: BTreeSet<&String> = outcomes.keys().collect();
    if g != o {
        return Err(EvalError::IdMismatch {
            only_gold: g.difference(&o).map(|s| s.to_string()).collect(),
            only_pred: o.difference(&g).map(|s| s.to_string()).collect(),
        });
    }
    let mut scored = Scored {
        gold: LabelSet::new(),
        pred: LabelSet::new(),
        excluded: Vec::new(),
        imputed: Vec::new(),
    };
    for (id, outcome) in outcomes {
        let g = &gold[id];
        let p = match (outcome, policy) {
            (Some(v), _) => v.clone(),
            (None, FailurePolicy::ExcludeAndReport) => {
                scored.excluded.push(id.clone());
                continue;
            }
            (None, FailurePolicy::ScoreAllZero) => {
                scored.imputed.push(id.clone());
                LabelVector::zeros(&g.codes().collect::<Vec<_>>())
            }
            (None, FailurePolicy::ScoreAsWrong) => {
                scored.imputed.push(id.clone());
                g.complement()
            }
        };
        scored.gold.insert(id.clone(), g.clone());
        scored.pred.insert(id.clone(), p);
    }
    Ok(scored)
}
