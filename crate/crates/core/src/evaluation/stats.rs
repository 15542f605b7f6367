use serde::{Deserialize, Serialize};

use super::{Aggregation, EvalError, MetricKind, MetricSet};
use crate::scalar::Scalar;

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub mean: T,
    /// Absent for a single run.
    pub sd: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats<T> {
    pub runs: usize,
    pub aggregation: Aggregation,
    pub precision: Summary<T>,
    pub recall: Summary<T>,
    pub f1: Summary<T>,
    pub accuracy: Summary<T>,
}

impl<T: Scalar> RunStats<T> {
    pub fn get(&self, kind: MetricKind) -> Summary<T> {
        match kind {
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::F1 => self.f1,
            MetricKind::Accuracy => self.accuracy,
        }
    }
}

fn summarize<T: Scalar>(values: &[T]) -> Summary<T> {
    let r = T::from_count(values.len() as u64);
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / r;
    let sd = (values.len() >= 2).then(|| {
        let ss = values.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean));
        (ss / (r - T::one())).sqrt()
    });
    Summary { mean, sd }
}

/// Per-metric mean and sample SD (divisor `R - 1`) across repeated runs.
pub fn run_stats<T: Scalar>(runs: &[MetricSet<T>]) -> Result<RunStats<T>, EvalError> {
    let first = runs.first().ok_or_else(|| EvalError::Empty("no runs".into()))?;
    if runs.iter().any(|r| r.aggregation != first.aggregation) {
        return Err(EvalError::MixedAggregation);
    }
    let column = |k: MetricKind| summarize(&runs.iter().map(|r| r.get(k)).collect::<Vec<_>>());
    Ok(RunStats {
        runs: runs.len(),
        aggregation: first.aggregation,
        precision: column(MetricKind::Precision),
        recall: column(MetricKind::Recall),
        f1: column(MetricKind::F1),
        accuracy: column(MetricKind::Accuracy),
    })
}
