use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{MetricKind, MetricSet};
use crate::scalar::Scalar;

/// A labelled row of the four headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow<T> {
    pub label: String,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub accuracy: T,
}

impl<T: Scalar> MetricRow<T> {
    pub fn from_set(label: impl Into<String>, m: &MetricSet<T>) -> Self {
        Self {
            label: label.into(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            accuracy: m.accuracy,
        }
    }

    pub fn get(&self, kind: MetricKind) -> T {
        match kind {
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::F1 => self.f1,
            MetricKind::Accuracy => self.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow<T> {
    pub row: MetricRow<T>,
    /// Fractional ranks for precision, recall, F1, accuracy.
    pub ranks: [T; 4],
    pub avg_rank: T,
}

/// Rows sorted by ascending average rank, ties broken by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRanking<T> {
    pub rows: Vec<RankedRow<T>>,
}

// NaN sorts below every number.
fn cmp_desc<T: Scalar>(a: T, b: T) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).expect("not NaN"),
    }
}

/// Descending ranks with ties replaced by the mean of their positions.
pub fn fractional_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    values
        .iter()
        .map(|&v| {
            let better = values.iter().filter(|&&o| cmp_desc(o, v) == Ordering::Less).count();
            let tied = values.iter().filter(|&&o| cmp_desc(o, v) == Ordering::Equal).count();
            // positions better+1 ..= better+tied
            T::from_count(better as u64) + T::from_count(tied as u64 + 1) / T::lit(2.0)
        })
        .collect()
}

/// Average of the fractional ranks on precision, recall, F1 and accuracy.
pub fn avg_rank<T: Scalar>(rows: &[MetricRow<T>]) -> ModelRanking<T> {
    let per_metric: Vec<Vec<T>> = MetricKind::ALL
        .iter()
        .map(|&k| fractional_ranks(&rows.iter().map(|r| r.get(k)).collect::<Vec<_>>()))
        .collect();
    let mut ranked: Vec<RankedRow<T>> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let ranks = [per_metric[0][i], per_metric[1][i], per_metric[2][i], per_metric[3][i]];
            let avg = ranks.iter().fold(T::zero(), |a, &b| a + b) / T::lit(4.0);
            RankedRow {
                row: row.clone(),
                ranks,
                avg_rank: avg,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.avg_rank
            .partial_cmp(&b.avg_rank)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.row.label.cmp(&b.row.label))
            .then_with(|| {
                MetricKind::ALL
                    .iter()
                    .map(|&k| cmp_desc(a.row.get(k), b.row.get(k)))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    ModelRanking { rows: ranked }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, p: f64, r: f64, f: f64, a: f64) -> MetricRow<f64> {
        MetricRow { label: label.into(), precision: p, recall: r, f1: f, accuracy: a }
    }

    #[test]
    fn ties_get_mean_position() {
        assert_eq!(fractional_ranks(&[0.9, 0.8, 0.9, 0.7]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(fractional_ranks(&[0.5f32, 0.5, 0.5]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn full_tie() {
        let r = avg_rank(&[row("b", 0.5, 0.5, 0.5, 0.9), row("a", 0.5, 0.5, 0.5, 0.9)]);
        assert!(r.rows.iter().all(|x| x.avg_rank == 1.5));
        assert_eq!(r.rows[0].row.label, "a");
    }

    #[test]
    fn strict_order() {
        let r = avg_rank(&[
            row("mid", 0.5, 0.5, 0.5, 0.5),
            row("low", 0.1, 0.1, 0.1, 0.1),
            row("top", 0.9, 0.9, 0.9, 0.9),
        ]);
        let got: Vec<_> = r.rows.iter().map(|x| (x.row.label.as_str(), x.avg_rank)).collect();
        assert_eq!(got, [("top", 1.0), ("mid", 2.0), ("low", 3.0)]);
    }

    #[test]
    fn nan_ranks_last() {
        assert_eq!(fractional_ranks(&[f64::NAN, 0.1]), vec![2.0, 1.0]);
    }
}
