use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_same_posts, metrics, Aggregation, ConfusionMatrix, EvalError, LabelSet, MetricKind, MetricSet};
use crate::codebook::ThemeCode;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    Wald,
    /// Percentile interval over post-level resampling with replacement.
    Bootstrap,
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntervalMethod::Wald => "wald",
            IntervalMethod::Bootstrap => "bootstrap",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate<T> {
    pub point: T,
    pub lower: T,
    pub upper: T,
    pub method: IntervalMethod,
    pub confidence: T,
    /// Decisions (Wald) or resamples (bootstrap).
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl<T: Scalar> IntervalEstimate<T> {
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, x: T) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Two-sided standard-normal critical value, e.g. 1.959964 for 0.95.
pub fn z_for_confidence<T: Scalar>(confidence: T) -> T {
    let c = confidence.to_f64_lossy();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    T::lit(normal.inverse_cdf(1.0 - (1.0 - c) / 2.0))
}

/// Normal-approximation interval for a proportion, clipped to `[0, 1]`.
pub fn wald_ci<T: Scalar>(p: T, n: u64, confidence: T) -> IntervalEstimate<T> {
    let n = n.max(1);
    let half = z_for_confidence(confidence) * (p * (T::one() - p) / T::from_count(n)).sqrt();
    IntervalEstimate {
        point: p,
        lower: (p - half).max(T::zero()),
        upper: (p + half).min(T::one()),
        method: IntervalMethod::Wald,
        confidence,
        n,
        seed: None,
    }
}

// Linear interpolation between order statistics (type 7).
fn quantile<T: Scalar>(sorted: &[T], q: T) -> T {
    let h = q * T::from_count(sorted.len() as u64 - 1);
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - lo) * (sorted[j] - sorted[i])
}

/// Percentile bootstrap interval for one metric.
///
/// Posts are resampled with replacement (`resamples` times, at least 100);
/// each resample's metric is computed from the summed per-post matrices.
/// The bounds are widened if needed so they bracket the point estimate.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci<T: Scalar>(
    gold: &LabelSet,
    pred: &LabelSet,
    alphabet: &[ThemeCode],
    metric: MetricKind,
    aggregation: Aggregation,
    resamples: usize,
    seed: u64,
    confidence: T,
) -> Result<IntervalEstimate<T>, EvalError> {
    if resamples < 100 {
        return Err(EvalError::InvalidArgument(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    check_same_posts(gold, pred)?;
    if gold.is_empty() {
        return Err(EvalError::Empty("no posts to resample".into()));
    }
    // per_post[i][k] = matrix of post i on theme k
    let per_post: Vec<Vec<ConfusionMatrix>> = gold
        .iter()
        .map(|(id, g)| {
            let p = &pred[id];
            alphabet
                .iter()
                .map(|&c| {
                    let missing = || EvalError::MissingCode { post: id.clone(), code: c };
                    let mut m = ConfusionMatrix::default();
                    m.record(g.get(c).ok_or_else(missing)?, p.get(c).ok_or_else(missing)?);
                    Ok(m)
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })
        .collect::<Result<_, _>>()?;
    let pooled_per_post: Vec<ConfusionMatrix> =
        per_post.iter().map(|row| row.iter().copied().sum()).collect();

    let evaluate = |themes: &[ConfusionMatrix]| -> T {
        let set: MetricSet<T> = metrics(themes, aggregation);
        set.get(metric)
    };
    let full: Vec<ConfusionMatrix> = (0..alphabet.len())
        .map(|k| per_post.iter().map(|row| row[k]).sum())
        .collect();
    let point = evaluate(&full);

    let n = per_post.len();
    let mut rng = SeededRng::new(seed);
    let mut values = Vec::with_capacity(resamples);
    let pooled_only = aggregation != Aggregation::Macro;
    let mut acc = vec![ConfusionMatrix::default(); alphabet.len()];
    for _ in 0..resamples {
        if pooled_only {
            let mut total = ConfusionMatrix::default();
            for _ in 0..n {
                total = total + pooled_per_post[rng.index(n)];
            }
            values.push(evaluate(&[total]));
        } else {
            acc.iter_mut().for_each(|m| *m = ConfusionMatrix::default());
            for _ in 0..n {
                let row = &per_post[rng.index(n)];
                for (a, m) in acc.iter_mut().zip(row) {
                    *a = *a + *m;
                }
            }
            values.push(evaluate(&acc));
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let alpha = T::one() - confidence;
    let two = T::lit(2.0);
    let lower = quantile(&values, alpha / two).min(point);
    let upper = quantile(&values, T::one() - alpha / two).max(point);
    Ok(IntervalEstimate {
        point,
        lower,
        upper,
        method: IntervalMethod::Bootstrap,
        confidence,
        n: resamples as u64,
        seed: Some(seed),
    })
}
