use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::codebook::{Codebook, LabelVector, ThemeCode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThemeShare<T> {
    pub code: ThemeCode,
    pub count: u64,
    /// `100 * count / n`.
    pub percentage: T,
}

/// Per-code positive counts over `n` posts. Codes are independent, so
/// percentages need not sum to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeDistribution<T> {
    pub n: u64,
    pub shares: Vec<ThemeShare<T>>,
}

impl<T: Scalar> ThemeDistribution<T> {
    /// Builds from raw counts in alphabet order.
    pub fn from_counts(n: u64, counts: &[(ThemeCode, u64)]) -> Self {
        let shares = counts
            .iter()
            .map(|&(code, count)| ThemeShare {
                code,
                count,
                percentage: if n == 0 {
                    T::zero()
                } else {
                    T::lit(100.0) * T::from_count(count) / T::from_count(n)
                },
            })
            .collect();
        Self { n, shares }
    }

    pub fn share(&self, code: ThemeCode) -> Option<&ThemeShare<T>> {
        self.shares.iter().find(|s| s.code == code)
    }

    pub fn codes(&self) -> Vec<ThemeCode> {
        self.shares.iter().map(|s| s.code).collect()
    }

    /// The `k` most frequent codes, ties in alphabet order.
    pub fn top(&self, k: usize) -> Vec<&ThemeShare<T>> {
        let mut sorted: Vec<&ThemeShare<T>> = self.shares.iter().collect();
        sorted.sort_by_key(|s| std::cmp::Reverse(s.count));
        sorted.truncate(k);
        sorted
    }

    /// `C (p%, n)` entries, one decimal, most frequent first.
    pub fn summary_line(&self, k: usize) -> String {
        let mut out = String::new();
        for (i, s) in self.top(k).iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{} ({:.1}%, {})", s.code, s.percentage.to_f64_lossy(), s.count);
        }
        out
    }
}

/// Distribution of positive labels over the given vectors.
pub fn theme_distribution<'a, T: Scalar>(
    preds: impl IntoIterator<Item = &'a LabelVector>,
    cb: &Codebook,
) -> Result<ThemeDistribution<T>, EvalError> {
    let alphabet = cb.alphabet();
    let mut counts: Vec<(ThemeCode, u64)> = alphabet.iter().map(|&c| (c, 0)).collect();
    let mut n = 0u64;
    for v in preds {
        n += 1;
        for (code, count) in counts.iter_mut() {
            if v.get(*code) == Some(true) {
                *count += 1;
            }
        }
    }
    if n == 0 {
        return Err(EvalError::Empty("no classified posts".into()));
    }
    Ok(ThemeDistribution::from_counts(n, &counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionDelta<T> {
    /// `model% - gold%` per code, in percentage points.
    pub deltas: Vec<(ThemeCode, T)>,
    pub max_abs: Option<(ThemeCode, T)>,
}

/// Signed percentage-point differences, model minus gold.
pub fn distribution_delta<T: Scalar>(
    model: &ThemeDistribution<T>,
    gold: &ThemeDistribution<T>,
) -> Result<DistributionDelta<T>, EvalError> {
    if model.codes() != gold.codes() {
        return Err(EvalError::AlphabetMismatch);
    }
    let deltas: Vec<(ThemeCode, T)> = model
        .shares
        .iter()
        .zip(&gold.shares)
        .map(|(m, g)| (m.code, m.percentage - g.percentage))
        .collect();
    let max_abs = deltas.iter().copied().fold(None, |best: Option<(ThemeCode, T)>, (c, d)| match best {
        Some((_, b)) if b.abs() >= d.abs() => best,
        _ => Some((c, d)),
    });
    Ok(DistributionDelta { deltas, max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::alphabet;

    fn one_decimal(x: f64) -> String {
        format!("{x:.1}")
    }

    #[test]
    fn reported_percentages() {
        let c = alphabet("G")[0];
        let d = ThemeDistribution::<f64>::from_counts(286, &[(c, 82)]);
        assert_eq!(one_decimal(d.shares[0].percentage), "28.7");
        let d = ThemeDistribution::<f64>::from_counts(686, &[(c, 140)]);
        assert_eq!(one_decimal(d.shares[0].percentage), "20.4");
    }

    #[test]
    fn zero_vectors() {
        let cb = Codebook::shipped();
        let vs = vec![LabelVector::zeros(&cb.alphabet()); 4];
        let d: ThemeDistribution<f64> = theme_distribution(&vs, &cb).unwrap();
        assert_eq!(d.n, 4);
        assert!(d.shares.iter().all(|s| s.count == 0 && s.percentage == 0.0));
        assert!(theme_distribution::<f64>(std::iter::empty(), &cb).is_err());
    }

    #[test]
    fn deltas() {
        let a = alphabet("AIX");
        let model = ThemeDistribution::<f64>::from_counts(1000, &[(a[0], 135), (a[1], 165), (a[2], 0)]);
        let gold = ThemeDistribution::<f64>::from_counts(1000, &[(a[0], 178), (a[1], 178), (a[2], 0)]);
        let d = distribution_delta(&model, &gold).unwrap();
        assert!((d.deltas[0].1 + 4.3).abs() < 1e-9);
        assert!((d.deltas[1].1 + 1.3).abs() < 1e-9);
        assert_eq!(d.max_abs.unwrap().0, a[0]);
        let same = distribution_delta(&gold, &gold).unwrap();
        assert!(same.deltas.iter().all(|(_, x)| *x == 0.0));
        let other = ThemeDistribution::<f64>::from_counts(10, &[(a[0], 1)]);
        assert_eq!(distribution_delta(&other, &gold).unwrap_err(), EvalError::AlphabetMismatch);
    }

    #[test]
    fn summary_line_top_k() {
        let a = alphabet("ABIL");
        let d = ThemeDistribution::<f64>::from_counts(686, &[(a[0], 98), (a[1], 446), (a[2], 160), (a[3], 140)]);
        assert_eq!(d.summary_line(3), "B (65.0%, 446), I (23.3%, 160), L (20.4%, 140)");
    }
}
