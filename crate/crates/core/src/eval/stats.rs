use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom; NaN for the degenerate case.
    pub df: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance two-sample t-test.
///
/// Both variances zero with equal means gives t = 0, p = 1. Both variances zero
/// with different means has no finite statistic and is an error.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::SampleTooSmall(a.len().min(b.len())));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchResult {
                t: 0.0,
                p: 1.0,
                df: f64::NAN,
            });
        }
        return Err(EvalError::DegenerateSample);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2)
        / (sa.powi(2) / (a.len() as f64 - 1.0) + sb.powi(2) / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| EvalError::Distribution(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(WelchResult { t, p, df })
}

/// Items x raters matrix of categorical ratings for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub dimension: String,
    pub ratings: Vec<Vec<u32>>,
    /// Categories that may occur even if unobserved.
    #[serde(default)]
    pub categories: Vec<u32>,
}

impl RatingTable {
    pub fn new(dimension: impl Into<String>, ratings: Vec<Vec<u32>>) -> Self {
        Self {
            dimension: dimension.into(),
            ratings,
            categories: Vec::new(),
        }
    }

    pub fn raters(&self) -> usize {
        self.ratings.first().map_or(0, Vec::len)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        let n = self.raters();
        if self.ratings.is_empty() {
            return Err(EvalError::InvalidTable("no items".into()));
        }
        if n < 2 {
            return Err(EvalError::InvalidTable("at least two raters are needed".into()));
        }
        if let Some(i) = self.ratings.iter().position(|row| row.len() != n) {
            return Err(EvalError::InvalidTable(format!(
                "item {i} has {} ratings, expected {n}",
                self.ratings[i].len()
            )));
        }
        Ok(())
    }
}

/// Fleiss' kappa. Chance agreement of 1 (a single category in use) gives 1.
pub fn fleiss_kappa(table: &RatingTable) -> Result<f64, EvalError> {
    table.check()?;
    let n = table.raters() as f64;
    let items = table.ratings.len() as f64;
    let mut totals: BTreeMap<u32, f64> = table.categories.iter().map(|c| (*c, 0.0)).collect();
    let mut agreement = 0.0;
    for row in &table.ratings {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for r in row {
            *counts.entry(*r).or_default() += 1.0;
        }
        let sq: f64 = counts.values().map(|c| c * c).sum();
        agreement += (sq - n) / (n * (n - 1.0));
        for (c, k) in counts {
            *totals.entry(c).or_default() += k;
        }
    }
    let p_bar = agreement / items;
    let p_e: f64 = totals.values().map(|t| (t / (items * n)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok(((p_bar - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_reference_case() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        // t = -3 / sqrt(2/3), df = 4
        assert!((r.t - (-3.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
        assert!((r.p - 0.0213).abs() < 1e-3);
    }

    #[test]
    fn welch_degenerate() {
        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(matches!(
            welch_t_test(&[1.0, 1.0], &[2.0, 2.0]),
            Err(EvalError::DegenerateSample)
        ));
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn kappa_hand_table() {
        let t = RatingTable::new(
            "x",
            vec![vec![0, 0, 0], vec![0, 0, 1], vec![1, 1, 1], vec![0, 1, 1]],
        );
        assert!((fleiss_kappa(&t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_perfect_and_ragged() {
        let t = RatingTable::new("x", vec![vec![3, 3], vec![5, 5]]);
        assert_eq!(fleiss_kappa(&t).unwrap(), 1.0);
        let t = RatingTable::new("x", vec![vec![4, 4], vec![4, 4]]);
        assert_eq!(fleiss_kappa(&t).unwrap(), 1.0);
        let t = RatingTable::new("x", vec![vec![1, 2], vec![1]]);
        assert!(fleiss_kappa(&t).is_err());
    }
}
