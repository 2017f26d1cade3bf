use std::collections::BTreeMap;

use ens_core::eval::{fleiss_kappa, RatingTable};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::{Dimension, Scores, SessionRecord, SessionStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub dimension: Dimension,
    pub kappa: f64,
    /// Mean score on `dimension` over every stored rating.
    pub mean: f64,
    pub means: BTreeMap<Dimension, f64>,
    pub sessions: usize,
    pub raters: usize,
    pub table: RatingTable,
}

/// Items are closed sessions with at least two raters. Each row lists scores
/// in rater-id order, cut to the smallest rater count among included rows so
/// the table is rectangular.
pub fn rating_table(sessions: &[&SessionRecord], dimension: Dimension) -> Option<RatingTable> {
    let rows: Vec<Vec<u32>> = sessions
        .iter()
        .filter(|s| s.status == SessionStatus::Closed && s.ratings.len() >= 2)
        .map(|s| {
            s.ratings
                .values()
                .map(|scores| u32::from(scores[&dimension]))
                .collect()
        })
        .collect();
    let width = rows.iter().map(Vec::len).min()?;
    let ratings = rows
        .into_iter()
        .map(|mut r| {
            r.truncate(width);
            r
        })
        .collect();
    let mut table = RatingTable::new(dimension.as_str(), ratings);
    table.categories = (1..=5).collect();
    Some(table)
}

pub fn dimension_means<'a>(ratings: impl Iterator<Item = &'a Scores>) -> BTreeMap<Dimension, f64> {
    let mut sums: BTreeMap<Dimension, (f64, usize)> = BTreeMap::new();
    for scores in ratings {
        for (d, v) in scores {
            let e = sums.entry(*d).or_default();
            e.0 += f64::from(*v);
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(d, (s, n))| (d, s / n as f64))
        .collect()
}

pub fn agreement_report(
    sessions: &[&SessionRecord],
    dimension: Dimension,
) -> Result<AgreementReport, ServiceError> {
    let insufficient = || ServiceError::InsufficientRaters(dimension.to_string());
    let table = rating_table(sessions, dimension).ok_or_else(insufficient)?;
    let kappa = fleiss_kappa(&table).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let means = dimension_means(sessions.iter().flat_map(|s| s.ratings.values()));
    Ok(AgreementReport {
        dimension,
        kappa,
        mean: means.get(&dimension).copied().unwrap_or(f64::NAN),
        sessions: table.ratings.len(),
        raters: table.raters(),
        means,
        table,
    })
}
