use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::MetricReport;
use super::EvalError;

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "tau1", "tau2", "tau3", "ppl", "b4", "d3", "bsf1", "rlen", "ea", "ensc",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

/// The 3 x 3 grid over (tau1, tau2) with tau3 tied to tau1.
pub fn default_sweep_grid() -> Vec<SweepPoint> {
    let mut grid = Vec::new();
    for tau1 in [0.75, 0.8, 0.85] {
        for tau2 in [0.35, 0.4, 0.45] {
            grid.push(SweepPoint { tau1, tau2, tau3: tau1 });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub report: Option<MetricReport>,
    /// Runner failure for this point, if any.
    pub error: Option<String>,
}

/// Runs `runner` once per grid point (concurrently) and returns one row per
/// point sorted by (tau1, tau2). Failures are kept on their row.
pub fn threshold_sensitivity_sweep<F>(grid: &[SweepPoint], runner: F) -> Vec<SweepRow>
where
    F: Fn(&SweepPoint) -> Result<MetricReport, String> + Sync,
{
    let mut rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|p| match runner(p) {
            Ok(report) => SweepRow { point: *p, report: Some(report), error: None },
            Err(e) => {
                tracing::warn!(tau1 = p.tau1, tau2 = p.tau2, error = %e, "sweep point failed");
                SweepRow { point: *p, report: None, error: Some(e) }
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.point
            .tau1
            .total_cmp(&b.point.tau1)
            .then(a.point.tau2.total_cmp(&b.point.tau2))
    });
    rows
}

/// CSV with [`SWEEP_CSV_HEADER`]; failed rows and missing values are empty cells.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, EvalError> {
    let fmt = |e: csv::Error| EvalError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_CSV_HEADER).map_err(fmt)?;
    for row in rows {
        let p = row.point;
        let mut rec = vec![p.tau1.to_string(), p.tau2.to_string(), p.tau3.to_string()];
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        match &row.report {
            Some(r) => rec.extend([
                r.ppl.to_string(),
                r.b4.to_string(),
                r.d3.to_string(),
                r.bsf1.to_string(),
                r.rlen.to_string(),
                opt(r.ea),
                opt(r.ensc),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        w.write_record(&rec).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))
}
