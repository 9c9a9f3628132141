//! Forecast-error and structure-similarity metrics, the lower-triangular
//! performance matrix, and the AP/AF continual-learning aggregates.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::consistency::StructuralKnowledge;
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const METRIC_NAMES: [&str; 4] = ["mae", "rmse", "precision", "recall"];

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::Config(format!(
            "mae: got {} targets and {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::Config(format!(
            "rmse: got {} targets and {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    Ok((y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64)
        .sqrt())
}

/// Precision/recall of a 0/1 predicted graph against a binary prior.
/// Masked-out and diagonal entries are excluded. Degenerate denominators
/// yield 0 with a warning.
pub fn precision_recall(predicted: &Mat, prior: &StructuralKnowledge) -> Result<(f64, f64)> {
    let n = prior.n_vars();
    if predicted.rows != n || predicted.cols != n {
        return Err(Error::Config(format!(
            "predicted graph is {}x{}, prior is {n}x{n}",
            predicted.rows, predicted.cols
        )));
    }
    for &v in &predicted.data {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Config(format!(
                "precision_recall expects a 0/1 graph, found {v}"
            )));
        }
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j || prior.mask.get(i, j) == 0.0 {
                continue;
            }
            let p = predicted.get(i, j) == 1.0;
            let a = prior.a.get(i, j) == 1.0;
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let prec = if tp + fp == 0 {
        log::warn!("precision undefined (no predicted edges); reporting 0");
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let rec = if tp + fn_ == 0 {
        log::warn!("recall undefined (no prior edges); reporting 0");
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok((prec, rec))
}

/// Lower-triangular per-metric matrix: `values[metric][i][j]` is the score
/// on regime j+1 after training through regime i+1.
#[derive(Clone, Debug, Default)]
pub struct PerformanceMatrix {
    values: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PerformanceMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_row(&mut self, metric: &str, row: Vec<f64>) -> Result<()> {
        let rows = self.values.entry(metric.to_string()).or_default();
        if row.len() != rows.len() + 1 {
            return Err(Error::Config(format!(
                "performance row {} for `{metric}` must have {} entries, got {}",
                rows.len() + 1,
                rows.len() + 1,
                row.len()
            )));
        }
        rows.push(row);
        Ok(())
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    pub fn rows(&self, metric: &str) -> Option<&Vec<Vec<f64>>> {
        self.values.get(metric)
    }

    pub fn num_stages(&self) -> usize {
        self.values.values().next().map_or(0, |r| r.len())
    }

    /// AP at stage i (1-based): mean of row i.
    pub fn average_performance(&self, metric: &str, i: usize) -> Result<f64> {
        let rows = self
            .values
            .get(metric)
            .ok_or_else(|| Error::Config(format!("unknown metric `{metric}`")))?;
        if i == 0 || i > rows.len() {
            return Err(Error::Config(format!("AP: stage {i} out of range")));
        }
        let row = &rows[i - 1];
        Ok(row.iter().sum::<f64>() / i as f64)
    }

    /// AF at stage i (1-based): mean of P[i][j] - P[j][j] over j < i.
    /// Undefined for i < 2.
    pub fn average_forgetting(&self, metric: &str, i: usize) -> Result<f64> {
        if i < 2 {
            return Err(Error::Config(
                "average forgetting is undefined for i<2".into(),
            ));
        }
        let rows = self
            .values
            .get(metric)
            .ok_or_else(|| Error::Config(format!("unknown metric `{metric}`")))?;
        if i > rows.len() {
            return Err(Error::Config(format!("AF: stage {i} out of range")));
        }
        let row = &rows[i - 1];
        let mut s = 0.0;
        for j in 0..(i - 1) {
            s += row[j] - rows[j][j];
        }
        Ok(s / (i - 1) as f64)
    }

    pub fn to_csv(&self, metric: &str) -> Result<String> {
        let rows = self
            .values
            .get(metric)
            .ok_or_else(|| Error::Config(format!("unknown metric `{metric}`")))?;
        let s_total = rows.len();
        let mut out = String::new();
        for row in rows {
            let mut cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            cells.resize(s_total, String::new());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ApAf {
    pub ap: f64,
    pub af: Option<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RegimeSummary {
    pub regime: usize,
    pub metrics: BTreeMap<String, ApAf>,
}

/// AP/AF per stage per metric.
pub fn summarize(perf: &PerformanceMatrix) -> Result<Vec<RegimeSummary>> {
    let stages = perf.num_stages();
    let mut out = Vec::with_capacity(stages);
    for i in 1..=stages {
        let mut metrics = BTreeMap::new();
        for m in perf.metrics().map(String::from).collect::<Vec<_>>() {
            let ap = perf.average_performance(&m, i)?;
            let af = if i >= 2 {
                Some(perf.average_forgetting(&m, i)?)
            } else {
                None
            };
            metrics.insert(m, ApAf { ap, af });
        }
        out.push(RegimeSummary { regime: i, metrics });
    }
    Ok(out)
}
