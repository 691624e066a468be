//! Ranking and calibration metrics and the evaluation report.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::ndiff::checkpoint::config_hash;
use crate::ndiff::log_loss_value;

fn check_inputs(preds: &[f64], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Undefined("no examples".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if preds.iter().any(|p| p.is_nan()) {
        return Err(Error::NonFinite("predictions"));
    }
    Ok(())
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Sorts once, so `O(n log n)`.
pub fn auc(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(preds, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUC needs both a positive and a negative".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    // twice the number of correctly ordered pairs, so ties stay integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && preds[order[j]] == preds[order[i]] {
            if labels[order[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mean negative log-likelihood with predictions clamped away from 0 and 1.
pub fn logloss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(preds, labels)?;
    let y: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    Ok(log_loss_value(preds, &y))
}

/// How a model's AUC is compared to a baseline's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaImprMode {
    /// `auc / base - 1`.
    #[default]
    Ratio,
    /// `(auc - 0.5) / (base - 0.5) - 1`, the lift over random guessing.
    Centered,
}

/// Relative improvement in percent.
pub fn rela_impr(auc_model: f64, auc_base: f64, mode: RelaImprMode) -> Result<f64> {
    let (num, den) = match mode {
        RelaImprMode::Ratio => (auc_model, auc_base),
        RelaImprMode::Centered => (auc_model - 0.5, auc_base - 0.5),
    };
    if den == 0.0 {
        return Err(Error::Undefined(format!("{mode:?} RelaImpr against baseline AUC {auc_base}")));
    }
    Ok((num / den - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaImpr {
    pub mode: RelaImprMode,
    pub baseline_auc: f64,
    pub value_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub logloss: f64,
    pub n: usize,
    pub pos_rate: f64,
    pub relaimpr: Option<RelaImpr>,
    pub config_hash: String,
    pub seconds: f64,
    /// Test AUC per ablation variant, when several were run.
    #[serde(default)]
    pub breakdown: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn evaluate(preds: &[f64], labels: &[u8], config_hash: String, seconds: f64) -> Result<Self> {
        let auc = auc(preds, labels)?;
        let logloss = logloss(preds, labels)?;
        let pos = labels.iter().filter(|&&y| y == 1).count();
        Ok(Self {
            auc,
            logloss,
            n: labels.len(),
            pos_rate: pos as f64 / labels.len() as f64,
            relaimpr: None,
            config_hash,
            seconds,
            breakdown: BTreeMap::new(),
        })
    }

    pub fn with_baseline(mut self, baseline_auc: f64, mode: RelaImprMode) -> Result<Self> {
        self.relaimpr = Some(RelaImpr {
            mode,
            baseline_auc,
            value_pct: rela_impr(self.auc, baseline_auc, mode)?,
        });
        Ok(self)
    }

    /// The report with wall-clock time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One line of the sweep summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub variant: String,
    pub l: usize,
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
    pub auc: f64,
    pub logloss: f64,
}

/// Write `report` as JSON to `path`; with a summary, also append it to
/// `csv_path`, adding the header when the file is new.
pub fn emit_report(report: &EvalReport, path: &Path, summary: Option<(&SummaryRow, &Path)>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, report.to_json()? + "\n").map_err(|e| Error::io(path, e))?;
    if let Some((row, csv_path)) = summary {
        append_summary(row, csv_path)?;
    }
    Ok(())
}

pub fn append_summary(row: &SummaryRow, csv_path: &Path) -> Result<()> {
    let fresh = std::fs::metadata(csv_path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(csv_path)
        .map_err(|e| Error::io(csv_path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| Error::io(csv_path, e))
}
