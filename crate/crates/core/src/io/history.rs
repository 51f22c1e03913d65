//! JSON-lines loss histories and their per-epoch summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::train::HistoryRecord;

pub fn write_history(path: &Path, records: &[HistoryRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() {
            let r = serde_json::from_str(body).map_err(|e| Error::Format { path: path.to_path_buf(), offset, detail: e.to_string() })?;
            out.push(r);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub gamma: f64,
    pub l_d: f64,
    pub l_adv: f64,
    pub l_mm: f64,
    pub l_percep: f64,
    pub l_sty: f64,
    pub l_total: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub steps: usize,
    pub epochs: Vec<EpochSummary>,
    pub first_l_mm: Option<f64>,
    pub last_l_mm: Option<f64>,
    pub all_finite: bool,
}

/// Per-epoch means of the main loss columns.
pub fn summarize_history(records: &[HistoryRecord]) -> HistorySummary {
    let mut epochs: Vec<EpochSummary> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let e = records[start].epoch;
        let end = start + records[start..].iter().take_while(|r| r.epoch == e).count();
        let group = &records[start..end];
        let n = group.len() as f64;
        let mean = |f: fn(&HistoryRecord) -> f64| group.iter().map(f).sum::<f64>() / n;
        epochs.push(EpochSummary {
            epoch: e,
            steps: group.len(),
            gamma: group[0].gamma,
            l_d: mean(|r| r.l_d),
            l_adv: mean(|r| r.losses.l_adv),
            l_mm: mean(|r| r.losses.l_mm),
            l_percep: mean(|r| r.losses.l_percep),
            l_sty: mean(|r| r.losses.l_sty),
            l_total: mean(|r| r.losses.l_total),
            d_real: mean(|r| r.d_real),
            d_fake: mean(|r| r.d_fake),
        });
        start = end;
    }
    HistorySummary {
        steps: records.len(),
        epochs,
        first_l_mm: records.first().map(|r| r.losses.l_mm),
        last_l_mm: records.last().map(|r| r.losses.l_mm),
        all_finite: records.iter().all(|r| r.losses.is_finite() && r.l_d.is_finite()),
    }
}
