//! AUC, request-level group AUC and log loss.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DmaeError, Result};

/// Probability clip for log loss.
pub const SCORE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub request_id: String,
    pub label: u8,
    pub score: f64,
}

impl EvalRecord {
    pub fn new(request_id: impl Into<String>, label: u8, score: f64) -> Self {
        Self {
            request_id: request_id.into(),
            label,
            score,
        }
    }
}

/// Rank-sum AUC over `(label, score)` pairs; tied scores share their mean rank.
fn auc_pairs(pairs: &mut [(u8, f64)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.0 == 1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DmaeError::SingleClass("auc"));
    }
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].1 == pairs[i].1 {
            j += 1;
        }
        // ranks i+1..=j+1 averaged
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos = pairs[i..=j].iter().filter(|p| p.0 == 1).count();
        rank_sum += mean_rank * pos as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc(records: &[EvalRecord]) -> Result<f64> {
    let mut pairs: Vec<(u8, f64)> = records.iter().map(|r| (r.label, r.score)).collect();
    auc_pairs(&mut pairs)
}

/// Impression-weighted mean of per-request AUCs; requests with one class are skipped.
pub fn gauc_pv(records: &[EvalRecord]) -> Result<f64> {
    let mut groups: BTreeMap<&str, Vec<(u8, f64)>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.request_id.as_str())
            .or_default()
            .push((r.label, r.score));
    }
    let (mut weighted, mut weight) = (0.0, 0usize);
    for pairs in groups.values_mut() {
        if let Ok(a) = auc_pairs(pairs) {
            weighted += a * pairs.len() as f64;
            weight += pairs.len();
        }
    }
    if weight == 0 {
        return Err(DmaeError::SingleClass("gauc_pv: no request has both classes"));
    }
    Ok(weighted / weight as f64)
}

pub fn logloss(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(DmaeError::EmptyInput("logloss"));
    }
    let total: f64 = records
        .iter()
        .map(|r| {
            let p = r.score.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP);
            if r.label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub gauc_pv: f64,
    pub logloss: f64,
    pub samples: usize,
}

impl MetricsReport {
    pub fn compute(records: &[EvalRecord]) -> Result<Self> {
        Ok(Self {
            auc: auc(records)?,
            gauc_pv: gauc_pv(records)?,
            logloss: logloss(records)?,
            samples: records.len(),
        })
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "auc={}\ngauc_pv={}\nlogloss={}\nsamples={}\n",
            self.auc, self.gauc_pv, self.logloss, self.samples
        )
    }

    /// Writes `metrics.txt` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let txt = dir.join("metrics.txt");
        std::fs::write(&txt, self.to_key_value()).map_err(|e| DmaeError::io(&txt, e))?;
        let json = dir.join("metrics.json");
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&json, body).map_err(|e| DmaeError::io(&json, e))?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DmaeError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
