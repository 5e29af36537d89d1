use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::train::{data_dir, evaluate_model, train_on, PreparedData};
use crate::config::{Ablation, RunConfig};
use crate::error::{DmaeError, Result};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub seed: u64,
    pub test: MetricsReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean test metrics of one variant over its seeds.
    pub fn mean(&self, variant: Ablation) -> Option<MetricsReport> {
        let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == variant).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(MetricsReport {
            auc: rows.iter().map(|r| r.test.auc).sum::<f64>() / n,
            gauc_pv: rows.iter().map(|r| r.test.gauc_pv).sum::<f64>() / n,
            logloss: rows.iter().map(|r| r.test.logloss).sum::<f64>() / n,
            samples: rows[0].test.samples,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tseed\tauc\tgauc_pv\tlogloss\tfinal_loss\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.variant, r.seed, r.test.auc, r.test.gauc_pv, r.test.logloss, r.final_loss
            );
        }
        for v in Ablation::ALL {
            if let Some(m) = self.mean(v) {
                let _ = writeln!(out, "{v}\tmean\t{:.6}\t{:.6}\t{:.6}\t", m.auc, m.gauc_pv, m.logloss);
            }
        }
        out
    }
}

/// Trains and tests every variant under every seed on one shared data split.
/// With `out_dir`, each run gets `<variant>-seed<seed>/` and the table is
/// written as `ablation.tsv` and `ablation.json`.
pub fn run_ablation_suite(
    config: &RunConfig,
    variants: &[Ablation],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let data = PreparedData::load(data_dir(config)?, config.max_seq_len, config.val_fraction)?;
    run_ablation_suite_on(config, &data, variants, seeds, out_dir)
}

pub(crate) fn run_ablation_suite_on(
    config: &RunConfig,
    data: &PreparedData,
    variants: &[Ablation],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    if data.test.is_empty() {
        return Err(DmaeError::EmptyInput("test split"));
    }
    let mut table = AblationTable::default();
    for &variant in variants {
        for &seed in seeds {
            let run_config = RunConfig {
                ablation: variant,
                seed,
                ..config.clone()
            };
            let run_dir = out_dir.map(|d| d.join(format!("{variant}-seed{seed}")));
            let outcome = train_on(&run_config, data, run_dir.as_deref())?;
            let test = evaluate_model(&outcome.model, &data.test, config.batch_size)?;
            info!("{variant} seed {seed}: test auc {:.4}", test.auc);
            table.rows.push(AblationRow {
                variant,
                seed,
                test,
                final_loss: outcome.history.final_loss().unwrap_or(f64::NAN),
            });
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| DmaeError::io(dir, e))?;
        let path = dir.join("ablation.tsv");
        std::fs::write(&path, table.to_tsv()).map_err(|e| DmaeError::io(&path, e))?;
        let path = dir.join("ablation.json");
        std::fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|e| DmaeError::io(&path, e))?;
    }
    Ok(table)
}
