use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::train::{data_dir, evaluate_model, train_on, PreparedData};
use crate::config::RunConfig;
use crate::error::{DmaeError, Result};
use crate::metrics::MetricsReport;

pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];
pub const TIME_SLICE_GRID: [usize; 5] = [1, 5, 10, 32, 64];
pub const SIM_BIN_GRID: [usize; 5] = [1, 5, 10, 50, 100];
pub const DIM_GRID: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    LambdaDec,
    /// Number of time slices `l`.
    L,
    /// Number of similarity bins `n`.
    N,
    /// Full `l × n` grid.
    LN,
    /// Embedding width, applied to both the ID and interest dimensions.
    Dim,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LambdaDec => "lambda_dec",
            SweepAxis::L => "l",
            SweepAxis::N => "n",
            SweepAxis::LN => "l-n",
            SweepAxis::Dim => "dim",
        }
    }

    /// Each grid point as a list of `(key, value)` settings.
    pub fn grid(self) -> Vec<Vec<(String, f64)>> {
        let one = |k: &str, v: f64| vec![(k.to_string(), v)];
        match self {
            SweepAxis::LambdaDec => LAMBDA_GRID.iter().map(|&v| one("lambda_dec", v)).collect(),
            SweepAxis::L => TIME_SLICE_GRID.iter().map(|&v| one("time_slices", v as f64)).collect(),
            SweepAxis::N => SIM_BIN_GRID.iter().map(|&v| one("sim_bins", v as f64)).collect(),
            SweepAxis::LN => TIME_SLICE_GRID
                .iter()
                .flat_map(|&l| {
                    SIM_BIN_GRID.iter().map(move |&n| {
                        vec![("time_slices".to_string(), l as f64), ("sim_bins".to_string(), n as f64)]
                    })
                })
                .collect(),
            SweepAxis::Dim => DIM_GRID
                .iter()
                .map(|&d| vec![("dim".to_string(), d as f64), ("id_dim".to_string(), d as f64)])
                .collect(),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = DmaeError;

    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::LambdaDec, SweepAxis::L, SweepAxis::N, SweepAxis::LN, SweepAxis::Dim]
            .into_iter()
            .find(|a| a.name() == s || (s == "lambda-dec" && *a == SweepAxis::LambdaDec))
            .ok_or_else(|| DmaeError::InvalidConfig(format!("unknown sweep axis {s:?}")))
    }
}

fn apply(config: &RunConfig, settings: &[(String, f64)]) -> RunConfig {
    let mut c = config.clone();
    for (key, v) in settings {
        match key.as_str() {
            "lambda_dec" => c.lambda_dec = *v,
            "time_slices" => c.time_slices = *v as usize,
            "sim_bins" => c.sim_bins = *v as usize,
            "dim" => c.dim = *v as usize,
            "id_dim" => c.id_dim = *v as usize,
            _ => unreachable!("grid keys are fixed"),
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub settings: Vec<(String, f64)>,
    /// Validation metrics of the trained model (test metrics when no validation split exists).
    pub metrics: MetricsReport,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.best)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DmaeError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.rows.first() {
            for (k, _) in &first.settings {
                let _ = write!(out, "{k}\t");
            }
        }
        out.push_str("auc\tgauc_pv\tlogloss\tbest\n");
        for r in &self.rows {
            for (_, v) in &r.settings {
                let _ = write!(out, "{v}\t");
            }
            let _ = writeln!(
                out,
                "{:.6}\t{:.6}\t{:.6}\t{}",
                r.metrics.auc,
                r.metrics.gauc_pv,
                r.metrics.logloss,
                if r.best { "*" } else { "" }
            );
        }
        out
    }
}

/// Trains one model per grid point of `axis` and ranks the points by validation AUC.
pub fn sweep(config: &RunConfig, axis: SweepAxis, out_dir: Option<&Path>) -> Result<SweepTable> {
    let data = PreparedData::load(data_dir(config)?, config.max_seq_len, config.val_fraction)?;
    sweep_on(config, &data, axis, out_dir)
}

pub(crate) fn sweep_on(
    config: &RunConfig,
    data: &PreparedData,
    axis: SweepAxis,
    out_dir: Option<&Path>,
) -> Result<SweepTable> {
    let scored = if data.validation.is_empty() { &data.test } else { &data.validation };
    let mut rows = Vec::new();
    for settings in axis.grid() {
        let run_config = apply(config, &settings);
        run_config.validate()?;
        let outcome = train_on(&run_config, data, None)?;
        let metrics = evaluate_model(&outcome.model, scored, config.batch_size)?;
        info!("{axis} {settings:?}: auc {:.4}", metrics.auc);
        rows.push(SweepRow {
            settings,
            metrics,
            best: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.metrics.auc.total_cmp(&b.1.metrics.auc))
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].best = true;
    }
    let table = SweepTable { axis, rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| DmaeError::io(dir, e))?;
        let path = dir.join(format!("sweep-{axis}.tsv"));
        std::fs::write(&path, table.to_tsv()).map_err(|e| DmaeError::io(&path, e))?;
        let path = dir.join(format!("sweep-{axis}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|e| DmaeError::io(&path, e))?;
    }
    Ok(table)
}
