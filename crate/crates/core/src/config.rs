//! Run configuration: model shape, objective, optimiser schedule, data
//! location and the ablation variant. Serialised as flat TOML key/value pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DmaeError, Result};

/// Model variant. `None` is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Plain bucket lookup instead of scaled buckets plus sine-cosine.
    MieuSe,
    /// No recency position term in interest mapping.
    MieuT,
    /// Fusion bypassed: interest sequences are mean-pooled directly.
    Mifu,
    /// Decoder never constructed, decoding weight forced to zero.
    Iddu,
    /// ID-only DIN backbone.
    DinBaseline,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::None,
        Ablation::MieuSe,
        Ablation::MieuT,
        Ablation::Mifu,
        Ablation::Iddu,
        Ablation::DinBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::MieuSe => "mieu-se",
            Ablation::MieuT => "mieu-t",
            Ablation::Mifu => "mifu",
            Ablation::Iddu => "iddu",
            Ablation::DinBaseline => "din-baseline",
        }
    }

    pub fn multimodal(self) -> bool {
        self != Ablation::DinBaseline
    }

    pub fn similarity_embedding(self) -> bool {
        self != Ablation::MieuSe
    }

    pub fn position(self) -> bool {
        self != Ablation::MieuT
    }

    pub fn fusion(self) -> bool {
        self.multimodal() && self != Ablation::Mifu
    }

    pub fn decoder(self) -> bool {
        self.multimodal() && self != Ablation::Iddu
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = DmaeError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| DmaeError::InvalidConfig(format!("unknown ablation {s:?}")))
    }
}

/// Prediction DNN layer presets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DnnPreset {
    /// 200 × 80 × 1
    #[default]
    Public,
    /// 512 × 256 × 64 × 1
    Industrial,
}

impl DnnPreset {
    pub fn hidden(self) -> Vec<usize> {
        match self {
            DnnPreset::Public => vec![200, 80],
            DnnPreset::Industrial => vec![512, 256, 64],
        }
    }
}

/// Reads a flat TOML table from `path` (or starts empty), applies
/// `key = value` overrides and deserializes the result. Dashes in keys become
/// underscores; values are parsed as TOML literals, falling back to strings.
pub fn load_toml_with_overrides<T: DeserializeOwned>(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<T> {
    let table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| DmaeError::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| DmaeError::InvalidConfig(e.message().to_string()))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(table, overrides)
}

fn apply_overrides<T: DeserializeOwned>(mut table: toml::Table, overrides: &[(String, String)]) -> Result<T> {
    for (key, raw) in overrides {
        let key = key.replace('-', "_");
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        table.insert(key, value);
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| DmaeError::InvalidConfig(e.message().to_string()))
}

/// Everything needed to build the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id_dim: usize,
    pub dim: usize,
    pub n_buckets: usize,
    pub window: usize,
    pub time_slices: usize,
    pub sim_bins: usize,
    pub max_seq_len: usize,
    pub din_hidden: usize,
    pub dnn_hidden: Vec<usize>,
    pub mask_rate: f64,
    pub lambda_dec: f64,
    pub sincos_base: f64,
    pub residual: bool,
    pub id_init_std: f64,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Decoding weight actually applied: zero when the decoder is ablated.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.decoder() {
            self.lambda_dec
        } else {
            0.0
        }
    }
}

/// Flat run configuration; every field is a config-file key and a `--key` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory laid out by `synth`: interactions, test split and embedding files.
    pub data_dir: Option<PathBuf>,
    pub id_dim: usize,
    pub dim: usize,
    pub n_buckets: usize,
    /// Sliding window size; defaults to `max_seq_len / time_slices`.
    pub window: Option<usize>,
    pub time_slices: usize,
    pub sim_bins: usize,
    pub lambda_dec: f64,
    pub mask_rate: f64,
    pub max_seq_len: usize,
    pub dnn: DnnPreset,
    /// Overrides the preset's hidden widths when set.
    pub dnn_hidden: Option<Vec<usize>>,
    pub din_hidden: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub residual: bool,
    pub sincos_base: f64,
    pub val_fraction: f64,
    /// Keep the parameters of the epoch with the best validation AUC rather than the last.
    pub keep_best_epoch: bool,
    pub id_init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            id_dim: 8,
            dim: 8,
            n_buckets: 100,
            window: None,
            time_slices: 10,
            sim_bins: 10,
            lambda_dec: 0.7,
            mask_rate: 0.2,
            max_seq_len: 64,
            dnn: DnnPreset::Public,
            dnn_hidden: None,
            din_hidden: 36,
            learning_rate: 0.001,
            lr_decay: 0.9,
            batch_size: 64,
            epochs: 3,
            seed: 0,
            ablation: Ablation::None,
            residual: false,
            sincos_base: 10.0,
            val_fraction: 0.1,
            keep_best_epoch: true,
            id_init_std: 0.05,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)
            .map_err(|e| DmaeError::InvalidConfig(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DmaeError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Loads `path` (or defaults) and applies `key = value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let config: Self = load_toml_with_overrides(path, overrides)?;
        config.validate()?;
        Ok(config)
    }

    /// This config with `key = value` overrides applied on top.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let table = toml::Table::try_from(self).expect("config always serialises");
        let config: Self = apply_overrides(table, overrides)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn window_size(&self) -> usize {
        self.window
            .unwrap_or_else(|| (self.max_seq_len / self.time_slices.max(1)).max(1))
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.dnn_hidden.clone().unwrap_or_else(|| self.dnn.hidden())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            id_dim: self.id_dim,
            dim: self.dim,
            n_buckets: self.n_buckets,
            window: self.window_size(),
            time_slices: self.time_slices,
            sim_bins: self.sim_bins,
            max_seq_len: self.max_seq_len,
            din_hidden: self.din_hidden,
            dnn_hidden: self.hidden_layers(),
            mask_rate: self.mask_rate,
            lambda_dec: self.lambda_dec,
            sincos_base: self.sincos_base,
            residual: self.residual,
            id_init_std: self.id_init_std,
            ablation: self.ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("id_dim", self.id_dim),
            ("dim", self.dim),
            ("time_slices", self.time_slices),
            ("sim_bins", self.sim_bins),
            ("max_seq_len", self.max_seq_len),
            ("din_hidden", self.din_hidden),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(DmaeError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let bad = |msg: &str| Err(DmaeError::InvalidConfig(msg.to_string()));
        if self.dim % 2 != 0 {
            return bad("dim must be even (sine-cosine pairs)");
        }
        if self.n_buckets < 2 {
            return bad("n_buckets must be at least 2");
        }
        if self.window == Some(0) {
            return bad("window must be positive");
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return bad("mask_rate must lie in [0, 1)");
        }
        if !(self.lambda_dec >= 0.0 && self.lambda_dec.is_finite()) {
            return bad("lambda_dec must be a nonnegative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.sincos_base > 0.0 && self.sincos_base.is_finite()) {
            return bad("sincos_base must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if !(self.id_init_std > 0.0) {
            return bad("id_init_std must be positive");
        }
        if self.hidden_layers().contains(&0) {
            return bad("dnn_hidden widths must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.window_size(), 6);
        assert_eq!(c.hidden_layers(), vec![200, 80]);
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig {
            ablation: Ablation::MieuT,
            dnn: DnnPreset::Industrial,
            window: Some(4),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn overrides_take_precedence_and_parse_types() {
        let overrides = vec![
            ("lambda-dec".to_string(), "0.3".to_string()),
            ("ablation".to_string(), "mifu".to_string()),
            ("dnn_hidden".to_string(), "[16, 8]".to_string()),
        ];
        let c = RunConfig::load_with_overrides(None, &overrides).unwrap();
        assert_eq!(c.lambda_dec, 0.3);
        assert_eq!(c.ablation, Ablation::Mifu);
        assert_eq!(c.hidden_layers(), vec![16, 8]);
        let d = c.with_overrides(&[("dim".to_string(), "4".to_string())]).unwrap();
        assert_eq!((d.dim, d.lambda_dec), (4, 0.3));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("nonsense = 1").is_err());
        assert!(RunConfig::from_toml_str("dim = 3").is_err());
        assert!(RunConfig::from_toml_str("mask_rate = 1.0").is_err());
        assert!(RunConfig::from_toml_str("lambda_dec = -0.1").is_err());
    }

    #[test]
    fn ablation_names_parse() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!(!Ablation::Iddu.decoder());
        assert!(!Ablation::DinBaseline.fusion());
    }
}
