use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::config::RunConfig;
use crate::datasets::synthetic::{embedding_files, INTERACTIONS_FILE, TEST_FILE};
use crate::datasets::{
    batch_iterator, load_interactions, load_modal_embeddings, ModalEmbeddingTable, Modality,
    PreparedSample, Sample, Vocab,
};
use crate::error::{DmaeError, Result};
use crate::metrics::{EvalRecord, MetricsReport};
use crate::model::DmaeModel;
use crate::params::{Adam, Tape};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Offsets separating the shuffle and mask streams from the init seed.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const MASK_STREAM: u64 = 0x4d41_534b;

/// Samples resolved against vocabularies built from the training portion.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub users: Vocab,
    pub items: Vocab,
    pub train: Vec<PreparedSample>,
    pub validation: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

impl PreparedData {
    /// Splits `interactions` by file order (the last `val_fraction` is
    /// validation) and resolves everything against the frozen tables.
    pub fn from_samples(
        interactions: &[Sample],
        test: &[Sample],
        tables: [&ModalEmbeddingTable; 2],
        val_fraction: f64,
    ) -> Self {
        let n_val = (interactions.len() as f64 * val_fraction).round() as usize;
        let (train_raw, val_raw) = interactions.split_at(interactions.len() - n_val);
        let mut users = Vocab::new();
        let mut items = Vocab::new();
        for s in train_raw {
            users.insert(&s.user_id);
            items.insert(&s.target_item);
            for h in &s.history {
                items.insert(h);
            }
        }
        let prep = |raw: &[Sample]| -> Vec<PreparedSample> {
            raw.iter()
                .map(|s| PreparedSample::prepare(s, &users, &items, tables))
                .collect()
        };
        Self {
            train: prep(train_raw),
            validation: prep(val_raw),
            test: prep(test),
            users,
            items,
        }
    }

    /// Loads `interactions.tsv`, `test.tsv` and both embedding tables from `dir`.
    pub fn load(dir: &Path, max_seq_len: usize, val_fraction: f64) -> Result<Self> {
        let interactions = load_interactions(dir.join(INTERACTIONS_FILE), max_seq_len)?;
        let test_path = dir.join(TEST_FILE);
        let test = if test_path.exists() {
            load_interactions(&test_path, max_seq_len)?
        } else {
            Vec::new()
        };
        let tables = load_tables(dir)?;
        Ok(Self::from_samples(
            &interactions,
            &test,
            [&tables[0], &tables[1]],
            val_fraction,
        ))
    }
}

pub(crate) fn load_tables(dir: &Path) -> Result<[ModalEmbeddingTable; 2]> {
    let load = |m: Modality| {
        let (bin, ids) = embedding_files(dir, m);
        load_modal_embeddings(m, bin, ids)
    };
    Ok([load(Modality::Text)?, load(Modality::Image)?])
}

pub(crate) fn data_dir(config: &RunConfig) -> Result<&Path> {
    config
        .data_dir
        .as_deref()
        .ok_or_else(|| DmaeError::InvalidConfig("data_dir is required".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean total objective over the epoch's steps.
    pub loss: f64,
    pub prediction_loss: f64,
    pub decoding_loss: Option<f64>,
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Prediction cross entropy of every optimisation step.
    pub step_prediction_loss: Vec<f64>,
    pub step_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters as stored in the checkpoint (32-bit rounded).
    pub model: DmaeModel,
    pub history: TrainingHistory,
    pub header: CheckpointHeader,
    pub run_dir: Option<PathBuf>,
}

/// Reads data from `config.data_dir` and trains, writing artifacts to `run_dir`.
pub fn train(config: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let data = PreparedData::load(data_dir(config)?, config.max_seq_len, config.val_fraction)?;
    train_on(config, &data, Some(run_dir))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Trains on already prepared data. With a `run_dir`, writes the checkpoint,
/// the resolved config and the loss history there.
pub fn train_on(config: &RunConfig, data: &PreparedData, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(DmaeError::EmptyInput("training split"));
    }
    let mut model = DmaeModel::new(
        config.model_config(),
        data.users.rows(),
        data.items.rows(),
        config.seed,
    );
    let mut adam = Adam::default();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed ^ MASK_STREAM);
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, crate::params::ParamStore)> = None;

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.lr_decay.powi(epoch as i32);
        let shuffle_seed = (config.seed ^ SHUFFLE_STREAM).wrapping_add(epoch as u64);
        let (mut totals, mut preds, mut decs) = (Vec::new(), Vec::new(), Vec::new());
        for (step, batch) in batch_iterator(&data.train, config.batch_size, true, shuffle_seed)?.enumerate() {
            let grads = {
                let mut tape = Tape::new(&model.params);
                let out = model.loss(&mut tape, &batch, &mut mask_rng)?;
                let total = tape.graph.value(out.total)[[0, 0]];
                if !total.is_finite() {
                    return Err(DmaeError::NonFiniteLoss {
                        epoch,
                        step,
                        value: total,
                    });
                }
                totals.push(total);
                preds.push(tape.graph.value(out.prediction)[[0, 0]]);
                if let Some(d) = out.decoding {
                    decs.push(tape.graph.value(d)[[0, 0]]);
                }
                let g = tape.graph.backward(out.total);
                tape.param_grads(&g)
            };
            adam.step(&mut model.params, &grads, lr);
        }
        let validation = if data.validation.is_empty() {
            None
        } else {
            evaluate_model(&model, &data.validation, config.batch_size).ok()
        };
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: mean(&totals),
            prediction_loss: mean(&preds),
            decoding_loss: (!decs.is_empty()).then(|| mean(&decs)),
            validation,
        };
        info!(
            "epoch {epoch}: loss {:.5} (prediction {:.5}){}",
            record.loss,
            record.prediction_loss,
            record
                .validation
                .map(|v| format!(", val auc {:.4}", v.auc))
                .unwrap_or_default()
        );
        if config.keep_best_epoch {
            if let Some(v) = &record.validation {
                if best.as_ref().is_none_or(|(auc, _)| v.auc > *auc) {
                    best = Some((v.auc, model.params.clone()));
                    history.selected_epoch = epoch;
                }
            }
        }
        if best.is_none() {
            history.selected_epoch = epoch;
        }
        history.step_loss.extend(&totals);
        history.step_prediction_loss.extend(&preds);
        history.epochs.push(record);
    }
    if let Some((_, params)) = best {
        model.params = params;
    }

    let header = CheckpointHeader {
        config: config.clone(),
        users: data.users.clone(),
        items: data.items.clone(),
    };
    let checkpoint = Checkpoint {
        header: header.clone(),
        params: model.params,
    };
    let bytes = checkpoint.to_bytes()?;
    // the in-memory model is the one a reload would produce
    let stored = Checkpoint::from_bytes(&bytes)?;
    let model = DmaeModel::from_params(config.model_config(), stored.params)?;

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| DmaeError::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        std::fs::write(&path, &bytes).map_err(|e| DmaeError::io(&path, e))?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, config.to_toml_string()).map_err(|e| DmaeError::io(&path, e))?;
        let path = dir.join(HISTORY_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&history)?)
            .map_err(|e| DmaeError::io(&path, e))?;
        if let Some(v) = history.epochs.get(history.selected_epoch).and_then(|e| e.validation) {
            v.write(dir)?;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        header,
        run_dir: run_dir.map(Path::to_path_buf),
    })
}

/// Inference-mode scores for every sample, in input order.
pub fn predict_records(model: &DmaeModel, samples: &[PreparedSample], batch_size: usize) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::with_capacity(samples.len());
    for batch in batch_iterator(samples, batch_size, false, 0)? {
        let preds = model.predict(&batch)?;
        for ((p, y), r) in preds.into_iter().zip(&batch.labels).zip(&batch.request_ids) {
            records.push(EvalRecord::new(r.clone(), *y as u8, p));
        }
    }
    Ok(records)
}

pub fn evaluate_model(model: &DmaeModel, samples: &[PreparedSample], batch_size: usize) -> Result<MetricsReport> {
    MetricsReport::compute(&predict_records(model, samples, batch_size)?)
}

/// Scores `samples` (raw records) with a stored checkpoint; the frozen tables
/// come from `tables`. Decoder tensors are not needed.
pub fn evaluate(checkpoint: &Checkpoint, samples: &[Sample], tables: [&ModalEmbeddingTable; 2]) -> Result<MetricsReport> {
    let config = &checkpoint.header.config;
    let model = DmaeModel::from_params(config.model_config(), checkpoint.params.clone())?;
    if model.n_users() != checkpoint.header.users.rows() || model.n_items() != checkpoint.header.items.rows() {
        return Err(DmaeError::Checkpoint(
            "embedding tables do not match the stored vocabularies".into(),
        ));
    }
    let prepared: Vec<PreparedSample> = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.truncate_history(config.max_seq_len);
            PreparedSample::prepare(&s, &checkpoint.header.users, &checkpoint.header.items, tables)
        })
        .collect();
    evaluate_model(&model, &prepared, config.batch_size)
}
