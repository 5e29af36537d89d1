//! Full forward pass and its ablated wirings.
//!
//! ```text
//! ids ──────────────► DIN pool ─────────────► h ─┐
//! scores[m] ─► MIEU ─► window attn ─┬─► cross fuse ─► r*[m] ─┼─► DNN ─► ŷ
//!                                   └─► decoder (train only) ─► KL
//! ```

use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::backbone::{Backbone, ITEM_TABLE, PRED_CLIP, USER_TABLE};
use crate::config::{Ablation, ModelConfig};
use crate::datasets::{Batch, Modality};
use crate::error::{DmaeError, Result};
use crate::iddu::{build_interest_distribution, Iddu, KL_EPS};
use crate::mieu::{recency_indices, Mieu};
use crate::mifu::{mean_pool, Mifu};
use crate::params::{ParamSpec, ParamStore, Tape};

/// Whether the decoder runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `B × 1` click probabilities.
    pub preds: Var,
    /// `B × 1` per-sample decoding loss (both modalities summed); train mode only.
    pub dec_loss: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub preds: Var,
    pub prediction: Var,
    pub decoding: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct DmaeModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    mieu: [Mieu; 2],
    mifu: Mifu,
    iddu: Iddu,
    backbone: Backbone,
}

/// Per-sample contiguous row ranges of the ragged (valid-only) history matrix.
fn ragged_segments(lengths: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&len| {
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

impl DmaeModel {
    fn components(config: &ModelConfig, n_users: usize, n_items: usize) -> ([Mieu; 2], Mifu, Iddu, Backbone) {
        let mieu = Modality::ALL.map(|m| Mieu::from_config(config, m));
        let input_dim = 3 * config.id_dim
            + if config.ablation.multimodal() {
                2 * config.dim
            } else {
                0
            };
        let backbone = Backbone {
            id_dim: config.id_dim,
            n_users,
            n_items,
            id_init_std: config.id_init_std,
            din_hidden: config.din_hidden,
            dnn_hidden: config.dnn_hidden.clone(),
            input_dim,
        };
        (mieu, Mifu::from_config(config), Iddu::from_config(config), backbone)
    }

    /// Declared trainable tensors of this variant, decoder last.
    pub fn param_specs_for(config: &ModelConfig, n_users: usize, n_items: usize) -> Vec<ParamSpec> {
        let (mieu, mifu, iddu, backbone) = Self::components(config, n_users, n_items);
        let mut specs = backbone.param_specs();
        if config.ablation.multimodal() {
            for m in &mieu {
                specs.extend(m.param_specs());
            }
        }
        if config.ablation.fusion() {
            specs.extend(mifu.param_specs());
        }
        if config.ablation.decoder() {
            specs.extend(iddu.param_specs());
        }
        specs
    }

    /// Fresh model; `n_users`/`n_items` count embedding rows including the OOV row.
    pub fn new(config: ModelConfig, n_users: usize, n_items: usize, seed: u64) -> Self {
        let mut params = ParamStore::new();
        for spec in Self::param_specs_for(&config, n_users, n_items) {
            params.insert(spec.name.clone(), spec.materialize(seed));
        }
        Self::assemble(config, n_users, n_items, params)
    }

    fn assemble(config: ModelConfig, n_users: usize, n_items: usize, params: ParamStore) -> Self {
        let (mieu, mifu, iddu, backbone) = Self::components(&config, n_users, n_items);
        Self {
            config,
            params,
            mieu,
            mifu,
            iddu,
            backbone,
        }
    }

    /// Rebuilds a model from stored tensors. Decoder tensors may be absent,
    /// in which case only inference is possible.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let n_users = params.get(USER_TABLE)?.nrows();
        let n_items = params.get(ITEM_TABLE)?.nrows();
        for spec in Self::param_specs_for(&config, n_users, n_items) {
            let is_decoder = spec.name.starts_with("iddu.");
            match params.get(&spec.name) {
                Ok(t) if t.dim() == (spec.rows, spec.cols) => {}
                Ok(t) => {
                    return Err(DmaeError::Checkpoint(format!(
                        "tensor {} has shape {:?}, expected ({}, {})",
                        spec.name,
                        t.dim(),
                        spec.rows,
                        spec.cols
                    )))
                }
                Err(_) if is_decoder => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Self::assemble(config, n_users, n_items, params))
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    pub fn n_users(&self) -> usize {
        self.backbone.n_users
    }

    pub fn n_items(&self) -> usize {
        self.backbone.n_items
    }

    pub fn has_decoder(&self) -> bool {
        self.config.ablation.decoder()
            && self
                .iddu
                .param_specs()
                .iter()
                .all(|s| self.params.contains(&s.name))
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let lengths = batch.lengths();
        let segments = ragged_segments(&lengths);
        let cells = batch.valid_cells();

        let users = tape.param(USER_TABLE)?;
        let items = tape.param(ITEM_TABLE)?;
        let v_u = tape.graph.gather(users, batch.users.clone());
        let v_i = tape.graph.gather(items, batch.targets.clone());
        let history_ids: Vec<usize> = cells.iter().map(|&c| batch.history[c]).collect();
        let v_hist = tape.graph.gather(items, history_ids);
        let h = self.backbone.din_pool(tape, v_hist, v_i, &segments)?;

        let mut parts = vec![v_u, v_i, h];
        let mut dec_loss = None;
        if self.config.ablation.multimodal() {
            let recency: Vec<usize> = lengths
                .iter()
                .flat_map(|&len| recency_indices(len, self.config.max_seq_len))
                .collect();
            let mut scores: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut attended = Vec::with_capacity(2);
            for m in Modality::ALL {
                scores[m.index()] = cells.iter().map(|&c| batch.similarity[m.index()][c]).collect();
                let encoded = self.mieu[m.index()].encode(tape, &scores[m.index()], &recency)?;
                attended.push(if self.config.ablation.fusion() {
                    self.mifu.window_self_attention(tape, m, encoded, &segments)?
                } else {
                    encoded
                });
            }
            let attended = [attended[0], attended[1]];
            let fused = if self.config.ablation.fusion() {
                self.mifu.cross_modal_fuse(tape, attended, &segments)?
            } else {
                attended.map(|seq| mean_pool(tape, seq, &segments))
            };
            parts.extend(fused);

            if mode == Mode::Train && self.config.ablation.decoder() {
                dec_loss = Some(self.decoding_loss(tape, attended, &scores, &segments, rng)?);
            }
        }

        let preds = self.backbone.predict(tape, &parts)?;
        Ok(ForwardOutput { preds, dec_loss })
    }

    fn decoding_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        attended: [Var; 2],
        scores: &[Vec<f64>; 2],
        segments: &[Range<usize>],
        rng: &mut R,
    ) -> Result<Var> {
        let cells = self.iddu.cells();
        let mut total: Option<Var> = None;
        for m in Modality::ALL {
            let q = self
                .iddu
                .decode_distribution(tape, m, attended[m.index()], segments, Some(&mut *rng))?;
            let mut target = Array2::zeros((segments.len(), cells));
            for (b, seg) in segments.iter().enumerate() {
                let p = build_interest_distribution(
                    &scores[m.index()][seg.clone()],
                    self.iddu.time_slices,
                    self.iddu.bins,
                );
                target.row_mut(b).assign(&ndarray::ArrayView1::from(&p.cells));
            }
            let kl = tape.graph.kl_rows(q, target, KL_EPS);
            total = Some(match total {
                Some(t) => tape.graph.add(t, kl),
                None => kl,
            });
        }
        Ok(total.expect("two modalities"))
    }

    /// Prediction cross entropy plus `λ_dec` times the batch-mean decoding loss.
    pub fn loss<R: Rng + ?Sized>(&self, tape: &mut Tape, batch: &Batch, rng: &mut R) -> Result<LossOutput> {
        let out = self.forward(tape, batch, Mode::Train, rng)?;
        let prediction = tape.graph.bce(out.preds, batch.labels.clone(), PRED_CLIP);
        let (decoding, total) = match out.dec_loss {
            Some(dec) => {
                let mean = tape.graph.mean_all(dec);
                let weighted = tape.graph.scale(mean, self.config.effective_lambda());
                (Some(mean), tape.graph.add(prediction, weighted))
            }
            None => (None, prediction),
        };
        Ok(LossOutput {
            preds: out.preds,
            prediction,
            decoding,
            total,
        })
    }

    /// Inference-mode click probabilities for a batch.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        // inference draws no randomness; the stream is never consumed
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, batch, Mode::Infer, &mut rng)?;
        Ok(tape.graph.value(out.preds).iter().copied().collect())
    }
}
