//! ID backbone and prediction head.
//!
//! A DIN-style activation unit scores every history item against the target
//! from `[q, k, q − k, q ⊙ k]`; the scores are softmax-normalised within each
//! history and pool the history's ID embeddings. The prediction DNN sees
//! `v_u ⊕ v_i ⊕ h` plus, for multimodal variants, the two fused interest vectors.

use std::ops::Range;

use crate::autograd::Var;
use crate::error::{DmaeError, Result};
use crate::params::{Init, ParamSpec, Tape};

/// Probability clip applied before logs in the cross entropy.
pub const PRED_CLIP: f64 = 1e-7;

pub const USER_TABLE: &str = "embedding.user";
pub const ITEM_TABLE: &str = "embedding.item";

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub id_dim: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub id_init_std: f64,
    pub din_hidden: usize,
    pub dnn_hidden: Vec<usize>,
    /// Width of the concatenated DNN input.
    pub input_dim: usize,
}

impl Backbone {
    fn dnn_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.dnn_hidden);
        widths.push(1);
        widths
    }

    pub fn dnn_layers(&self) -> usize {
        self.dnn_hidden.len() + 1
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.id_dim;
        let std = Init::Normal(self.id_init_std);
        let mut specs = vec![
            ParamSpec::new(USER_TABLE, self.n_users, d, std),
            ParamSpec::new(ITEM_TABLE, self.n_items, d, std),
            ParamSpec::new("din.w1", self.din_hidden, 4 * d, Init::Glorot),
            ParamSpec::new("din.b1", 1, self.din_hidden, Init::Zeros),
            ParamSpec::new("din.w2", 1, self.din_hidden, Init::Glorot),
            ParamSpec::new("din.b2", 1, 1, Init::Zeros),
        ];
        for (i, pair) in self.dnn_widths().windows(2).enumerate() {
            specs.push(ParamSpec::new(format!("dnn.{i}.weight"), pair[1], pair[0], Init::Glorot));
            specs.push(ParamSpec::new(format!("dnn.{i}.bias"), 1, pair[1], Init::Zeros));
        }
        specs
    }

    /// Activation-unit logits for each history row given the target row it belongs to.
    pub fn activation_scores(&self, tape: &mut Tape, history: Var, query: Var) -> Result<Var> {
        let diff = tape.graph.sub(query, history);
        let prod = tape.graph.mul(query, history);
        let feats = tape.graph.concat_cols(&[query, history, diff, prod]);
        let w1 = tape.param("din.w1")?;
        let b1 = tape.param("din.b1")?;
        let w2 = tape.param("din.w2")?;
        let b2 = tape.param("din.b2")?;
        let a = tape.graph.matmul_t(feats, w1);
        let a = tape.graph.add_row(a, b1);
        let a = tape.graph.relu(a);
        let s = tape.graph.matmul_t(a, w2);
        Ok(tape.graph.add_row(s, b2))
    }

    /// Target-attention pooling: `h = Σ_j softmax(score_j) · v_j` per history.
    /// `history` is `N × d_id` over all segments, `targets` is `B × d_id`.
    pub fn din_pool(
        &self,
        tape: &mut Tape,
        history: Var,
        targets: Var,
        segments: &[Range<usize>],
    ) -> Result<Var> {
        let owner: Vec<usize> = segments
            .iter()
            .enumerate()
            .flat_map(|(b, seg)| std::iter::repeat_n(b, seg.len()))
            .collect();
        let query = tape.graph.gather(targets, owner);
        let scores = self.activation_scores(tape, history, query)?;
        let weights = tape.graph.segment_softmax(scores, segments.to_vec());
        Ok(tape
            .graph
            .segment_weighted_sum(weights, history, segments.to_vec()))
    }

    /// `σ(DNN(parts concatenated))`, one probability per row.
    pub fn predict(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var> {
        let x = tape.graph.concat_cols(parts);
        let width = tape.graph.value(x).ncols();
        if width != self.input_dim {
            return Err(DmaeError::DimensionMismatch {
                expected: self.input_dim,
                found: width,
            });
        }
        let mut h = x;
        let layers = self.dnn_layers();
        for i in 0..layers {
            let w = tape.param(&format!("dnn.{i}.weight"))?;
            let b = tape.param(&format!("dnn.{i}.bias"))?;
            h = tape.graph.matmul_t(h, w);
            h = tape.graph.add_row(h, b);
            if i + 1 < layers {
                h = tape.graph.relu(h);
            }
        }
        Ok(tape.graph.sigmoid(h))
    }
}

/// `−(1/N) Σ [y ln ŷ + (1 − y) ln(1 − ŷ)] + λ · mean(dec_losses)` with `ŷ`
/// clipped to `[1e−7, 1 − 1e−7]`. An empty `dec_losses` contributes nothing.
pub fn total_loss(preds: &[f64], labels: &[f64], dec_losses: &[f64], lambda_dec: f64) -> Result<f64> {
    if preds.is_empty() {
        return Err(DmaeError::EmptyInput("total_loss"));
    }
    if preds.len() != labels.len() {
        return Err(DmaeError::DimensionMismatch {
            expected: preds.len(),
            found: labels.len(),
        });
    }
    let ce = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / preds.len() as f64;
    let dec = if dec_losses.is_empty() {
        0.0
    } else {
        dec_losses.iter().sum::<f64>() / dec_losses.len() as f64
    };
    Ok(ce + lambda_dec * dec)
}
