//! Multimodal interest encoding.
//!
//! Each click in the history is scored against the target item in every
//! modality, `r = (cos + 1) / 2`. A score is then represented two ways: a
//! bucket row scaled by the learned affine value `w·r + b`, and a fixed
//! sine-cosine vector. Both are mapped together with the click's recency
//! position into a `d`-dimensional interest vector:
//!
//! ```text
//! ReLU(W2 · [ReLU(W1 · [r_d ; r_sc] + b1) ; PE[recency]] + b2)
//! ```
//!
//! Every modality owns a separate parameter set under `mieu.<modality>.*`.

use ndarray::Array2;

use crate::autograd::{Tensor, Var};
use crate::config::ModelConfig;
use crate::datasets::{ModalEmbeddingTable, Modality};
use crate::error::{DmaeError, Result};
use crate::params::{Init, ParamSpec, ParamStore, Tape};

/// Per-modality similarity of each history item to the target, in history order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySequence {
    pub modality: Modality,
    pub scores: Vec<f64>,
}

impl SimilaritySequence {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Cosine similarity rescaled to `[0, 1]`. A zero-norm argument yields the neutral 0.5.
pub fn similarity_score(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DmaeError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.5);
    }
    let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
    Ok((cos + 1.0) / 2.0)
}

/// Scores every history item against `target` in `table`'s modality.
/// Items missing from the table are treated as zero vectors.
pub fn similarity_sequence(
    history: &[String],
    target: &str,
    table: &ModalEmbeddingTable,
) -> SimilaritySequence {
    let target_vec = table.vector_or_zero(target);
    let scores = history
        .iter()
        .map(|item| {
            similarity_score(&table.vector_or_zero(item), &target_vec)
                .expect("rows of one table share a dimension")
        })
        .collect();
    SimilaritySequence {
        modality: table.modality(),
        scores,
    }
}

/// `⌊r · (N_B − 1)⌋`, clamped into `[0, N_B − 1]`.
pub fn bucket_index(r: f64, n_buckets: usize) -> usize {
    let top = n_buckets.saturating_sub(1);
    let raw = (r * top as f64).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(top)
    }
}

/// Pairs `(sin(r / base^(2k/d)), cos(r / base^(2k/d)))` for `k = 0..d/2`.
pub fn sincos_encode(r: f64, dim: usize, base: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let x = r / base.powf(2.0 * k as f64 / dim as f64);
        out.push(x.sin());
        out.push(x.cos());
    }
    out
}

/// Recency index of each position of a `len`-long history: the most recent
/// click gets 0, older clicks count up, clamped to `max_seq_len − 1`.
pub fn recency_indices(len: usize, max_seq_len: usize) -> Vec<usize> {
    (1..=len)
        .map(|j| (len - j).min(max_seq_len.saturating_sub(1)))
        .collect()
}

/// Interest encoder for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Mieu {
    pub modality: Modality,
    pub dim: usize,
    pub n_buckets: usize,
    pub max_seq_len: usize,
    pub sincos_base: f64,
    /// Scaled bucket plus sine-cosine; plain bucket lookup when false.
    pub similarity_embedding: bool,
    /// Concatenate the recency position row before the second layer.
    pub position: bool,
}

impl Mieu {
    pub fn from_config(config: &ModelConfig, modality: Modality) -> Self {
        Self {
            modality,
            dim: config.dim,
            n_buckets: config.n_buckets,
            max_seq_len: config.max_seq_len,
            sincos_base: config.sincos_base,
            similarity_embedding: config.ablation.similarity_embedding(),
            position: config.ablation.position(),
        }
    }

    pub fn param_name(&self, part: &str) -> String {
        format!("mieu.{}.{part}", self.modality)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.dim;
        let mut specs = Vec::new();
        if self.similarity_embedding {
            specs.push(ParamSpec::new(self.param_name("scale"), 1, 1, Init::Constant(1.0)));
            specs.push(ParamSpec::new(self.param_name("shift"), 1, 1, Init::Zeros));
        }
        specs.push(ParamSpec::new(self.param_name("bucket"), self.n_buckets, d, Init::Normal(0.01)));
        if self.position {
            specs.push(ParamSpec::new(
                self.param_name("position"),
                self.max_seq_len,
                d,
                Init::Normal(0.01),
            ));
        }
        let w1_in = if self.similarity_embedding { 2 * d } else { d };
        let w2_in = if self.position { 2 * d } else { d };
        specs.push(ParamSpec::new(self.param_name("w1"), d, w1_in, Init::Glorot));
        specs.push(ParamSpec::new(self.param_name("b1"), 1, d, Init::Zeros));
        specs.push(ParamSpec::new(self.param_name("w2"), d, w2_in, Init::Glorot));
        specs.push(ParamSpec::new(self.param_name("b2"), 1, d, Init::Zeros));
        specs
    }

    /// `r̂ · Bucket(⌊r(N_B − 1)⌋)` per score, or the bare bucket row for the
    /// plain-bucketing variant. Output is `N × d`.
    pub fn discretize(&self, tape: &mut Tape, scores: &[f64]) -> Result<Var> {
        let index: Vec<usize> = scores
            .iter()
            .map(|&r| bucket_index(r, self.n_buckets))
            .collect();
        let bucket = tape.param(&self.param_name("bucket"))?;
        let rows = tape.graph.gather(bucket, index);
        if !self.similarity_embedding {
            return Ok(rows);
        }
        let scale = tape.param(&self.param_name("scale"))?;
        let shift = tape.param(&self.param_name("shift"))?;
        let r = tape
            .graph
            .constant(Array2::from_shape_vec((scores.len(), 1), scores.to_vec()).unwrap());
        let scaled = tape.graph.mul_scalar(r, scale);
        let r_hat = tape.graph.add_scalar(scaled, shift);
        Ok(tape.graph.mul_col(rows, r_hat))
    }

    /// Sine-cosine rows for every score (`N × d`), a constant.
    pub fn sincos(&self, scores: &[f64]) -> Tensor {
        let mut out = Array2::zeros((scores.len(), self.dim));
        for (i, &r) in scores.iter().enumerate() {
            for (j, v) in sincos_encode(r, self.dim, self.sincos_base).into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Two-layer interest mapping with the recency position concatenated
    /// after the first layer. `r_sc` is ignored for the plain-bucketing variant.
    pub fn interest_map(
        &self,
        tape: &mut Tape,
        r_d: Var,
        r_sc: Option<Var>,
        recency: &[usize],
    ) -> Result<Var> {
        if let Some(&bad) = recency.iter().find(|&&i| i >= self.max_seq_len) {
            return Err(DmaeError::OutOfRange {
                index: bad,
                limit: self.max_seq_len,
            });
        }
        let input = match (self.similarity_embedding, r_sc) {
            (true, Some(sc)) => tape.graph.concat_cols(&[r_d, sc]),
            (true, None) => {
                return Err(DmaeError::InvalidConfig(
                    "sine-cosine input required for the full encoder".into(),
                ))
            }
            (false, _) => r_d,
        };
        let w1 = tape.param(&self.param_name("w1"))?;
        let b1 = tape.param(&self.param_name("b1"))?;
        let h = tape.graph.matmul_t(input, w1);
        let h = tape.graph.add_row(h, b1);
        let h = tape.graph.relu(h);
        let h = if self.position {
            let table = tape.param(&self.param_name("position"))?;
            let pe = tape.graph.gather(table, recency.to_vec());
            tape.graph.concat_cols(&[h, pe])
        } else {
            h
        };
        let w2 = tape.param(&self.param_name("w2"))?;
        let b2 = tape.param(&self.param_name("b2"))?;
        let out = tape.graph.matmul_t(h, w2);
        let out = tape.graph.add_row(out, b2);
        Ok(tape.graph.relu(out))
    }

    /// Encodes a ragged run of scores with their recency indices into `N × d` interest rows.
    pub fn encode(&self, tape: &mut Tape, scores: &[f64], recency: &[usize]) -> Result<Var> {
        let r_d = self.discretize(tape, scores)?;
        let r_sc = if self.similarity_embedding {
            Some(tape.graph.constant(self.sincos(scores)))
        } else {
            None
        };
        self.interest_map(tape, r_d, r_sc, recency)
    }

    /// Single-score discretisation against concrete parameters.
    pub fn discretize_value(&self, params: &ParamStore, r: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new(params);
        let v = self.discretize(&mut tape, &[r])?;
        Ok(tape.graph.value(v).iter().copied().collect())
    }

    /// Single-row interest mapping against concrete parameters.
    pub fn interest_map_value(
        &self,
        params: &ParamStore,
        r_d: &[f64],
        r_sc: &[f64],
        recency_index: usize,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new(params);
        let rd = tape
            .graph
            .constant(Array2::from_shape_vec((1, r_d.len()), r_d.to_vec()).unwrap());
        let rsc = tape
            .graph
            .constant(Array2::from_shape_vec((1, r_sc.len()), r_sc.to_vec()).unwrap());
        let out = self.interest_map(&mut tape, rd, Some(rsc), &[recency_index])?;
        Ok(tape.graph.value(out).iter().copied().collect())
    }

    /// Encodes one full similarity sequence into a `T × d` matrix.
    pub fn encode_sequence(&self, params: &ParamStore, seq: &SimilaritySequence) -> Result<Tensor> {
        let mut tape = Tape::new(params);
        let recency = recency_indices(seq.len(), self.max_seq_len);
        let out = self.encode(&mut tape, &seq.scores, &recency)?;
        Ok(tape.graph.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn encoder(dim: usize, n_buckets: usize) -> Mieu {
        Mieu {
            modality: Modality::Text,
            dim,
            n_buckets,
            max_seq_len: 8,
            sincos_base: 10.0,
            similarity_embedding: true,
            position: true,
        }
    }

    fn store(mieu: &Mieu, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        for spec in mieu.param_specs() {
            s.insert(spec.name.clone(), spec.materialize(seed));
        }
        s
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(similarity_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(similarity_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(similarity_score(&[0.0, 0.0], &[0.3, 1.0]).unwrap(), 0.5);
        assert!(similarity_score(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_sequence_of_self_and_empty() {
        let table = ModalEmbeddingTable::new(
            Modality::Text,
            3,
            vec!["a".into(), "b".into()],
            vec![0.3, -0.2, 0.9, 1.0, 1.0, 0.0],
        )
        .unwrap();
        assert!(similarity_sequence(&[], "a", &table).is_empty());
        assert_eq!(similarity_sequence(&["a".into()], "a", &table).scores, vec![1.0]);
        // unknown history item -> zero vector -> neutral score
        assert_eq!(similarity_sequence(&["zz".into()], "a", &table).scores, vec![0.5]);
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket_index(0.0, 100), 0);
        assert_eq!(bucket_index(1.0, 100), 99);
        assert_eq!(bucket_index(0.537, 100), 53);
    }

    #[test]
    fn sincos_examples() {
        assert_eq!(sincos_encode(0.0, 4, 10.0), vec![0.0, 1.0, 0.0, 1.0]);
        let half = sincos_encode(0.5, 2, 10.0);
        assert!((half[0] - 0.4794).abs() < 1e-4 && (half[1] - 0.8776).abs() < 1e-4);
        let one = sincos_encode(1.0, 4, 10.0);
        for (got, want) in one.iter().zip([0.8415, 0.5403, 0.3110, 0.9504]) {
            assert!((got - want).abs() < 1e-4, "{one:?}");
        }
    }

    #[test]
    fn recency_counts_back_from_most_recent() {
        assert_eq!(recency_indices(4, 64), vec![3, 2, 1, 0]);
        assert_eq!(recency_indices(5, 3), vec![2, 2, 2, 1, 0]);
    }

    #[test]
    fn discretize_identity_scaling() {
        let mieu = encoder(4, 100);
        let params = store(&mieu, 1);
        assert_eq!(mieu.discretize_value(&params, 0.0).unwrap(), vec![0.0; 4]);
        let top = mieu.discretize_value(&params, 1.0).unwrap();
        let row99: Vec<f64> = params.get("mieu.text.bucket").unwrap().row(99).to_vec();
        assert_eq!(top, row99);
    }

    #[test]
    fn zero_weights_give_zero_interest() {
        let mieu = encoder(2, 10);
        let mut params = store(&mieu, 1);
        for name in ["w1", "b1", "w2", "b2"] {
            params.get_mut(&format!("mieu.text.{name}")).unwrap().fill(0.0);
        }
        let out = mieu
            .interest_map_value(&params, &[0.3, -1.0], &[0.2, 0.9], 0)
            .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn recency_out_of_range_is_an_error() {
        let mieu = encoder(2, 10);
        let params = store(&mieu, 1);
        assert!(mieu.interest_map_value(&params, &[0.0; 2], &[0.0; 2], 8).is_err());
    }

    #[test]
    fn empty_sequence_encodes_to_empty_matrix() {
        let mieu = encoder(4, 10);
        let params = store(&mieu, 1);
        let seq = SimilaritySequence {
            modality: Modality::Text,
            scores: vec![],
        };
        assert_eq!(mieu.encode_sequence(&params, &seq).unwrap().dim(), (0, 4));
    }

    #[test]
    fn plain_bucketing_has_no_scale_or_sincos() {
        let mut mieu = encoder(4, 10);
        mieu.similarity_embedding = false;
        let names: Vec<String> = mieu.param_specs().into_iter().map(|s| s.name).collect();
        assert!(!names.iter().any(|n| n.ends_with("scale") || n.ends_with("shift")));
        let params = store(&mieu, 2);
        // bucket row returned unscaled, even for r = 0
        let row0: Vec<f64> = params.get("mieu.text.bucket").unwrap().row(0).to_vec();
        assert_eq!(mieu.discretize_value(&params, 0.0).unwrap(), row0);
    }
}
