//! Multimodal interest fusion.
//!
//! Intra-modal: each modality's interest sequence goes through single-head
//! sliding-window self-attention (centered window, `⌊w/2⌋` rows either side).
//! Inter-modal: the mean of the *other* modality's attended sequence is the
//! query of a cross attention over this modality's attended rows, giving one
//! fused `d`-vector per modality.

use std::ops::Range;

use ndarray::{Array2, Axis};

use crate::autograd::{Tensor, Var};
use crate::config::ModelConfig;
use crate::datasets::Modality;
use crate::error::Result;
use crate::params::{Init, ParamSpec, ParamStore, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct Mifu {
    pub dim: usize,
    pub window: usize,
    /// Add the attention output to its input instead of replacing it.
    pub residual: bool,
}

/// Key range of every query row: positions within `⌊window/2⌋` of the row,
/// clipped to the row's own segment.
pub fn window_ranges(segments: &[Range<usize>], window: usize) -> Vec<Range<usize>> {
    let half = window / 2;
    let mut out = Vec::with_capacity(segments.last().map_or(0, |s| s.end));
    for seg in segments {
        for i in seg.clone() {
            let lo = i.saturating_sub(half).max(seg.start);
            let hi = (i + half + 1).min(seg.end);
            out.push(lo..hi);
        }
    }
    out
}

/// Mean of the rows of each segment; empty segments pool to zero.
pub fn mean_pool(tape: &mut Tape, seq: Var, segments: &[Range<usize>]) -> Var {
    let groups = segments.iter().map(|s| s.clone().collect()).collect();
    tape.graph.group_mean(seq, groups)
}

fn segments_from_mask(mask: &[bool]) -> (Vec<usize>, Vec<Range<usize>>) {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let n = valid.len();
    (valid, vec![0..n])
}

impl Mifu {
    pub fn from_config(config: &ModelConfig) -> Self {
        Self {
            dim: config.dim,
            window: config.window,
            residual: config.residual,
        }
    }

    pub fn param_name(modality: Modality, part: &str) -> String {
        format!("mifu.{modality}.{part}")
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for m in Modality::ALL {
            for part in ["window_q", "window_k", "window_v", "cross_q", "cross_k", "cross_v"] {
                specs.push(ParamSpec::new(
                    Self::param_name(m, part),
                    self.dim,
                    self.dim,
                    Init::Glorot,
                ));
            }
        }
        specs
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    /// Sliding-window self-attention over ragged segments of `seq` (`N × d`).
    pub fn window_self_attention(
        &self,
        tape: &mut Tape,
        modality: Modality,
        seq: Var,
        segments: &[Range<usize>],
    ) -> Result<Var> {
        let wq = tape.param(&Self::param_name(modality, "window_q"))?;
        let wk = tape.param(&Self::param_name(modality, "window_k"))?;
        let wv = tape.param(&Self::param_name(modality, "window_v"))?;
        let q = tape.graph.matmul_t(seq, wq);
        let k = tape.graph.matmul_t(seq, wk);
        let v = tape.graph.matmul_t(seq, wv);
        let ranges = window_ranges(segments, self.window);
        let out = tape.graph.range_attention(q, k, v, ranges, self.scale());
        Ok(if self.residual {
            tape.graph.add(seq, out)
        } else {
            out
        })
    }

    /// Cross attention of each modality's rows queried by the other modality's mean.
    /// Returns `[r*_text, r*_image]`, each `segments.len() × d`.
    pub fn cross_modal_fuse(
        &self,
        tape: &mut Tape,
        seqs: [Var; 2],
        segments: &[Range<usize>],
    ) -> Result<[Var; 2]> {
        let means = [
            mean_pool(tape, seqs[0], segments),
            mean_pool(tape, seqs[1], segments),
        ];
        let mut fused = Vec::with_capacity(2);
        for m in Modality::ALL {
            let own = seqs[m.index()];
            let query = means[m.other().index()];
            let wq = tape.param(&Self::param_name(m, "cross_q"))?;
            let wk = tape.param(&Self::param_name(m, "cross_k"))?;
            let wv = tape.param(&Self::param_name(m, "cross_v"))?;
            let q = tape.graph.matmul_t(query, wq);
            let k = tape.graph.matmul_t(own, wk);
            let v = tape.graph.matmul_t(own, wv);
            fused.push(
                tape.graph
                    .range_attention(q, k, v, segments.to_vec(), self.scale()),
            );
        }
        Ok([fused[0], fused[1]])
    }

    /// Window attention on one padded sequence; padded output rows are zero.
    pub fn window_attention_padded(
        &self,
        params: &ParamStore,
        modality: Modality,
        seq: &Tensor,
        mask: &[bool],
    ) -> Result<Tensor> {
        let (valid, segments) = segments_from_mask(mask);
        let mut tape = Tape::new(params);
        let rows = tape.graph.constant(seq.select(Axis(0), &valid));
        let out = self.window_self_attention(&mut tape, modality, rows, &segments)?;
        let out = tape.graph.value(out);
        let mut full = Array2::zeros(seq.raw_dim());
        for (r, &i) in valid.iter().enumerate() {
            full.row_mut(i).assign(&out.row(r));
        }
        Ok(full)
    }

    /// Cross fusion of two padded sequences sharing `mask`.
    pub fn fuse_padded(
        &self,
        params: &ParamStore,
        text: &Tensor,
        image: &Tensor,
        mask: &[bool],
    ) -> Result<[Vec<f64>; 2]> {
        let (valid, segments) = segments_from_mask(mask);
        let mut tape = Tape::new(params);
        let a = tape.graph.constant(text.select(Axis(0), &valid));
        let b = tape.graph.constant(image.select(Axis(0), &valid));
        let [fa, fb] = self.cross_modal_fuse(&mut tape, [a, b], &segments)?;
        Ok([
            tape.graph.value(fa).iter().copied().collect(),
            tape.graph.value(fb).iter().copied().collect(),
        ])
    }
}

/// Mean of the valid rows of one padded sequence; zero when nothing is valid.
pub fn mean_pool_padded(seq: &Tensor, mask: &[bool]) -> Vec<f64> {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if valid.is_empty() {
        return vec![0.0; seq.ncols()];
    }
    let rows = seq.select(Axis(0), &valid);
    rows.mean_axis(Axis(0)).unwrap().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_params(dim: usize) -> ParamStore {
        let mut store = ParamStore::new();
        let mifu = Mifu {
            dim,
            window: 3,
            residual: false,
        };
        for spec in mifu.param_specs() {
            store.insert(spec.name, Array2::eye(dim));
        }
        store
    }

    #[test]
    fn windows_are_centered_and_clipped() {
        assert_eq!(window_ranges(&[0..4], 3), vec![0..2, 0..3, 1..4, 2..4]);
        assert_eq!(window_ranges(&[0..2, 2..3], 100), vec![0..2, 0..2, 2..3]);
        assert_eq!(window_ranges(&[0..3], 4), vec![0..3, 0..3, 0..3]);
    }

    #[test]
    fn singleton_returns_value_projection() {
        let params = identity_params(2);
        let mifu = Mifu {
            dim: 2,
            window: 3,
            residual: false,
        };
        let seq = array![[0.4, -0.7]];
        let out = mifu
            .window_attention_padded(&params, Modality::Text, &seq, &[true])
            .unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn equal_rows_attend_to_themselves() {
        let params = identity_params(2);
        let mifu = Mifu {
            dim: 2,
            window: 3,
            residual: false,
        };
        let seq = array![[0.3, 0.6], [0.3, 0.6]];
        let out = mifu
            .window_attention_padded(&params, Modality::Image, &seq, &[true, true])
            .unwrap();
        for v in out.iter().zip(seq.iter()) {
            assert!((v.0 - v.1).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let v = array![[1.0, -2.0]];
        assert_eq!(mean_pool_padded(&v, &[true]), vec![1.0, -2.0]);
        let pm = array![[1.0, -2.0], [-1.0, 2.0]];
        assert_eq!(mean_pool_padded(&pm, &[true, true]), vec![0.0, 0.0]);
        assert_eq!(mean_pool_padded(&pm, &[false, false]), vec![0.0, 0.0]);
    }

    #[test]
    fn residual_adds_input() {
        let params = identity_params(2);
        let mifu = Mifu {
            dim: 2,
            window: 3,
            residual: true,
        };
        let seq = array![[0.4, -0.7]];
        let out = mifu
            .window_attention_padded(&params, Modality::Text, &seq, &[true])
            .unwrap();
        assert_eq!(out, &seq * 2.0);
    }
}
