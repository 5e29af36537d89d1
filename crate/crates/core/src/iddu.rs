//! Interest-distribution decoding.
//!
//! The label side splits a history into `l` contiguous time slices and the
//! score range into `n` bins (`[0, 1/n]`, then half-open `((j−1)/n, j/n]`),
//! and counts the fraction of clicks landing in each cell. The model side
//! mean-pools the attended interest rows that survive a random row mask and
//! decodes them through `d → 2d → l·n` with an elementwise sigmoid. The two
//! grids are tied by `Σ p · ln(p / q)` over cells with `p > 0`.
//!
//! This unit only shapes training; inference never touches it.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Tensor, Var};
use crate::config::ModelConfig;
use crate::datasets::Modality;
use crate::error::Result;
use crate::params::{Init, ParamSpec, ParamStore, Tape};

/// Default floor applied to decoded probabilities before the log.
pub const KL_EPS: f64 = 1e-8;

/// `l × n` grid of click proportions over (time slice × similarity bin).
#[derive(Debug, Clone, PartialEq)]
pub struct InterestDistribution {
    pub time_slices: usize,
    pub bins: usize,
    /// Row-major `time_slices × bins`.
    pub cells: Vec<f64>,
}

impl InterestDistribution {
    pub fn get(&self, slice: usize, bin: usize) -> f64 {
        self.cells[slice * self.bins + bin]
    }

    pub fn mass(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Array2::from_shape_vec((self.time_slices, self.bins), self.cells.clone()).unwrap()
    }
}

/// Zero-based bin of score `s` among `n` bins: bin 0 is `[0, 1/n]`, bin
/// `j` is `(j/n, (j+1)/n]`.
pub fn similarity_bin(s: f64, n: usize) -> usize {
    let n_f = n as f64;
    let mut j = ((s * n_f).ceil() as isize - 1).clamp(0, n as isize - 1) as usize;
    // the product can round across a boundary; settle on the exact comparisons
    while j > 0 && s <= j as f64 / n_f {
        j -= 1;
    }
    while j + 1 < n && s > (j + 1) as f64 / n_f {
        j += 1;
    }
    j
}

/// Splits positions `0..len` into `slices` contiguous chunks of near-equal
/// size; the earlier chunks absorb the remainder, later ones may be empty.
pub fn time_slice_ranges(len: usize, slices: usize) -> Vec<Range<usize>> {
    let (base, rem) = (len / slices, len % slices);
    let mut start = 0;
    (0..slices)
        .map(|i| {
            let size = base + usize::from(i < rem);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Interest distribution of one similarity sequence; each click contributes `1/len`.
pub fn build_interest_distribution(scores: &[f64], time_slices: usize, bins: usize) -> InterestDistribution {
    let mut cells = vec![0.0; time_slices * bins];
    let len = scores.len();
    if len > 0 {
        let mut counts = vec![0usize; time_slices * bins];
        for (slice, range) in time_slice_ranges(len, time_slices).into_iter().enumerate() {
            for &s in &scores[range] {
                counts[slice * bins + similarity_bin(s, bins)] += 1;
            }
        }
        for (c, &k) in cells.iter_mut().zip(&counts) {
            *c = k as f64 / len as f64;
        }
    }
    InterestDistribution {
        time_slices,
        bins,
        cells,
    }
}

/// `Σ p · ln(p / max(q, eps))` over cells with `p > 0`, in nats.
pub fn kl_loss(p: &InterestDistribution, q: &[f64], eps: f64) -> f64 {
    assert_eq!(p.cells.len(), q.len(), "decoded grid has the wrong size");
    p.cells
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.clamp(eps, 1.0)).ln())
        .sum()
}

/// Rows kept for the masked mean of each segment. Each row is dropped
/// independently with probability `rate`; a segment that loses every row
/// keeps all of them.
pub fn sample_keep_groups<R: Rng + ?Sized>(
    segments: &[Range<usize>],
    rate: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    segments
        .iter()
        .map(|seg| {
            if rate <= 0.0 {
                return seg.clone().collect();
            }
            let kept: Vec<usize> = seg.clone().filter(|_| !rng.random_bool(rate)).collect();
            if kept.is_empty() {
                seg.clone().collect()
            } else {
                kept
            }
        })
        .collect()
}

/// Per-modality MLP decoder `d → 2d → l·n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iddu {
    pub dim: usize,
    pub time_slices: usize,
    pub bins: usize,
    pub mask_rate: f64,
}

impl Iddu {
    pub fn from_config(config: &ModelConfig) -> Self {
        Self {
            dim: config.dim,
            time_slices: config.time_slices,
            bins: config.sim_bins,
            mask_rate: config.mask_rate,
        }
    }

    pub fn param_name(modality: Modality, part: &str) -> String {
        format!("iddu.{modality}.{part}")
    }

    pub fn cells(&self) -> usize {
        self.time_slices * self.bins
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, h) = (self.dim, 2 * self.dim);
        let mut specs = Vec::new();
        for m in Modality::ALL {
            specs.push(ParamSpec::new(Self::param_name(m, "w1"), h, d, Init::Glorot));
            specs.push(ParamSpec::new(Self::param_name(m, "b1"), 1, h, Init::Zeros));
            specs.push(ParamSpec::new(Self::param_name(m, "w2"), self.cells(), h, Init::Glorot));
            specs.push(ParamSpec::new(Self::param_name(m, "b2"), 1, self.cells(), Init::Zeros));
        }
        specs
    }

    /// Decodes the masked mean of each segment's rows into a `B × l·n` grid in `(0, 1)`.
    /// With no rng (or a zero mask rate) every valid row is kept.
    pub fn decode_distribution<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        modality: Modality,
        seq: Var,
        segments: &[Range<usize>],
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let groups = match rng {
            Some(rng) => sample_keep_groups(segments, self.mask_rate, rng),
            None => segments.iter().map(|s| s.clone().collect()).collect(),
        };
        let pooled = tape.graph.group_mean(seq, groups);
        let w1 = tape.param(&Self::param_name(modality, "w1"))?;
        let b1 = tape.param(&Self::param_name(modality, "b1"))?;
        let w2 = tape.param(&Self::param_name(modality, "w2"))?;
        let b2 = tape.param(&Self::param_name(modality, "b2"))?;
        let h = tape.graph.matmul_t(pooled, w1);
        let h = tape.graph.add_row(h, b1);
        let h = tape.graph.relu(h);
        let out = tape.graph.matmul_t(h, w2);
        let out = tape.graph.add_row(out, b2);
        Ok(tape.graph.sigmoid(out))
    }

    /// Decodes one `T × d` sequence against concrete parameters; returns the `l × n` grid.
    pub fn decode_value<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        modality: Modality,
        seq: &Tensor,
        rng: Option<&mut R>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new(params);
        let rows = tape.graph.constant(seq.clone());
        let out = self.decode_distribution(&mut tape, modality, rows, &[0..seq.nrows()], rng)?;
        let flat = tape.graph.value(out).iter().copied().collect();
        Ok(Array2::from_shape_vec((self.time_slices, self.bins), flat).unwrap())
    }
}
