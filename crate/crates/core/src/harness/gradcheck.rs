use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, RunConfig};
use crate::datasets::{Batch, PreparedSample};
use crate::error::{DmaeError, Result};
use crate::model::DmaeModel;
use crate::params::{tensor_rng, ParamStore, Tape};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const MICRO_USERS: usize = 3;
const MICRO_ITEMS: usize = 7;
const JITTER_STREAM: u64 = 0x4a49_5454;

/// Smallest configuration the checker accepts: `d = 4`, `T ≤ 4`, `B = 2`, no masking.
pub fn micro_config(ablation: Ablation) -> RunConfig {
    RunConfig {
        id_dim: 4,
        dim: 4,
        n_buckets: 10,
        time_slices: 2,
        sim_bins: 3,
        max_seq_len: 4,
        din_hidden: 6,
        dnn_hidden: Some(vec![8, 4]),
        mask_rate: 0.0,
        batch_size: 2,
        ablation,
        ..RunConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub tensor: String,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.relative_error).fold(0.0, f64::max)
    }

    pub fn offenders(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !(e.relative_error < GRADCHECK_TOLERANCE))
            .map(|e| e.tensor.clone())
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{:.3e}\n", e.tensor, e.relative_error))
            .collect()
    }
}

fn micro_batch(config: &RunConfig, rng: &mut ChaCha8Rng) -> Batch {
    let lens = [config.max_seq_len, config.max_seq_len.saturating_sub(1).max(1)];
    let samples: Vec<PreparedSample> = lens
        .iter()
        .enumerate()
        .map(|(b, &len)| PreparedSample {
            user: 1 + b,
            target: rng.random_range(1..MICRO_ITEMS),
            history: (0..len).map(|_| rng.random_range(1..MICRO_ITEMS)).collect(),
            label: b as f64,
            request_id: "g".into(),
            similarity: [
                (0..len).map(|_| rng.random_range(0.05..0.95)).collect(),
                (0..len).map(|_| rng.random_range(0.05..0.95)).collect(),
            ],
        })
        .collect();
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    Batch::from_samples(&refs)
}

fn objective(model: &DmaeModel, params: &ParamStore, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.loss(&mut tape, batch, &mut rng)?;
    Ok(tape.graph.value(out.total)[[0, 0]])
}

/// Compares analytic gradients of the full objective against central
/// differences for every trainable tensor of the configured variant.
/// Fails with the offending tensor names if any exceeds the tolerance.
pub fn gradcheck(config: &RunConfig) -> Result<GradcheckReport> {
    config.validate()?;
    if config.dim > 8 || config.id_dim > 8 || config.max_seq_len > 6 || config.batch_size > 2 {
        return Err(DmaeError::InvalidConfig(
            "gradcheck needs a micro config: dim, id_dim <= 8, max_seq_len <= 6, batch_size <= 2".into(),
        ));
    }
    if config.mask_rate != 0.0 {
        return Err(DmaeError::InvalidConfig("gradcheck needs mask_rate = 0".into()));
    }
    let mut model = DmaeModel::new(config.model_config(), MICRO_USERS, MICRO_ITEMS, config.seed);
    // jitter every tensor so zero-initialised biases do not sit on ReLU kinks;
    // per-name streams give shared tensors the same probe point in every variant
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in &names {
        let mut rng = tensor_rng(config.seed ^ JITTER_STREAM, name);
        let t = model.params.get_mut(name).expect("listed name");
        t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
    }
    let batch = micro_batch(config, &mut ChaCha8Rng::seed_from_u64(config.seed));

    let analytic = {
        let mut tape = Tape::new(&model.params);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.loss(&mut tape, &batch, &mut mask_rng)?;
        let grads = tape.graph.backward(out.total);
        tape.param_grads(&grads)
    };

    let mut report = GradcheckReport::default();
    let mut probe = model.params.clone();
    for name in &names {
        let shape = model.params.get(name)?.raw_dim();
        let zero = ndarray::Array2::zeros(shape);
        let a = analytic.get(name).unwrap_or(&zero);
        let mut numeric = ndarray::Array2::<f64>::zeros(a.raw_dim());
        for idx in 0..numeric.len() {
            let (r, c) = (idx / numeric.ncols(), idx % numeric.ncols());
            let orig = model.params.get(name)?[[r, c]];
            probe.get_mut(name).unwrap()[[r, c]] = orig + GRADCHECK_STEP;
            let plus = objective(&model, &probe, &batch)?;
            probe.get_mut(name).unwrap()[[r, c]] = orig - GRADCHECK_STEP;
            let minus = objective(&model, &probe, &batch)?;
            probe.get_mut(name).unwrap()[[r, c]] = orig;
            numeric[[r, c]] = (plus - minus) / (2.0 * GRADCHECK_STEP);
        }
        let norm = |t: &ndarray::Array2<f64>| t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&(a - &numeric));
        let relative_error = diff / (norm(a) + norm(&numeric)).max(1e-6);
        report.entries.push(GradcheckEntry {
            tensor: name.clone(),
            relative_error,
        });
    }
    let offenders: Vec<String> = report
        .entries
        .iter()
        .filter(|e| !(e.relative_error < GRADCHECK_TOLERANCE))
        .map(|e| format!("{} ({:.3e})", e.tensor, e.relative_error))
        .collect();
    if !offenders.is_empty() {
        return Err(DmaeError::GradientCheck(offenders));
    }
    Ok(report)
}
