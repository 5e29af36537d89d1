//! Synthetic click logs with planted multimodal signal.
//!
//! Items sit in text topics and image topics (correlated but not identical).
//! Each user's clicks drift from an early pair of topics towards a late pair
//! over the course of the history. A label is driven by two terms computed on
//! the history-to-target similarity sequences:
//!
//! - `recent_text`: the best text match among the most recent clicks;
//! - `early_image`: the share of older clicks whose image match clears a threshold;
//!
//! plus a per-item bias and Gaussian noise. The logit is thresholded at its
//! median, so the classes are balanced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_interactions, write_modal_embeddings, ModalEmbeddingTable, Modality, Sample};
use crate::error::{DmaeError, Result};
use crate::mieu::similarity_score;

/// Clicks counted as "recent" by the planted text term.
pub const RECENT_WINDOW: usize = 8;
/// Image score a click must reach to count towards the planted image term.
pub const IMAGE_THRESHOLD: f64 = 0.75;

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const TEST_FILE: &str = "test.tsv";

pub fn embedding_files(dir: &Path, modality: Modality) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{modality}.memb")),
        dir.join(format!("{modality}.ids")),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    /// Dimension of both modal embedding tables.
    pub modal_dim: usize,
    /// Std of the Gaussian noise added to the standardized logit.
    pub label_noise: f64,
    /// 0: early and late topics mixed uniformly over the history; 1: full shift.
    pub drift_rate: f64,
    pub text_topics: usize,
    pub image_topics: usize,
    /// Probability an item's image topic follows its text topic.
    pub topic_coupling: f64,
    /// Per-coordinate noise around a topic center (centers have unit norm).
    pub item_noise: f64,
    /// Probability a click ignores the user's topics.
    pub random_click_rate: f64,
    pub item_bias_std: f64,
    pub requests_per_user: usize,
    pub impressions_per_request: usize,
    /// Share of requests written to the test file.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 5000,
            n_items: 2000,
            seq_len_min: 8,
            seq_len_max: 64,
            modal_dim: 32,
            label_noise: 1.5,
            drift_rate: 1.0,
            text_topics: 40,
            image_topics: 40,
            topic_coupling: 0.5,
            item_noise: 0.12,
            random_click_rate: 0.3,
            item_bias_std: 0.4,
            requests_per_user: 1,
            impressions_per_request: 2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DmaeError::InvalidConfig(m));
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("seq_len_max", self.seq_len_max),
            ("modal_dim", self.modal_dim),
            ("text_topics", self.text_topics),
            ("image_topics", self.image_topics),
            ("requests_per_user", self.requests_per_user),
            ("impressions_per_request", self.impressions_per_request),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.seq_len_min > self.seq_len_max {
            return bad("seq_len_min exceeds seq_len_max".into());
        }
        if self.n_items < self.seq_len_max {
            return bad(format!(
                "n_items ({}) must be at least seq_len_max ({})",
                self.n_items, self.seq_len_max
            ));
        }
        for (name, p) in [
            ("drift_rate", self.drift_rate),
            ("topic_coupling", self.topic_coupling),
            ("random_click_rate", self.random_click_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)".into());
        }
        for (name, s) in [
            ("label_noise", self.label_noise),
            ("item_noise", self.item_noise),
            ("item_bias_std", self.item_bias_std),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        Ok(())
    }
}

/// The two raw planted terms `(recent_text, early_image)` of one sample.
/// Histories with no clicks older than the recent window have `early_image = 0`.
pub fn planted_terms(text: &[f64], image: &[f64]) -> (f64, f64) {
    let split = text.len().saturating_sub(RECENT_WINDOW);
    let recent_text = text[split..].iter().copied().fold(0.0, f64::max);
    let early = &image[..split];
    let early_image = if early.is_empty() {
        0.0
    } else {
        early.iter().filter(|&&r| r >= IMAGE_THRESHOLD).count() as f64 / early.len() as f64
    };
    (recent_text, early_image)
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub tables: [ModalEmbeddingTable; 2],
}

impl SyntheticData {
    /// Writes the interaction files and both embedding tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DmaeError::io(dir, e))?;
        write_interactions(dir.join(INTERACTIONS_FILE), &self.train)?;
        write_interactions(dir.join(TEST_FILE), &self.test)?;
        for table in &self.tables {
            let (bin, ids) = embedding_files(dir, table.modality());
            write_modal_embeddings(table, bin, ids)?;
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn item_vectors(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], topics: &[usize], noise: f64) -> Vec<f32> {
    let jitter = Normal::new(0.0, noise).expect("validated noise");
    topics
        .iter()
        .flat_map(|&t| {
            centers[t]
                .iter()
                .map(|&c| (c + jitter.sample(rng)) as f32)
                .collect::<Vec<_>>()
        })
        .collect()
}

fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Draws a full dataset. Deterministic under `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.modal_dim;

    let text_centers: Vec<Vec<f64>> = (0..spec.text_topics).map(|_| unit_vector(&mut rng, k)).collect();
    let image_centers: Vec<Vec<f64>> = (0..spec.image_topics).map(|_| unit_vector(&mut rng, k)).collect();
    let text_topic: Vec<usize> = (0..spec.n_items).map(|i| i % spec.text_topics).collect();
    let image_topic: Vec<usize> = text_topic
        .iter()
        .map(|&t| {
            if rng.random_bool(spec.topic_coupling) {
                t % spec.image_topics
            } else {
                rng.random_range(0..spec.image_topics)
            }
        })
        .collect();
    let item_ids: Vec<String> = (0..spec.n_items).map(|i| format!("i{i}")).collect();
    let text_data = item_vectors(&mut rng, &text_centers, &text_topic, spec.item_noise);
    let image_data = item_vectors(&mut rng, &image_centers, &image_topic, spec.item_noise);
    let tables = [
        ModalEmbeddingTable::new(Modality::Text, k, item_ids.clone(), text_data)?,
        ModalEmbeddingTable::new(Modality::Image, k, item_ids.clone(), image_data)?,
    ];
    let mut by_topic = vec![Vec::new(); spec.text_topics];
    for (i, &t) in text_topic.iter().enumerate() {
        by_topic[t].push(i);
    }
    let bias_dist = Normal::new(0.0, spec.item_bias_std).expect("validated std");
    let item_bias: Vec<f64> = (0..spec.n_items).map(|_| bias_dist.sample(&mut rng)).collect();

    let pick_topic = |rng: &mut ChaCha8Rng, topics: &[usize]| -> usize {
        *by_topic[*topics.choose(rng).unwrap()].choose(rng).unwrap()
    };
    let score = |table: &ModalEmbeddingTable, a: usize, b: usize| -> f64 {
        similarity_score(&table.as_slice()[a * k..(a + 1) * k], &table.as_slice()[b * k..(b + 1) * k])
            .expect("rows share a dimension")
    };

    // (request index, user, history, target) plus raw planted terms
    let mut drafts: Vec<(usize, usize, Vec<usize>, usize)> = Vec::new();
    let mut recent_terms = Vec::new();
    let mut early_terms = Vec::new();
    let mut request = 0;
    for user in 0..spec.n_users {
        let early: Vec<usize> = (0..2).map(|_| rng.random_range(0..spec.text_topics)).collect();
        let late: Vec<usize> = (0..2).map(|_| rng.random_range(0..spec.text_topics)).collect();
        for _ in 0..spec.requests_per_user {
            let len = rng.random_range(spec.seq_len_min..=spec.seq_len_max);
            let history: Vec<usize> = (0..len)
                .map(|j| {
                    if rng.random_bool(spec.random_click_rate) {
                        return rng.random_range(0..spec.n_items);
                    }
                    let t = if len > 1 { j as f64 / (len - 1) as f64 } else { 1.0 };
                    let p_late = spec.drift_rate * t + (1.0 - spec.drift_rate) * 0.5;
                    if rng.random_bool(p_late) {
                        pick_topic(&mut rng, &late)
                    } else {
                        pick_topic(&mut rng, &early)
                    }
                })
                .collect();
            for _ in 0..spec.impressions_per_request {
                let target = match rng.random_range(0..3) {
                    0 => pick_topic(&mut rng, &late),
                    1 => pick_topic(&mut rng, &early),
                    _ => rng.random_range(0..spec.n_items),
                };
                let text: Vec<f64> = history.iter().map(|&h| score(&tables[0], h, target)).collect();
                let image: Vec<f64> = history.iter().map(|&h| score(&tables[1], h, target)).collect();
                let (r, e) = planted_terms(&text, &image);
                recent_terms.push(r);
                early_terms.push(e);
                drafts.push((request, user, history.clone(), target));
            }
            request += 1;
        }
    }

    let recent_z = standardize(&recent_terms);
    let early_z = standardize(&early_terms);
    let noise = Normal::new(0.0, spec.label_noise).expect("validated noise");
    let logits: Vec<f64> = drafts
        .iter()
        .enumerate()
        .map(|(s, d)| recent_z[s] + early_z[s] + item_bias[d.3] + noise.sample(&mut rng))
        .collect();
    let mut sorted = logits.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[sorted.len() / 2];

    // shuffle whole requests, then cut the test share off the end
    let mut order: Vec<usize> = (0..request).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_test = (request as f64 * spec.test_fraction).round() as usize;
    let mut rank = vec![0; request];
    for (pos, &r) in order.iter().enumerate() {
        rank[r] = pos;
    }
    let mut indexed: Vec<usize> = (0..drafts.len()).collect();
    indexed.sort_by_key(|&s| (rank[drafts[s].0], s));

    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in indexed {
        let (req, user, ref history, target) = drafts[s];
        let sample = Sample {
            user_id: format!("u{user}"),
            request_id: format!("r{req}"),
            history: history.iter().map(|&h| item_ids[h].clone()).collect(),
            target_item: item_ids[target].clone(),
            label: u8::from(logits[s] >= threshold),
        };
        if rank[req] >= request - n_test {
            test.push(sample);
        } else {
            train.push(sample);
        }
    }
    Ok(SyntheticData { train, test, tables })
}

/// Human-readable summary of a generated dataset.
pub fn describe(data: &SyntheticData) -> String {
    let mut out = String::new();
    for (name, samples) in [("train", &data.train), ("test", &data.test)] {
        let pos = samples.iter().filter(|s| s.label == 1).count();
        let _ = writeln!(
            out,
            "{name}: {} samples, positive rate {:.3}",
            samples.len(),
            pos as f64 / samples.len().max(1) as f64
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 60,
            n_items: 120,
            seq_len_min: 2,
            seq_len_max: 12,
            modal_dim: 8,
            text_topics: 6,
            image_topics: 6,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        let spec = SyntheticSpec {
            n_items: 10,
            seq_len_max: 11,
            ..small()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn balanced_and_split() {
        let data = generate_synthetic(&small()).unwrap();
        let all: Vec<&Sample> = data.train.iter().chain(&data.test).collect();
        assert_eq!(all.len(), 60 * 2);
        let rate = all.iter().filter(|s| s.label == 1).count() as f64 / all.len() as f64;
        assert!((0.2..=0.8).contains(&rate), "{rate}");
        assert_eq!(data.test.len(), 12 * 2);
    }

    #[test]
    fn planted_terms_examples() {
        let (r, e) = planted_terms(&[0.9, 0.1, 0.3], &[1.0, 1.0, 1.0]);
        assert_eq!((r, e), (0.9, 0.0));
        let text = [0.0; 10];
        let image = [0.8, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(planted_terms(&text, &image), (0.0, 0.5));
    }
}
