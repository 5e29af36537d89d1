use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModalEmbeddingTable, Sample, Vocab};
use crate::error::{DmaeError, Result};
use crate::mieu::similarity_sequence;

/// A sample resolved against the id vocabularies, with its per-modality
/// similarity sequences precomputed from the frozen tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub user: usize,
    pub target: usize,
    pub history: Vec<usize>,
    pub label: f64,
    pub request_id: String,
    /// Indexed by [`super::Modality::index`].
    pub similarity: [Vec<f64>; 2],
}

impl PreparedSample {
    pub fn prepare(
        sample: &Sample,
        users: &Vocab,
        items: &Vocab,
        tables: [&ModalEmbeddingTable; 2],
    ) -> Self {
        let similarity = tables.map(|t| {
            similarity_sequence(&sample.history, &sample.target_item, t).scores
        });
        Self {
            user: users.lookup(&sample.user_id),
            target: items.lookup(&sample.target_item),
            history: sample.history.iter().map(|h| items.lookup(h)).collect(),
            label: f64::from(sample.label),
            request_id: sample.request_id.clone(),
            similarity,
        }
    }
}

/// Right-padded mini-batch. Row `b` has `lengths()[b]` valid clicks followed
/// by padding; padded ids are the OOV row and padded scores are 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub max_len: usize,
    /// `len() × max_len`, row-major.
    pub history: Vec<usize>,
    pub mask: Vec<bool>,
    pub similarity: [Vec<f64>; 2],
    pub targets: Vec<usize>,
    pub users: Vec<usize>,
    pub labels: Vec<f64>,
    pub request_ids: Vec<String>,
}

impl Batch {
    pub fn from_samples(samples: &[&PreparedSample]) -> Self {
        let max_len = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
        let cells = samples.len() * max_len;
        let mut batch = Batch {
            max_len,
            history: vec![Vocab::OOV; cells],
            mask: vec![false; cells],
            similarity: [vec![0.5; cells], vec![0.5; cells]],
            targets: Vec::with_capacity(samples.len()),
            users: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
            request_ids: Vec::with_capacity(samples.len()),
        };
        for (b, s) in samples.iter().enumerate() {
            let row = b * max_len;
            for (j, &item) in s.history.iter().enumerate() {
                batch.history[row + j] = item;
                batch.mask[row + j] = true;
                batch.similarity[0][row + j] = s.similarity[0][j];
                batch.similarity[1][row + j] = s.similarity[1][j];
            }
            batch.targets.push(s.target);
            batch.users.push(s.user);
            batch.labels.push(s.label);
            batch.request_ids.push(s.request_id.clone());
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Valid history length of each row.
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.len())
            .map(|b| self.mask[b * self.max_len..(b + 1) * self.max_len]
                .iter()
                .filter(|&&m| m)
                .count())
            .collect()
    }

    /// Flat indices into the padded matrices of every valid cell, row by row.
    pub fn valid_cells(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Yields batches of `batch_size` (the last may be shorter); every sample
/// appears exactly once per pass.
pub struct BatchIter<'a> {
    samples: &'a [PreparedSample],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picked: Vec<&PreparedSample> = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.samples[i])
            .collect();
        self.cursor = end;
        Some(Batch::from_samples(&picked))
    }
}

pub fn batch_iterator(
    samples: &[PreparedSample],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(DmaeError::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        samples,
        order,
        batch_size,
        cursor: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, len: usize) -> PreparedSample {
        PreparedSample {
            user: i,
            target: i,
            history: (1..=len).collect(),
            label: (i % 2) as f64,
            request_id: format!("r{i}"),
            similarity: [vec![0.9; len], vec![0.1; len]],
        }
    }

    #[test]
    fn ten_samples_in_batches_of_four() {
        let samples: Vec<_> = (0..10).map(|i| sample(i, 3)).collect();
        let sizes: Vec<usize> = batch_iterator(&samples, 4, false, 0)
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn unshuffled_preserves_order() {
        let samples: Vec<_> = (0..7).map(|i| sample(i, 1)).collect();
        let users: Vec<usize> = batch_iterator(&samples, 3, false, 0)
            .unwrap()
            .flat_map(|b| b.users)
            .collect();
        assert_eq!(users, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let samples: Vec<_> = (0..50).map(|i| sample(i, 1)).collect();
        let run = |seed| -> Vec<usize> {
            batch_iterator(&samples, 8, true, seed)
                .unwrap()
                .flat_map(|b| b.users)
                .collect()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        assert_ne!(a, run(4));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn padding_is_right_aligned() {
        let (a, b) = (sample(0, 3), sample(1, 1));
        let batch = Batch::from_samples(&[&a, &b]);
        assert_eq!(batch.max_len, 3);
        assert_eq!(batch.mask, vec![true, true, true, true, false, false]);
        assert_eq!(batch.lengths(), vec![3, 1]);
        assert_eq!(batch.valid_cells(), vec![0, 1, 2, 3]);
        assert_eq!(batch.similarity[1][4], 0.5);
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        assert!(batch_iterator(&[], 0, false, 0).is_err());
    }
}
