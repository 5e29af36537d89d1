use std::time::Instant;

use dmae::datasets::Modality;
use dmae::iddu::{
    build_interest_distribution, kl_loss, sample_keep_groups, similarity_bin, Iddu, InterestDistribution, KL_EPS,
};
use dmae::params::ParamStore;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counts clicks cell by cell with nothing but comparisons.
fn counting_oracle(scores: &[f64], l: usize, n: usize) -> Vec<f64> {
    let len = scores.len();
    let mut sizes = vec![len / l; l];
    for s in sizes.iter_mut().take(len % l) {
        *s += 1;
    }
    let mut cells = vec![0.0; l * n];
    for slice in 0..l {
        let start: usize = sizes[..slice].iter().sum();
        for bin in 0..n {
            let lo = bin as f64 / n as f64;
            let hi = (bin + 1) as f64 / n as f64;
            let count = scores[start..start + sizes[slice]]
                .iter()
                .filter(|&&s| {
                    let above = if bin == 0 { s >= 0.0 } else { s > lo };
                    let below = s <= hi || bin == n - 1;
                    above && below
                })
                .count();
            cells[slice * n + bin] = count as f64 / len as f64;
        }
    }
    cells
}

fn random_scores(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            // a third of the scores sit exactly on a bin edge
            if rng.random_bool(1.0 / 3.0) {
                rng.random_range(0..=n) as f64 / n as f64
            } else {
                rng.random_range(0.0..=1.0)
            }
        })
        .collect()
}

#[test]
fn distributions_match_counting_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let l = rng.random_range(1..=12);
        let n = rng.random_range(1..=12);
        let len = rng.random_range(1..=64);
        let scores = random_scores(&mut rng, len, n);
        let p = build_interest_distribution(&scores, l, n);
        assert_eq!(p.cells, counting_oracle(&scores, l, n), "scores {scores:?} l={l} n={n}");
        assert!((p.mass() - 1.0).abs() < 1e-12);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn zero_and_one_land_in_the_end_bins() {
    assert_eq!(similarity_bin(0.0, 7), 0);
    assert_eq!(similarity_bin(1.0, 7), 6);
}

#[test]
fn kl_of_identical_positive_grids_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
    let z: f64 = raw.iter().sum();
    let p = InterestDistribution {
        time_slices: 3,
        bins: 4,
        cells: raw.iter().map(|x| x / z).collect(),
    };
    assert_eq!(kl_loss(&p, &p.cells, KL_EPS), 0.0);
}

#[test]
fn kl_hand_case() {
    let p = InterestDistribution {
        time_slices: 1,
        bins: 2,
        cells: vec![0.5, 0.5],
    };
    assert!((kl_loss(&p, &[0.25, 0.75], KL_EPS) - 0.1438).abs() < 1e-4);
}

#[test]
fn kl_nonnegative_on_random_valid_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (l, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let len = rng.random_range(1..=40);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let p = build_interest_distribution(&scores, l, n);
        let raw: Vec<f64> = (0..l * n)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let z: f64 = raw.iter().sum::<f64>().max(1e-300);
        let q: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let v = kl_loss(&p, &q, KL_EPS);
        assert!(v >= -1e-12, "{v}");
    }
}

#[test]
fn kl_is_literal_against_an_unnormalized_grid() {
    // sigmoid outputs need not sum to one; the sum of p·ln(p/q) then equals
    // minus the entropy of p when every q is 1
    let p = build_interest_distribution(&[0.1, 0.9, 0.95, 0.4], 2, 2);
    let entropy: f64 = p.cells.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
    let v = kl_loss(&p, &vec![1.0; 4], KL_EPS);
    assert!((v + entropy).abs() < 1e-15);
}

#[test]
fn empty_cells_contribute_nothing() {
    let p = build_interest_distribution(&[0.05, 0.05], 1, 3);
    let a = kl_loss(&p, &[0.3, 0.9, 0.9], KL_EPS);
    let b = kl_loss(&p, &[0.3, 1e-20, 0.01], KL_EPS);
    assert_eq!(a, b);
}

fn decoder() -> Iddu {
    Iddu {
        dim: 4,
        time_slices: 2,
        bins: 3,
        mask_rate: 0.5,
    }
}

fn decoder_params(seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    for spec in decoder().param_specs() {
        store.insert(spec.name.clone(), spec.materialize(seed));
    }
    store
}

#[test]
fn masked_decoding_replays_under_a_seed() {
    let iddu = decoder();
    let p = decoder_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = Array2::from_shape_fn((8, 4), |_| rng.random_range(0.0..1.0));
    let decode = |seed: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        iddu.decode_value(&p, Modality::Text, &seq, Some(&mut r)).unwrap()
    };
    assert_eq!(decode(11), decode(11));
    let draws: Vec<_> = (0..8).map(decode).collect();
    assert!(draws.iter().any(|d| d != &draws[0]));
    let q = &draws[0];
    assert_eq!(q.dim(), (2, 3));
    assert!(q.iter().all(|&x| x > 0.0 && x < 1.0));
}

#[test]
fn unmasked_decoding_ignores_the_rng() {
    let iddu = Iddu {
        mask_rate: 0.0,
        ..decoder()
    };
    let p = decoder_params(2);
    let seq = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 / 20.0);
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let a = iddu.decode_value(&p, Modality::Image, &seq, Some(&mut r)).unwrap();
    let b = iddu.decode_value::<ChaCha8Rng>(&p, Modality::Image, &seq, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mask_rate_matches_the_dropped_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let segments: Vec<_> = (0..2000).map(|i| i * 50..(i + 1) * 50).collect();
    let kept: usize = sample_keep_groups(&segments, 0.5, &mut rng).iter().map(Vec::len).sum();
    let frac = kept as f64 / 100_000.0;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
}

proptest! {
    #[test]
    fn full_length_mass_is_one(scores in prop::collection::vec(0.0f64..=1.0, 1..80), l in 1usize..20, n in 1usize..20) {
        let p = build_interest_distribution(&scores, l, n);
        prop_assert!((p.mass() - 1.0).abs() < 1e-12);
        prop_assert!(p.cells.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn kept_rows_stay_inside_their_segment(lens in prop::collection::vec(1usize..10, 1..6), rate in 0.0f64..0.95, seed in 0u64..100) {
        let mut start = 0;
        let segments: Vec<_> = lens.iter().map(|&l| { let r = start..start + l; start += l; r }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = sample_keep_groups(&segments, rate, &mut rng);
        for (g, s) in groups.iter().zip(&segments) {
            prop_assert!(!g.is_empty());
            prop_assert!(g.iter().all(|i| s.contains(i)));
        }
    }
}
