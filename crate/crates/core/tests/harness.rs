use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use dmae::datasets::synthetic::{embedding_files, INTERACTIONS_FILE, TEST_FILE};
use dmae::datasets::{generate_synthetic, load_interactions, load_modal_embeddings, Modality, SyntheticSpec};
use dmae::harness::{
    evaluate, evaluate_model, gradcheck, micro_config, run_ablation_suite, sweep, train, train_on, PreparedData,
    SweepAxis, TrainingHistory, CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE, GRADCHECK_TOLERANCE,
};
use dmae::{Ablation, Checkpoint, DmaeModel, RunConfig};
use tempfile::TempDir;

fn tiny_spec(n_users: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_users,
        n_items: 60,
        seq_len_min: 3,
        seq_len_max: 10,
        modal_dim: 8,
        text_topics: 6,
        image_topics: 6,
        requests_per_user: 1,
        impressions_per_request: 4,
        seed: 3,
        ..SyntheticSpec::default()
    }
}

fn write_data(spec: &SyntheticSpec) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(spec).unwrap().write(dir.path()).unwrap();
    dir
}

fn tiny_config(data: &Path) -> RunConfig {
    RunConfig {
        data_dir: Some(data.to_path_buf()),
        id_dim: 4,
        dim: 4,
        n_buckets: 10,
        time_slices: 2,
        sim_bins: 3,
        max_seq_len: 10,
        din_hidden: 6,
        dnn_hidden: Some(vec![8, 4]),
        batch_size: 16,
        epochs: 2,
        ..RunConfig::default()
    }
}

fn tables(dir: &Path) -> [dmae::datasets::ModalEmbeddingTable; 2] {
    Modality::ALL.map(|m| {
        let (bin, ids) = embedding_files(dir, m);
        load_modal_embeddings(m, bin, ids).unwrap()
    })
}

#[test]
fn smoke_train_writes_reloadable_artifacts() {
    let start = Instant::now();
    let data = write_data(&tiny_spec(16));
    let run = tempfile::tempdir().unwrap();
    let config = RunConfig {
        epochs: 1,
        ..tiny_config(data.path())
    };
    let outcome = train(&config, run.path()).unwrap();
    for f in [CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE] {
        assert!(run.path().join(f).exists(), "{f}");
    }
    let history: TrainingHistory =
        serde_json::from_str(&std::fs::read_to_string(run.path().join(HISTORY_FILE)).unwrap()).unwrap();
    assert_eq!(history, outcome.history);
    let reloaded = RunConfig::load(run.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(reloaded, config);

    let ckpt = Checkpoint::load(run.path().join(CHECKPOINT_FILE)).unwrap();
    let test = load_interactions(data.path().join(TEST_FILE), config.max_seq_len).unwrap();
    let t = tables(data.path());
    let from_file = evaluate(&ckpt, &test, [&t[0], &t[1]]).unwrap();
    let prepared = PreparedData::load(data.path(), config.max_seq_len, config.val_fraction).unwrap();
    let in_memory = evaluate_model(&outcome.model, &prepared.test, config.batch_size).unwrap();
    assert_eq!(from_file, in_memory);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn same_seed_reproduces_the_loss_trajectory() {
    let data = write_data(&tiny_spec(40));
    let config = tiny_config(data.path());
    let prepared = PreparedData::load(data.path(), config.max_seq_len, config.val_fraction).unwrap();
    let a = train_on(&config, &prepared, None).unwrap();
    let b = train_on(&config, &prepared, None).unwrap();
    assert_eq!(a.history.step_loss.len(), b.history.step_loss.len());
    for (x, y) in a.history.step_loss.iter().zip(&b.history.step_loss) {
        assert!((x - y).abs() <= 1e-6);
    }
    assert_eq!(a.model.params, b.model.params);
    let c = train_on(&RunConfig { seed: 1, ..config }, &prepared, None).unwrap();
    assert_ne!(a.history.step_loss, c.history.step_loss);
}

#[test]
fn zero_decoding_weight_follows_the_decoderless_trajectory() {
    let data = write_data(&tiny_spec(40));
    let config = RunConfig {
        lambda_dec: 0.0,
        ..tiny_config(data.path())
    };
    let prepared = PreparedData::load(data.path(), config.max_seq_len, config.val_fraction).unwrap();
    let full = train_on(&config, &prepared, None).unwrap();
    let without = train_on(
        &RunConfig {
            ablation: Ablation::Iddu,
            ..config
        },
        &prepared,
        None,
    )
    .unwrap();
    for (x, y) in full
        .history
        .step_prediction_loss
        .iter()
        .zip(&without.history.step_prediction_loss)
    {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn best_validation_epoch_is_kept() {
    let data = write_data(&tiny_spec(40));
    let prepared = PreparedData::load(data.path(), 10, 0.3).unwrap();
    let config = RunConfig {
        epochs: 4,
        val_fraction: 0.3,
        ..tiny_config(data.path())
    };
    let kept = train_on(&config, &prepared, None).unwrap();
    let aucs: Vec<f64> = kept.history.epochs.iter().map(|e| e.validation.unwrap().auc).collect();
    let best = kept.history.selected_epoch;
    assert!(aucs.iter().all(|&a| a <= aucs[best]), "{aucs:?}");
    assert!(aucs[..best].iter().all(|&a| a < aucs[best]));

    let last = train_on(&RunConfig { keep_best_epoch: false, ..config.clone() }, &prepared, None).unwrap();
    assert_eq!(last.history.selected_epoch, 3);
    assert_eq!(last.history.epochs, kept.history.epochs);

    // stopping at the selected epoch yields the same parameters
    let short = RunConfig {
        epochs: best + 1,
        keep_best_epoch: false,
        ..config
    };
    assert_eq!(train_on(&short, &prepared, None).unwrap().model.params, kept.model.params);
}

#[test]
fn stripping_the_decoder_leaves_evaluation_unchanged() {
    let data = write_data(&tiny_spec(40));
    let run = tempfile::tempdir().unwrap();
    let config = tiny_config(data.path());
    train(&config, run.path()).unwrap();
    let test = load_interactions(data.path().join(TEST_FILE), config.max_seq_len).unwrap();
    let t = tables(data.path());
    let mut ckpt = Checkpoint::load(run.path().join(CHECKPOINT_FILE)).unwrap();
    let first = evaluate(&ckpt, &test, [&t[0], &t[1]]).unwrap();
    let second = evaluate(&ckpt, &test, [&t[0], &t[1]]).unwrap();
    assert_eq!(first, second);
    assert_eq!(ckpt.strip_decoder(), 8);
    let stripped = evaluate(&ckpt, &test, [&t[0], &t[1]]).unwrap();
    assert_eq!(first, stripped);
    // the stripped checkpoint survives its own round trip
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(evaluate(&back, &test, [&t[0], &t[1]]).unwrap(), first);
}

#[test]
fn ablation_suite_rows_match_standalone_runs() {
    let data = write_data(&tiny_spec(30));
    let out = tempfile::tempdir().unwrap();
    let config = RunConfig {
        epochs: 1,
        ..tiny_config(data.path())
    };
    let table = run_ablation_suite(&config, &Ablation::ALL, &[7], Some(out.path())).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert!(out.path().join("ablation.tsv").exists());
    assert!(out.path().join("none-seed7").join(CHECKPOINT_FILE).exists());
    let prepared = PreparedData::load(data.path(), config.max_seq_len, config.val_fraction).unwrap();
    let alone = train_on(&RunConfig { seed: 7, ..config.clone() }, &prepared, None).unwrap();
    let test = evaluate_model(&alone.model, &prepared.test, config.batch_size).unwrap();
    let row = table.rows.iter().find(|r| r.variant == Ablation::None).unwrap();
    assert_eq!(row.test, test);
    assert_eq!(row.final_loss, alone.history.final_loss().unwrap());
}

#[test]
fn gradients_check_out_for_every_variant() {
    let start = Instant::now();
    for ablation in Ablation::ALL {
        let config = micro_config(ablation);
        let report = gradcheck(&config).unwrap();
        assert!(report.max_error() < GRADCHECK_TOLERANCE, "{ablation}: {}", report.to_text());
        let checked: BTreeSet<&str> = report.entries.iter().map(|e| e.tensor.as_str()).collect();
        let declared = DmaeModel::param_specs_for(&config.model_config(), 3, 7);
        let declared: BTreeSet<&str> = declared.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(checked, declared, "{ablation}");
        if ablation == Ablation::Mifu {
            assert!(checked.iter().all(|n| !n.starts_with("mifu.")));
        }
    }
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn gradcheck_rejects_oversized_configs() {
    let config = RunConfig {
        mask_rate: 0.3,
        ..micro_config(Ablation::None)
    };
    assert!(gradcheck(&config).is_err());
}

fn inventory(ablation: Ablation) -> BTreeSet<String> {
    let config = RunConfig {
        ablation,
        ..RunConfig::default()
    };
    DmaeModel::param_specs_for(&config.model_config(), 10, 20)
        .into_iter()
        .map(|s| s.name)
        .collect()
}

#[test]
fn variant_inventories_differ_by_the_removed_unit() {
    let full = inventory(Ablation::None);
    let missing = |a: Ablation| -> Vec<String> { full.difference(&inventory(a)).cloned().collect() };
    let extra = |a: Ablation| inventory(a).difference(&full).count();
    assert!(missing(Ablation::Iddu).iter().all(|n| n.starts_with("iddu.")));
    assert_eq!(missing(Ablation::Iddu).len(), 8);
    assert!(missing(Ablation::Mifu).iter().all(|n| n.starts_with("mifu.")));
    assert_eq!(missing(Ablation::Mifu).len(), 12);
    assert_eq!(
        missing(Ablation::MieuT),
        vec!["mieu.image.position".to_string(), "mieu.text.position".to_string()]
    );
    let se = missing(Ablation::MieuSe);
    assert_eq!(se.len(), 4);
    assert!(se.iter().all(|n| n.ends_with(".scale") || n.ends_with(".shift")));
    let din = missing(Ablation::DinBaseline);
    assert!(din.iter().all(|n| n.starts_with("mieu.") || n.starts_with("mifu.") || n.starts_with("iddu.")));
    for a in Ablation::ALL {
        assert_eq!(extra(a), 0, "{a}");
    }
}

#[test]
fn untrained_models_rank_at_chance() {
    let spec = SyntheticSpec {
        n_users: 600,
        n_items: 300,
        seq_len_min: 8,
        seq_len_max: 32,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let prepared = PreparedData::from_samples(&data.train, &data.test, [&data.tables[0], &data.tables[1]], 0.0);
    let mut aucs = Vec::new();
    for seed in 0..5 {
        let config = RunConfig {
            seed,
            max_seq_len: 32,
            ..RunConfig::default()
        };
        let model = DmaeModel::new(config.model_config(), prepared.users.rows(), prepared.items.rows(), seed);
        aucs.push(evaluate_model(&model, &prepared.test, 256).unwrap().auc);
    }
    let mean = aucs.iter().sum::<f64>() / 5.0;
    assert!((0.45..=0.55).contains(&mean), "{aucs:?}");
}

#[test]
fn sweep_rows_are_reproducible() {
    let data = write_data(&tiny_spec(24));
    let config = RunConfig {
        epochs: 1,
        ..tiny_config(data.path())
    };
    let out = tempfile::tempdir().unwrap();
    let a = sweep(&config, SweepAxis::Dim, Some(out.path())).unwrap();
    let b = sweep(&config, SweepAxis::Dim, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.rows.iter().filter(|r| r.best).count(), 1);
    assert!(out.path().join("sweep-dim.tsv").exists());
    let back = dmae::harness::SweepTable::read_json(&out.path().join("sweep-dim.json")).unwrap();
    assert_eq!(back, a);
}

#[test]
fn training_requires_data() {
    let config = RunConfig::default();
    let run = tempfile::tempdir().unwrap();
    assert!(train(&config, run.path()).is_err());
    let empty = tempfile::tempdir().unwrap();
    std::fs::write(empty.path().join(INTERACTIONS_FILE), "").unwrap();
    let config = RunConfig {
        data_dir: Some(empty.path().to_path_buf()),
        ..RunConfig::default()
    };
    assert!(train(&config, run.path()).is_err());
}

#[test]
fn numerical_failures_are_classified() {
    use dmae::DmaeError;
    assert!(DmaeError::GradientCheck(vec!["x".into()]).is_numerical());
    assert!(DmaeError::NonFiniteLoss {
        epoch: 0,
        step: 3,
        value: f64::NAN
    }
    .is_numerical());
    assert!(!DmaeError::InvalidConfig("x".into()).is_numerical());
}
