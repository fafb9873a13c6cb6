//! Training-loop contract tests: determinism, degenerate runs, the NaN
//! abort path, scaler update accounting, and eval/validation consistency.

use hqfno::checkpoint::load_checkpoint;
use hqfno::metrics::evaluate_model;
use hqfno::model::{HybridFno, InputFeatures, MixerKind, ModelConfig};
use hqfno::synthdata::{
    generate_dataset, load_index, load_split, FieldSample, GridSpec, MaterialConstants, Split,
    SynthParams,
};
use hqfno::train::{train_run, Schedule, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn tiny_model(c_q: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        channels: 4,
        set_modes: [2, 2, 2],
        c_q,
        n_q: None,
        circuit_depth: 1,
        padding: 2,
        mixer_kind: if c_q == 0 { MixerKind::None } else { MixerKind::Vqc },
        features: InputFeatures::default(),
        decoder_width: 6,
        decoder_layers: 3,
    }
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        lr0: 3e-3,
        schedule: Schedule::Cosine {
            t_max: steps.max(1),
            eta_min: 1e-4,
        },
        val_every: 4,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn make_data(dir: &Path) -> (Vec<FieldSample>, Vec<FieldSample>, MaterialConstants) {
    let mat = MaterialConstants::default();
    generate_dataset(
        dir,
        14,
        (2.0, 18.0),
        (40.0, 190.0),
        &GridSpec {
            dims: [8, 8, 6],
            ..GridSpec::default()
        },
        &mat,
        &SynthParams::default(),
        0.25,
        0.0,
        9,
    )
    .unwrap();
    let index = load_index(dir).unwrap();
    (
        load_split(dir, &index, Split::Train).unwrap(),
        load_split(dir, &index, Split::Val).unwrap(),
        mat,
    )
}

#[test]
fn fixed_seed_runs_produce_bit_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, mat) = make_data(&dir.path().join("data"));
    let mut logs = Vec::new();
    for run in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = HybridFno::<f64>::new(tiny_model(1), &mut rng).unwrap();
        let out = dir.path().join(format!("run{run}"));
        let outcome = train_run(&mut model, &tiny_train(10), &train, &val, &mat, &out).unwrap();
        logs.push((
            std::fs::read(&outcome.train_log).unwrap(),
            std::fs::read(&outcome.val_log).unwrap(),
            std::fs::read(&outcome.final_checkpoint).unwrap(),
        ));
    }
    assert_eq!(logs[0].0, logs[1].0, "train logs differ");
    assert_eq!(logs[0].1, logs[1].1, "val logs differ");
    assert_eq!(logs[0].2, logs[1].2, "checkpoints differ");
}

#[test]
fn zero_steps_emit_initial_checkpoint_and_empty_log_body() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, mat) = make_data(&dir.path().join("data"));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = HybridFno::<f64>::new(tiny_model(1), &mut rng).unwrap();
    let outcome = train_run(
        &mut model,
        &tiny_train(0),
        &train,
        &val,
        &mat,
        &dir.path().join("run"),
    )
    .unwrap();
    let log = std::fs::read_to_string(&outcome.train_log).unwrap();
    assert_eq!(log.lines().count(), 1, "header only");
    let ckpt = std::fs::read(&outcome.final_checkpoint).unwrap();
    let restored = load_checkpoint::<f64>(&ckpt).unwrap();
    // The checkpoint is evaluable: the scaler warm-up ran before step 0.
    let mut restored = restored;
    let eval = evaluate_model(&mut restored, &val, &mat).unwrap();
    assert!(eval.report("t_tilde").unwrap().rel_mae.is_finite());
}

#[test]
fn scaler_updates_once_per_step_plus_warmup_and_never_in_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, mat) = make_data(&dir.path().join("data"));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = HybridFno::<f64>::new(tiny_model(2), &mut rng).unwrap();
    let steps = 9; // validation fires at steps 4 and 8 plus the final one
    train_run(
        &mut model,
        &tiny_train(steps),
        &train,
        &val,
        &mat,
        &dir.path().join("run"),
    )
    .unwrap();
    for scaler in model.scalers() {
        assert_eq!(scaler.update_count, steps + 1);
    }
}

#[test]
fn nan_loss_aborts_and_retains_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (mut train, val, mat) = make_data(&dir.path().join("data"));
    // Poison one training sample so its loss is non-finite.
    train[0].t_norm[(0, 0, 0)] = f64::NAN;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = HybridFno::<f64>::new(tiny_model(1), &mut rng).unwrap();
    let out = dir.path().join("run");
    let err = train_run(&mut model, &tiny_train(20), &train, &val, &mat, &out).unwrap_err();
    assert!(matches!(err, hqfno::Error::Numeric(_)), "{err}");
    // The retained checkpoint parses and evaluates.
    let bytes = std::fs::read(out.join("final.ckpt")).unwrap();
    let mut restored = load_checkpoint::<f64>(&bytes).unwrap();
    let eval = evaluate_model(&mut restored, &val, &mat).unwrap();
    assert!(eval.report("t_tilde").unwrap().rel_mae.is_finite());
}

#[test]
fn final_validation_row_matches_fresh_eval_of_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, mat) = make_data(&dir.path().join("data"));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = HybridFno::<f64>::new(tiny_model(1), &mut rng).unwrap();
    let outcome = train_run(
        &mut model,
        &tiny_train(10),
        &train,
        &val,
        &mat,
        &dir.path().join("run"),
    )
    .unwrap();
    let val_log = std::fs::read_to_string(&outcome.val_log).unwrap();
    let last = val_log.lines().last().unwrap();
    let fields: Vec<f64> = last
        .split(',')
        .skip(1)
        .map(|v| v.parse::<f64>().unwrap())
        .collect();
    let bytes = std::fs::read(&outcome.final_checkpoint).unwrap();
    let mut restored = load_checkpoint::<f64>(&bytes).unwrap();
    let eval = evaluate_model(&mut restored, &val, &mat).unwrap();
    let t = eval.report("t_tilde").unwrap();
    assert!((fields[0] - t.rel_mae).abs() < 1e-12);
    assert!((fields[1] - t.rel_rmse).abs() < 1e-12);
    assert!((fields[2] - t.mae).abs() < 1e-9);
}
