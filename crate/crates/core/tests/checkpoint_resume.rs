//! Checkpoints restore bit-identical models, and a run resumed from a
//! mid-training checkpoint replays the rest of the uninterrupted run.

use std::path::Path;

use mixlab::checkpoint::{self, Checkpoint, Progress};
use mixlab::config::{Precision, TrainConfig};
use mixlab::mixer::MixRatio;
use mixlab::model::{self, Batch, ModelParams};
use mixlab::optim::AdamState;
use mixlab::taskgen::{build_splits, DatasetSplit, TaskExample};
use mixlab::tensor::{DType, Scalar, Tensor};
use mixlab::trainer::{self, RunPaths};

fn tiny_config(experiment: &str) -> TrainConfig {
    let mut c = TrainConfig {
        experiment: experiment.into(),
        ratio: MixRatio::new(3, 1).unwrap(),
        batch_size: 16,
        epochs: 2,
        lr_max: 1e-3,
        quick_eval_every: 5,
        quick_eval_size: 30,
        train_count: 150,
        val_count: 40,
        ..TrainConfig::default()
    };
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.d_ff = 32;
    c
}

fn splits(c: &TrainConfig) -> (DatasetSplit, DatasetSplit) {
    build_splits(c.data_seed, c.train_count, c.val_count).unwrap()
}

fn sample<'a>(math: &'a DatasetSplit, nli: &'a DatasetSplit) -> Vec<&'a TaskExample> {
    math.val.iter().take(8).chain(nli.val.iter().take(8)).collect()
}

fn bits<T: Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.to_f64_vec().iter().map(|v| v.to_bits()).collect()
}

fn round_trip<T: Scalar>(dir: &Path) {
    let mut config = tiny_config("rt");
    if T::DTYPE == DType::F64 {
        config.precision = Precision::F64;
    }
    let (math, nli) = splits(&config);
    let examples = sample(&math, &nli);
    let mut params: ModelParams<T> = ModelParams::init(config.model, 4).unwrap();
    let mut optimizer = AdamState::new(&params);
    // One real update so the optimizer moments are non-trivial.
    trainer::train_step(&mut params, &mut optimizer, &examples, 1e-3, 1.0, 0).unwrap();
    let ckpt = Checkpoint {
        config: config.clone(),
        params: params.clone(),
        optimizer: Some(optimizer.clone()),
        progress: Progress {
            global_step: 17,
            epoch_start_cursor: 40,
            best_metric: 0.25,
            best_step: 10,
        },
    };
    let path = dir.join(format!("rt{}.ckpt", T::DTYPE.size_of()));
    checkpoint::save(&path, &ckpt).unwrap();
    let loaded: Checkpoint<T> = checkpoint::load(&path).unwrap();

    assert_eq!(loaded.config, config);
    assert_eq!(loaded.progress, ckpt.progress);
    assert_eq!(loaded.optimizer.as_ref(), Some(&optimizer));
    for (name, t) in &params.tensors {
        assert_eq!(bits(t), bits(&loaded.params.tensors[name]), "{name}");
    }
    let batch = Batch::from_examples(examples.iter().copied());
    let before = model::logits(&params, &batch).unwrap();
    let after = model::logits(&loaded.params, &batch).unwrap();
    assert_eq!(bits(&before), bits(&after));
    assert_eq!(checkpoint::encode(&loaded), checkpoint::encode(&ckpt));
}

#[test]
fn save_load_forward_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    round_trip::<f32>(dir.path());
    round_trip::<f64>(dir.path());
}

#[test]
fn resume_reproduces_the_remaining_events() {
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    let part_dir = dir.path().join("part");
    let config = tiny_config("resume");
    let (math, nli) = splits(&config);
    // 150 math examples at 12 per step: 13 steps per epoch, 26 in total.
    let full = trainer::run_experiment::<f32>(&config, &math, &nli, &full_dir, None).unwrap();
    assert_eq!(full.total_steps, 26);

    let mut with_ckpts = config.clone();
    with_ckpts.checkpoint_every = 8;
    let first = trainer::run_experiment::<f32>(&with_ckpts, &math, &nli, &part_dir, None).unwrap();
    assert_eq!(
        first.events, full.events,
        "periodic checkpoints do not perturb training"
    );

    // Step 16 lies inside the second epoch, so the resumed run must also
    // restore the NLI cursor of that epoch.
    for step in [8u64, 16, 24] {
        let mut resumed = config.clone();
        resumed.resume_from = Some(RunPaths::step_checkpoint(&part_dir, "resume", step));
        let out = dir.path().join(format!("resumed{step}"));
        let rest = trainer::run_experiment::<f32>(&resumed, &math, &nli, &out, None).unwrap();
        let expected: Vec<_> = full.events.iter().filter(|e| e.step > step).cloned().collect();
        assert_eq!(rest.events, expected, "resume from step {step}");
        for (name, t) in &full.final_params.tensors {
            assert_eq!(
                bits(t),
                bits(&rest.final_params.tensors[name]),
                "{name} after resume from {step}"
            );
        }
        assert_eq!(rest.best_step, full.best_step);
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config("bad");
    let params: ModelParams<f32> = ModelParams::init(config.model, 1).unwrap();
    let ckpt = Checkpoint {
        config,
        params,
        optimizer: None,
        progress: Progress::default(),
    };
    let bytes = checkpoint::encode(&ckpt);
    assert!(checkpoint::decode::<f32>(&bytes).is_ok());
    assert!(checkpoint::decode::<f32>(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(checkpoint::decode::<f32>(&wrong_magic).is_err());
    // Loading into the wider type widens every stored value exactly.
    let wide = checkpoint::decode::<f64>(&bytes).unwrap();
    for (name, t) in &ckpt.params.tensors {
        assert_eq!(bits(t), bits(&wide.params.tensors[name]), "{name}");
    }
    let missing = dir.path().join("nope.ckpt");
    assert!(checkpoint::load::<f32>(&missing).is_err());
}
