//! Training loop, two-stage evaluation and checkpoint policy.
//!
//! A run interleaves the tasks per the configured [`MixRatio`], quick-evaluates
//! both tasks on fixed validation subsamples every `quick_eval_every` steps
//! (and at step 0 and the final step), keeps the checkpoint with the best
//! quick MATH accuracy, and finishes with a full evaluation of the final
//! parameters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError, Progress};
use crate::config::{ConfigError, TrainConfig};
use crate::mixer::{self, MixError, PlanRequest};
use crate::model::{self, Batch, ModelError, ModelParams};
use crate::optim::{self, AdamState, OptimError, ScheduleConfig};
use crate::taskgen::{DatasetSplit, Task, TaskExample};
use crate::tensor::{Scalar, Tape, Tensor, TensorError};

/// Examples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("mixer: {0}")]
    Mix(#[from] MixError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("cannot evaluate an empty {0} split")]
    EmptySplit(Task),
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Loss,
}

/// One metrics-log record. No wall-clock fields, so logs are reproducible
/// byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub step: u64,
    pub experiment: String,
    pub task: Task,
    pub split: Split,
    pub metric: Metric,
    pub value: f64,
    pub examples_evaluated: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub examples: usize,
}

/// Per-example `(correct, loss)` for one batch.
fn score_batch<T: Scalar>(params: &ModelParams<T>, examples: &[&TaskExample]) -> Result<Vec<(bool, f64)>> {
    let batch = Batch::from_examples(examples.iter().copied());
    let logits = model::logits(params, &batch)?;
    let preds = model::predict(&logits);
    Ok(examples
        .iter()
        .enumerate()
        .map(|(r, ex)| {
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.as_f64()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            (preds[r] == ex.label, lse - row[ex.label])
        })
        .collect())
}

/// Exact-match accuracy and mean cross-entropy over `examples`.
///
/// Batches are cut at fixed [`EVAL_BATCH`] boundaries and assigned to
/// workers in contiguous runs; results are reduced in example order, so the
/// output does not depend on `workers`.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, examples: &[&TaskExample], workers: usize) -> Result<TaskMetrics> {
    let batches: Vec<&[&TaskExample]> = examples.chunks(EVAL_BATCH).collect();
    let workers = workers.clamp(1, batches.len().max(1));
    let per_worker = batches.len().div_ceil(workers);
    let scored: Vec<Vec<(bool, f64)>> = if workers == 1 {
        batches.iter().map(|b| score_batch(params, b)).collect::<Result<_>>()?
    } else {
        let shards: Vec<Result<Vec<Vec<(bool, f64)>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per_worker)
                .map(|shard| s.spawn(move || shard.iter().map(|b| score_batch(params, b)).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(batches.len());
        for shard in shards {
            all.extend(shard?);
        }
        all
    };
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for &(ok, l) in scored.iter().flatten() {
        correct += usize::from(ok);
        loss += l;
    }
    let n = examples.len();
    Ok(TaskMetrics {
        accuracy: correct as f64 / n.max(1) as f64,
        loss: loss / n.max(1) as f64,
        examples: n,
    })
}

/// Indices of the fixed quick-eval subsample: the first `k` entries of a
/// permutation of the validation set seeded by `eval_seed`.
pub fn quick_eval_indices(val_len: usize, k: usize, eval_seed: u64) -> Vec<usize> {
    let mut idx = mixer::permutation(val_len, eval_seed);
    idx.truncate(k);
    idx
}

pub fn quick_eval<T: Scalar>(
    params: &ModelParams<T>,
    split: &DatasetSplit,
    k: usize,
    eval_seed: u64,
    workers: usize,
) -> Result<TaskMetrics> {
    if split.val.is_empty() || k == 0 {
        return Err(TrainError::EmptySplit(split.task));
    }
    if k > split.val.len() {
        return Err(TrainError::Invalid(format!(
            "quick-eval size {k} exceeds {} validation examples",
            split.val.len()
        )));
    }
    let examples: Vec<&TaskExample> = quick_eval_indices(split.val.len(), k, eval_seed)
        .into_iter()
        .map(|i| &split.val[i])
        .collect();
    evaluate(params, &examples, workers)
}

pub fn full_eval<T: Scalar>(params: &ModelParams<T>, split: &DatasetSplit, workers: usize) -> Result<TaskMetrics> {
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit(split.task));
    }
    let examples: Vec<&TaskExample> = split.val.iter().collect();
    evaluate(params, &examples, workers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// Loss and per-parameter gradients of one concatenated batch.
pub fn loss_and_grads<T: Scalar>(params: &ModelParams<T>, examples: &[&TaskExample]) -> Result<(f64, model::Grads<T>)> {
    let batch = Batch::from_examples(examples.iter().copied());
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let trace = model::forward(&params.config, &mut tape, &bound, &batch)?;
    let loss = tape.cross_entropy(trace.logits, &batch.labels)?;
    let value = tape.value(loss).data()[0].as_f64();
    tape.backward(loss)?;
    Ok((value, bound.grads(&tape)))
}

/// One optimizer step on the concatenated batch `examples` (math first,
/// then NLI): forward, unweighted mean cross-entropy, backward, global
/// clipping, Adam.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    optimizer: &mut AdamState<T>,
    examples: &[&TaskExample],
    lr: f64,
    clip_norm: f64,
    step: u64,
) -> Result<StepOutcome> {
    let (loss, mut grads) = loss_and_grads(params, examples)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step });
    }
    let grad_norm = optim::global_norm(&grads);
    let clip_scale = optim::clip_global_norm(&mut grads, clip_norm)?;
    optimizer.apply(params, &grads, lr)?;
    Ok(StepOutcome {
        loss,
        grad_norm,
        clip_scale,
    })
}

/// Gathers the examples of one planned step, math before NLI.
pub fn materialize<'a>(
    step: &mixer::StepComposition,
    math: &'a DatasetSplit,
    nli: &'a DatasetSplit,
) -> Vec<&'a TaskExample> {
    step.math_indices
        .iter()
        .map(|&i| &math.train[i])
        .chain(step.nli_indices.iter().map(|&i| &nli.train[i]))
        .collect()
}

/// Output locations of one experiment.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub final_ckpt: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path, experiment: &str) -> Self {
        Self {
            metrics: out_dir.join(format!("{experiment}.metrics.jsonl")),
            best: out_dir.join(format!("{experiment}.best.ckpt")),
            final_ckpt: out_dir.join(format!("{experiment}.final.ckpt")),
        }
    }

    pub fn step_checkpoint(out_dir: &Path, experiment: &str, step: u64) -> PathBuf {
        out_dir.join(format!("{experiment}.step{step}.ckpt"))
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary<T: Scalar> {
    pub events: Vec<MetricEvent>,
    pub total_steps: u64,
    pub best_step: u64,
    pub best_metric: f64,
    pub final_params: ModelParams<T>,
    pub paths: RunPaths,
}

/// Header record of a metrics log: the resolved configuration. Checkpoint
/// paths are recorded by file name only, so a log does not depend on the
/// directory a run was launched in.
pub fn config_header(config: &TrainConfig) -> String {
    let file_name = |p: &Option<PathBuf>| {
        p.as_ref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let map: serde_json::Map<String, serde_json::Value> = config
        .pairs()
        .into_iter()
        .map(|(k, v)| {
            let v = match k {
                "init_from" => file_name(&config.init_from),
                "resume_from" => file_name(&config.resume_from),
                _ => v,
            };
            (k.to_string(), serde_json::Value::String(v))
        })
        .collect();
    let mut wrapper = serde_json::Map::new();
    wrapper.insert("config".into(), serde_json::Value::Object(map));
    serde_json::Value::Object(wrapper).to_string()
}

/// Parses a metrics log, skipping the config header.
pub fn read_metrics(text: &str) -> std::result::Result<Vec<MetricEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("{\"config\""))
        .map(serde_json::from_str)
        .collect()
}

struct EventLog {
    writer: BufWriter<File>,
    events: Vec<MetricEvent>,
    experiment: String,
    seed: u64,
}

impl EventLog {
    fn record(&mut self, step: u64, task: Task, split: Split, m: &TaskMetrics) -> Result<()> {
        for (metric, value) in [(Metric::Accuracy, m.accuracy), (Metric::Loss, m.loss)] {
            let ev = MetricEvent {
                step,
                experiment: self.experiment.clone(),
                task,
                split,
                metric,
                value,
                examples_evaluated: m.examples,
                seed: self.seed,
            };
            serde_json::to_writer(&mut self.writer, &ev).map_err(std::io::Error::from)?;
            self.writer.write_all(b"\n")?;
            self.events.push(ev);
        }
        Ok(())
    }
}

/// Tracks the best quick MATH accuracy; ties keep the earlier step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointPolicy {
    pub best_metric: Option<f64>,
    pub best_step: u64,
}

impl CheckpointPolicy {
    /// Returns true when `metric` strictly improves on the best so far.
    pub fn offer(&mut self, step: u64, metric: f64) -> bool {
        if self.best_metric.is_some_and(|b| metric <= b) {
            return false;
        }
        self.best_metric = Some(metric);
        self.best_step = step;
        true
    }
}

fn load_initial<T: Scalar>(config: &TrainConfig) -> Result<ModelParams<T>> {
    match &config.init_from {
        Some(path) => {
            let ck: Checkpoint<T> = checkpoint::load(path)?;
            let expected = config.model.param_shapes();
            let found: Vec<(String, Vec<usize>)> = ck
                .params
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), t.shape().to_vec()))
                .collect();
            if expected != found {
                return Err(TrainError::Invalid(format!(
                    "checkpoint {} does not match the configured model shape",
                    path.display()
                )));
            }
            Ok(ModelParams {
                config: config.model,
                tensors: ck.params.tensors,
            })
        }
        None => Ok(ModelParams::init(config.model, config.seed)?),
    }
}

/// Optional per-event hook, e.g. for progress output.
pub type EventHook<'a> = &'a mut dyn FnMut(&MetricEvent);

/// Runs one experiment and writes its metrics log and best/final checkpoints
/// into `out_dir`.
pub fn run_experiment<T: Scalar>(
    config: &TrainConfig,
    math: &DatasetSplit,
    nli: &DatasetSplit,
    out_dir: &Path,
    mut hook: Option<EventHook<'_>>,
) -> Result<RunSummary<T>> {
    config.validate()?;
    if config.quick_eval_size > math.val.len() || config.quick_eval_size > nli.val.len() {
        return Err(TrainError::Invalid(format!(
            "quick_eval_size {} exceeds a validation split",
            config.quick_eval_size
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir, &config.experiment);

    let (mut params, mut optimizer, progress) = match &config.resume_from {
        Some(path) => {
            let ck: Checkpoint<T> = checkpoint::load(path)?;
            let opt = ck
                .optimizer
                .ok_or_else(|| TrainError::Invalid(format!("{} has no optimizer state", path.display())))?;
            (ck.params, opt, ck.progress)
        }
        None => {
            let p = load_initial::<T>(config)?;
            let opt = AdamState::with_hyper(&p, config.adam_beta1, config.adam_beta2, config.adam_eps);
            (p, opt, Progress::default())
        }
    };

    let mut log = EventLog {
        writer: BufWriter::new(File::create(&paths.metrics)?),
        events: Vec::new(),
        experiment: config.experiment.clone(),
        seed: config.seed,
    };
    writeln!(log.writer, "{}", config_header(config))?;
    let workers = config.eval_workers;
    let mut emit = |log: &mut EventLog, step: u64, split: Split, params: &ModelParams<T>| -> Result<TaskMetrics> {
        let mut math_metrics = None;
        for split_data in [math, nli] {
            let m = match split {
                Split::Quick => quick_eval(params, split_data, config.quick_eval_size, config.eval_seed, workers)?,
                Split::Full => full_eval(params, split_data, workers)?,
            };
            let before = log.events.len();
            log.record(step, split_data.task, split, &m)?;
            if let Some(h) = hook.as_mut() {
                log.events[before..].iter().for_each(h);
            }
            if split_data.task == Task::Math {
                math_metrics = Some(m);
            }
        }
        Ok(math_metrics.expect("math evaluated"))
    };

    let save_ckpt = |path: &Path, params: &ModelParams<T>, opt: &AdamState<T>, progress: Progress| -> Result<()> {
        checkpoint::save(
            path,
            &Checkpoint {
                config: config.clone(),
                params: params.clone(),
                optimizer: Some(opt.clone()),
                progress,
            },
        )?;
        Ok(())
    };

    if config.eval_only {
        emit(&mut log, 0, Split::Full, &params)?;
        log.writer.flush()?;
        let progress = Progress::default();
        save_ckpt(&paths.best, &params, &optimizer, progress)?;
        save_ckpt(&paths.final_ckpt, &params, &optimizer, progress)?;
        return Ok(RunSummary {
            events: log.events,
            total_steps: 0,
            best_step: 0,
            best_metric: f64::NAN,
            final_params: params,
            paths,
        });
    }

    let per_epoch = mixer::steps_per_epoch(config.ratio, config.batch_size, math.train.len(), nli.train.len())?;
    let total_steps = (per_epoch * config.epochs) as u64;
    if config.quick_eval_every as u64 > total_steps {
        return Err(TrainError::Invalid(format!(
            "quick_eval_every {} exceeds the {total_steps} training steps",
            config.quick_eval_every
        )));
    }
    let schedule = ScheduleConfig::new(config.lr_max, total_steps as usize, config.warmup_fraction)?;
    let mut policy = CheckpointPolicy {
        best_metric: (!progress.best_metric.is_nan()).then_some(progress.best_metric),
        best_step: progress.best_step,
    };
    let every = config.quick_eval_every as u64;

    let mut global_step = progress.global_step;
    if global_step == 0 {
        let m = emit(&mut log, 0, Split::Quick, &params)?;
        if policy.offer(0, m.accuracy) {
            save_ckpt(&paths.best, &params, &optimizer, Progress::default())?;
        }
    }
    let mut epoch_cursor = progress.epoch_start_cursor;
    let first_epoch = (global_step / per_epoch as u64) as usize;
    for epoch in first_epoch..config.epochs {
        let plan = mixer::plan_epoch(PlanRequest {
            ratio: config.ratio,
            batch_size: config.batch_size,
            math_size: math.train.len(),
            nli_size: nli.train.len(),
            global_seed: config.seed,
            epoch_index: epoch,
            nli_cursor: epoch_cursor,
        })?;
        let skip = (global_step - (epoch * per_epoch) as u64) as usize;
        for step in plan.steps.iter().skip(skip) {
            let examples = materialize(step, math, nli);
            let lr = schedule.lr_at(global_step as usize)?;
            train_step(
                &mut params,
                &mut optimizer,
                &examples,
                lr,
                config.clip_norm,
                global_step,
            )?;
            global_step += 1;
            let progress_now = |policy: &CheckpointPolicy| Progress {
                global_step,
                epoch_start_cursor: if global_step % per_epoch as u64 == 0 {
                    plan.nli_cursor_out
                } else {
                    epoch_cursor
                },
                best_metric: policy.best_metric.unwrap_or(f64::NAN),
                best_step: policy.best_step,
            };
            if global_step % every == 0 || global_step == total_steps {
                let m = emit(&mut log, global_step, Split::Quick, &params)?;
                if policy.offer(global_step, m.accuracy) {
                    save_ckpt(&paths.best, &params, &optimizer, progress_now(&policy))?;
                }
            }
            if config.checkpoint_every > 0
                && global_step % config.checkpoint_every as u64 == 0
                && global_step < total_steps
            {
                let path = RunPaths::step_checkpoint(out_dir, &config.experiment, global_step);
                save_ckpt(&path, &params, &optimizer, progress_now(&policy))?;
            }
        }
        epoch_cursor = plan.nli_cursor_out;
    }

    emit(&mut log, total_steps, Split::Full, &params)?;
    log.writer.flush()?;
    let final_progress = Progress {
        global_step: total_steps,
        epoch_start_cursor: epoch_cursor,
        best_metric: policy.best_metric.unwrap_or(f64::NAN),
        best_step: policy.best_step,
    };
    save_ckpt(&paths.final_ckpt, &params, &optimizer, final_progress)?;
    Ok(RunSummary {
        events: log.events,
        total_steps,
        best_step: policy.best_step,
        best_metric: policy.best_metric.unwrap_or(f64::NAN),
        final_params: params,
        paths,
    })
}

/// Fraction of parameter tensors and of individual parameters with a
/// nonzero gradient.
pub fn gradient_coverage<T: Scalar>(grads: &model::Grads<T>) -> (f64, f64) {
    let tensors = grads.len().max(1) as f64;
    let live_tensors = grads.values().filter(|g| g.iter().any(|v| *v != T::zero())).count() as f64;
    let total: usize = grads.values().map(Vec::len).sum();
    let live: usize = grads
        .values()
        .map(|g| g.iter().filter(|v| **v != T::zero()).count())
        .sum();
    (live_tensors / tensors, live as f64 / total.max(1) as f64)
}

/// Logits of a fixed batch, for checkpoint round-trip checks.
pub fn probe_logits<T: Scalar>(params: &ModelParams<T>, examples: &[&TaskExample]) -> Result<Tensor<T>> {
    Ok(model::logits(params, &Batch::from_examples(examples.iter().copied()))?)
}
