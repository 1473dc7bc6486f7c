//! Central finite-difference checks of the tape's analytic gradients, run in
//! f64.
//!
//! Each check builds a small random problem, backpropagates once, and then
//! perturbs sampled input entries by ±h. A sample is skipped and resampled
//! when the perturbation flips the sign of any relu input, because the
//! difference quotient is meaningless across a kink.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{self, Batch, ModelConfig, ModelParams};
use crate::taskgen::{gen_math, gen_nli, MathParams, NliParams};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Relative tolerance between analytic and numeric derivatives.
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so derivatives that are both
/// nearly zero compare on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub samples: Vec<Sample>,
    pub skipped_kinks: usize,
}

impl Report {
    pub fn failures(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.rel_error > REL_TOL).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.samples.is_empty() && self.failures().is_empty()
    }

    pub fn merge(&mut self, other: Report) {
        self.samples.extend(other.samples);
        self.skipped_kinks += other.skipped_kinks;
    }
}

/// A named input of a check and the entries eligible for sampling.
pub struct Input {
    pub name: String,
    pub value: Tensor<f64>,
    pub candidates: Vec<usize>,
}

impl Input {
    pub fn new(name: &str, value: Tensor<f64>) -> Self {
        let candidates = (0..value.len()).collect();
        Self {
            name: name.to_string(),
            value,
            candidates,
        }
    }
}

/// Builds the scalar loss from the leaf handles, in input order.
pub type LossFn<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Input], f: &LossFn<'_>, backward: bool) -> Result<(f64, Vec<bool>, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|i| tape.leaf(i.value.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    let pattern = tape.relu_pattern();
    let mut grads = Vec::new();
    if backward {
        tape.backward(loss)?;
        grads = vars
            .iter()
            .map(|&v| {
                tape.grad_slice(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
            })
            .collect();
    }
    Ok((value, pattern, grads))
}

/// Compares analytic and central-difference derivatives on `per_input`
/// sampled entries of every input.
pub fn check(inputs: &mut [Input], f: &LossFn<'_>, per_input: usize, seed: u64) -> Result<Report> {
    let (_, base_pattern, grads) = evaluate(inputs, f, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    for which in 0..inputs.len() {
        let mut order = inputs[which].candidates.clone();
        order.shuffle(&mut rng);
        let mut taken = 0;
        for idx in order {
            if taken == per_input {
                break;
            }
            let orig = inputs[which].value.data()[idx];
            inputs[which].value.data_mut()[idx] = orig + STEP;
            let (plus, p_plus, _) = evaluate(inputs, f, false)?;
            inputs[which].value.data_mut()[idx] = orig - STEP;
            let (minus, p_minus, _) = evaluate(inputs, f, false)?;
            inputs[which].value.data_mut()[idx] = orig;
            if p_plus != base_pattern || p_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grads[which][idx];
            report.samples.push(Sample {
                name: inputs[which].name.clone(),
                index: idx,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
            taken += 1;
        }
    }
    Ok(report)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::random_normal(shape.to_vec(), 0.0, 1.0, seed).expect("valid shape")
}

/// Reduces `[rows, d]` to a loss with row-dependent upstream gradients:
/// a fixed random projection to 5 classes followed by cross-entropy.
fn project_ce(tape: &mut Tape<f64>, x: Var, rows: usize, d: usize, seed: u64) -> Result<Var> {
    let w = tape.leaf(random(&[d, 5], seed), false);
    let y = tape.matmul(x, w)?;
    let labels: Vec<usize> = (0..rows).map(|r| (r * 3 + 1) % 5).collect();
    tape.cross_entropy(y, &labels)
}

/// Named per-op checks. Every differentiable op appears at least once.
pub fn op_checks(per_input: usize, seed: u64) -> Result<Vec<(&'static str, Report)>> {
    let s = |k: u64| crate::seed::derive_seed(seed, k);
    let mut out = Vec::new();

    let mut inputs = vec![
        Input::new("a", random(&[4, 3], s(1))),
        Input::new("b", random(&[3, 5], s(2))),
    ];
    out.push((
        "matmul",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.matmul(v[0], v[1])?;
                project_ce(t, y, 4, 5, s(100))
            },
            per_input,
            s(3),
        )?,
    ));

    let mut inputs = vec![
        Input::new("a", random(&[3, 4], s(4))),
        Input::new("b", random(&[3, 4], s(5))),
    ];
    out.push((
        "add",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.add(v[0], v[1])?;
                project_ce(t, y, 3, 4, s(101))
            },
            per_input,
            s(6),
        )?,
    ));

    let mut inputs = vec![
        Input::new("x", random(&[3, 4], s(7))),
        Input::new("bias", random(&[4], s(8))),
    ];
    out.push((
        "add_bias",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.add_bias(v[0], v[1])?;
                project_ce(t, y, 3, 4, s(102))
            },
            per_input,
            s(9),
        )?,
    ));

    let mut inputs = vec![Input::new("x", random(&[4, 4], s(10)))];
    out.push((
        "relu",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.relu(v[0]);
                project_ce(t, y, 4, 4, s(103))
            },
            per_input,
            s(11),
        )?,
    ));

    let mut inputs = vec![Input::new("x", random(&[3, 4], s(12)))];
    out.push((
        "scale",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.scale(v[0], -1.7);
                project_ce(t, y, 3, 4, s(104))
            },
            per_input,
            s(13),
        )?,
    ));

    let mut inputs = vec![Input::new("x", random(&[3, 4], s(14)))];
    out.push((
        "mean_all",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.relu(v[0]);
                let w = t.leaf(random(&[4, 4], s(105)), false);
                let y = t.matmul(y, w)?;
                Ok(t.mean_all(y))
            },
            per_input,
            s(15),
        )?,
    ));

    let mut inputs = vec![Input::new("x", random(&[3, 4], s(16)))];
    out.push((
        "sum_all",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.softmax_rows(v[0])?;
                let w = t.leaf(random(&[4, 2], s(106)), false);
                let y = t.matmul(y, w)?;
                Ok(t.sum_all(y))
            },
            per_input,
            s(17),
        )?,
    ));

    let mut inputs = vec![
        Input::new("x", random(&[3, 6], s(18))),
        Input::new("gain", random(&[6], s(19))),
        Input::new("bias", random(&[6], s(20))),
    ];
    out.push((
        "layer_norm",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], model::LN_EPS)?;
                project_ce(t, y, 3, 6, s(107))
            },
            per_input,
            s(21),
        )?,
    ));

    let mut inputs = vec![Input::new("x", random(&[3, 5], s(22)))];
    out.push((
        "softmax_rows",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.softmax_rows(v[0])?;
                project_ce(t, y, 3, 5, s(108))
            },
            per_input,
            s(23),
        )?,
    ));

    let mut inputs = vec![Input::new("logits", random(&[4, 7], s(24)))];
    out.push((
        "cross_entropy",
        check(
            &mut inputs,
            &|t, v| t.cross_entropy(v[0], &[0, 6, 3, 3]),
            per_input,
            s(25),
        )?,
    ));

    let ids = [2usize, 0, 2, 4, 1];
    let mut table = Input::new("table", random(&[6, 3], s(26)));
    table.candidates = (0..table.value.len()).filter(|i| ids.contains(&(i / 3))).collect();
    let mut inputs = vec![table];
    out.push((
        "embedding",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.embedding(v[0], &ids)?;
                project_ce(t, y, 5, 3, s(109))
            },
            per_input,
            s(27),
        )?,
    ));

    // Two sequences of length 4; the second has two padded positions.
    let mask = [true, true, true, true, true, true, false, false];
    let mut inputs = vec![
        Input::new("q", random(&[8, 4], s(28))),
        Input::new("k", random(&[8, 4], s(29))),
        Input::new("v", random(&[8, 4], s(30))),
    ];
    out.push((
        "attention",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.attention(v[0], v[1], v[2], &mask, 2, 2)?;
                project_ce(t, y, 8, 4, s(110))
            },
            per_input,
            s(31),
        )?,
    ));

    let mut x = Input::new("x", random(&[8, 3], s(32)));
    x.candidates = (0..x.value.len()).filter(|i| mask[i / 3]).collect();
    let mut inputs = vec![x];
    out.push((
        "masked_mean_pool",
        check(
            &mut inputs,
            &|t, v| {
                let y = t.masked_mean_pool(v[0], &mask, 2)?;
                project_ce(t, y, 2, 3, s(111))
            },
            per_input,
            s(33),
        )?,
    ));

    Ok(out)
}

/// A small model on a padded mixed batch of real task examples.
pub fn model_check(per_tensor: usize, seed: u64) -> Result<Report> {
    let config = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
        ..ModelConfig::default()
    };
    let mut params: ModelParams<f64> =
        ModelParams::init(config, seed).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
    // Larger weights than the training init, so every path carries signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in params.tensors.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let data_err = |e: crate::taskgen::DataError| TensorError::InvalidArgument(e.to_string());
    let math = gen_math(seed, 2, MathParams::default()).map_err(data_err)?;
    let nli = gen_nli(seed, 2, NliParams::default()).map_err(data_err)?;
    let batch = Batch::from_examples(math.iter().chain(nli.iter()));
    let used: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();

    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let mut inputs: Vec<Input> = names
        .iter()
        .map(|n| {
            let mut input = Input::new(n, params.tensors[n].clone());
            let width = config.d_model;
            if n == "embed.token" {
                input.candidates.retain(|i| used.contains(&(i / width)));
            } else if n == "embed.position" {
                input.candidates.retain(|i| i / width < batch.seq_len);
            }
            input
        })
        .collect();
    let f = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let bound = model::Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
        let trace =
            model::forward(&config, t, &bound, &batch).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
        t.cross_entropy(trace.logits, &batch.labels)
    };
    check(&mut inputs, &f, per_tensor, seed)
}
