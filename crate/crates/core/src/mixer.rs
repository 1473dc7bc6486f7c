//! m:n mixed-batch scheduling.
//!
//! Every training step concatenates `m` math sub-batches and `n` NLI
//! sub-batches of equal size `s = B/(m+n)`. The math set is traversed
//! exactly once per epoch in a freshly shuffled order; NLI examples are
//! drawn sequentially from an endless cycle of shuffled passes, so the NLI
//! cursor carries over from one epoch to the next.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::derive_seed;

const MATH_STREAM: u64 = 0x6d61_7468_0000_0000;
const NLI_STREAM: u64 = 0x6e6c_6900_0000_0000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MixError {
    #[error("batch size {batch} is not divisible by m+n = {parts}")]
    Indivisible { batch: usize, parts: usize },
    #[error("invalid mixing ratio {0}")]
    InvalidRatio(String),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("the {0} dataset is empty but the ratio draws from it")]
    EmptyDataset(&'static str),
}

pub type Result<T> = std::result::Result<T, MixError>;

/// Math:NLI sub-batch ratio. `1:0` is math-only and `0:1` is NLI-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MixRatio {
    pub math: usize,
    pub nli: usize,
}

impl MixRatio {
    pub const MATH_ONLY: MixRatio = MixRatio { math: 1, nli: 0 };
    pub const NLI_ONLY: MixRatio = MixRatio { math: 0, nli: 1 };

    pub fn new(math: usize, nli: usize) -> Result<Self> {
        if math + nli == 0 {
            return Err(MixError::InvalidRatio("0:0".into()));
        }
        Ok(Self { math, nli })
    }

    pub fn is_mixed(&self) -> bool {
        self.math > 0 && self.nli > 0
    }

    /// Share of math examples in a full step, in percent.
    pub fn math_percent(&self) -> f64 {
        100.0 * self.math as f64 / (self.math + self.nli) as f64
    }

    pub fn nli_percent(&self) -> f64 {
        100.0 * self.nli as f64 / (self.math + self.nli) as f64
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.math, self.nli)
    }
}

impl FromStr for MixRatio {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MixError::InvalidRatio(s.to_string());
        let (m, n) = s.trim().split_once(':').ok_or_else(bad)?;
        let m = m.trim().parse().map_err(|_| bad())?;
        let n = n.trim().parse().map_err(|_| bad())?;
        MixRatio::new(m, n)
    }
}

/// Examples per task in one full step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepShape {
    pub sub_batch: usize,
    pub math: usize,
    pub nli: usize,
}

/// `s = B/(m+n)` for mixed ratios (exact division required), `s = B` for
/// single-task ratios.
pub fn sub_batch_size(ratio: MixRatio, batch: usize) -> Result<usize> {
    if batch == 0 {
        return Err(MixError::ZeroBatch);
    }
    if !ratio.is_mixed() {
        return Ok(batch);
    }
    let parts = ratio.math + ratio.nli;
    if !batch.is_multiple_of(parts) {
        return Err(MixError::Indivisible { batch, parts });
    }
    Ok(batch / parts)
}

pub fn step_shape(ratio: MixRatio, batch: usize) -> Result<StepShape> {
    let s = sub_batch_size(ratio, batch)?;
    Ok(match (ratio.math, ratio.nli) {
        (_, 0) => StepShape {
            sub_batch: s,
            math: batch,
            nli: 0,
        },
        (0, _) => StepShape {
            sub_batch: s,
            math: 0,
            nli: batch,
        },
        (m, n) => StepShape {
            sub_batch: s,
            math: m * s,
            nli: n * s,
        },
    })
}

/// Steps in one epoch: one full math traversal, or one NLI pass for NLI-only.
pub fn steps_per_epoch(ratio: MixRatio, batch: usize, math_size: usize, nli_size: usize) -> Result<usize> {
    let shape = step_shape(ratio, batch)?;
    if shape.math > 0 {
        if math_size == 0 {
            return Err(MixError::EmptyDataset("math"));
        }
        if shape.nli > 0 && nli_size == 0 {
            return Err(MixError::EmptyDataset("NLI"));
        }
        Ok(math_size.div_ceil(shape.math))
    } else {
        if nli_size == 0 {
            return Err(MixError::EmptyDataset("NLI"));
        }
        Ok(nli_size.div_ceil(shape.nli))
    }
}

/// `round(r·n/m)` with halves rounded up.
pub fn partial_nli_count(r: usize, ratio: MixRatio) -> usize {
    (2 * r * ratio.nli + ratio.math) / (2 * ratio.math)
}

/// Index sets of one training step. Math examples precede NLI examples in
/// the concatenated batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepComposition {
    pub math_indices: Vec<usize>,
    pub nli_indices: Vec<usize>,
    /// Position in the NLI cycle of the first NLI example of this step.
    pub nli_cursor: u64,
}

impl StepComposition {
    pub fn len(&self) -> usize {
        self.math_indices.len() + self.nli_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub ratio: MixRatio,
    pub batch_size: usize,
    pub epoch_index: usize,
    pub math_permutation_seed: u64,
    pub nli_seed: u64,
    pub nli_size: usize,
    pub nli_cursor_in: u64,
    pub nli_cursor_out: u64,
    pub steps: Vec<StepComposition>,
}

/// Endless NLI stream: pass `p` is a permutation seeded by `(seed, p)`.
struct NliCycle {
    seed: u64,
    size: usize,
    pass: Option<u64>,
    order: Vec<usize>,
}

impl NliCycle {
    fn new(seed: u64, size: usize) -> Self {
        Self {
            seed,
            size,
            pass: None,
            order: Vec::new(),
        }
    }

    fn at(&mut self, cursor: u64) -> usize {
        let pass = cursor / self.size as u64;
        if self.pass != Some(pass) {
            self.order = permutation(self.size, derive_seed(self.seed, pass));
            self.pass = Some(pass);
        }
        self.order[(cursor % self.size as u64) as usize]
    }
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Inputs to [`plan_epoch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanRequest {
    pub ratio: MixRatio,
    pub batch_size: usize,
    pub math_size: usize,
    pub nli_size: usize,
    pub global_seed: u64,
    pub epoch_index: usize,
    pub nli_cursor: u64,
}

/// Plans one epoch. Pure: equal requests give equal plans.
pub fn plan_epoch(req: PlanRequest) -> Result<EpochPlan> {
    let shape = step_shape(req.ratio, req.batch_size)?;
    let n_steps = steps_per_epoch(req.ratio, req.batch_size, req.math_size, req.nli_size)?;
    let math_seed = derive_seed(req.global_seed, MATH_STREAM ^ req.epoch_index as u64);
    let nli_seed = derive_seed(req.global_seed, NLI_STREAM);
    let mut cycle = NliCycle::new(nli_seed, req.nli_size.max(1));
    let mut cursor = req.nli_cursor;
    let mut steps = Vec::with_capacity(n_steps);

    if shape.math > 0 {
        let order = permutation(req.math_size, math_seed);
        for chunk in order.chunks(shape.math) {
            let nli_count = if chunk.len() == shape.math {
                shape.nli
            } else if shape.nli == 0 {
                0
            } else {
                partial_nli_count(chunk.len(), req.ratio)
            };
            let start = cursor;
            let nli_indices = (0..nli_count as u64).map(|i| cycle.at(start + i)).collect();
            cursor += nli_count as u64;
            steps.push(StepComposition {
                math_indices: chunk.to_vec(),
                nli_indices,
                nli_cursor: start,
            });
        }
    } else {
        let mut remaining = req.nli_size;
        while remaining > 0 {
            let take = remaining.min(shape.nli);
            let start = cursor;
            let nli_indices = (0..take as u64).map(|i| cycle.at(start + i)).collect();
            cursor += take as u64;
            remaining -= take;
            steps.push(StepComposition {
                math_indices: Vec::new(),
                nli_indices,
                nli_cursor: start,
            });
        }
    }
    debug_assert_eq!(steps.len(), n_steps);

    Ok(EpochPlan {
        ratio: req.ratio,
        batch_size: req.batch_size,
        epoch_index: req.epoch_index,
        math_permutation_seed: math_seed,
        nli_seed,
        nli_size: req.nli_size,
        nli_cursor_in: req.nli_cursor,
        nli_cursor_out: cursor,
        steps,
    })
}

impl EpochPlan {
    pub fn nli_consumed(&self) -> u64 {
        self.nli_cursor_out - self.nli_cursor_in
    }

    pub fn math_consumed(&self) -> usize {
        self.steps.iter().map(|s| s.math_indices.len()).sum()
    }

    /// One audit line per step: counts and the NLI cursor range.
    pub fn audit_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "epoch={} step={} ratio={} math={} nli={} nli_cursor={}..{}\n",
                self.epoch_index,
                i,
                self.ratio,
                s.math_indices.len(),
                s.nli_indices.len(),
                s.nli_cursor,
                s.nli_cursor + s.nli_indices.len() as u64
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MathOutOfRange { step: usize, index: usize },
    MathDuplicated { index: usize },
    MathMissing { index: usize },
    CursorGap { step: usize, expected: u64, found: u64 },
    CursorTotal { expected: u64, found: u64 },
    NliOutOfRange { step: usize, index: usize },
    NliRepeatedInPass { pass: u64, index: usize },
}

/// Verifies that every math index appears exactly once (when the ratio
/// draws math) and that NLI draws form one contiguous, pass-wise
/// non-repeating stretch of the cycle. Returns all violations found.
pub fn coverage_check(plan: &EpochPlan, math_size: usize) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if plan.ratio.math > 0 {
        let mut seen = vec![0usize; math_size];
        for (step, s) in plan.steps.iter().enumerate() {
            for &index in &s.math_indices {
                match seen.get_mut(index) {
                    Some(c) => *c += 1,
                    None => violations.push(Violation::MathOutOfRange { step, index }),
                }
            }
        }
        for (index, &count) in seen.iter().enumerate() {
            match count {
                0 => violations.push(Violation::MathMissing { index }),
                1 => {}
                _ => violations.push(Violation::MathDuplicated { index }),
            }
        }
    }

    let mut expected = plan.nli_cursor_in;
    let mut per_pass: Vec<(u64, HashSet<usize>)> = Vec::new();
    for (step, s) in plan.steps.iter().enumerate() {
        if s.nli_cursor != expected {
            violations.push(Violation::CursorGap {
                step,
                expected,
                found: s.nli_cursor,
            });
        }
        for (i, &index) in s.nli_indices.iter().enumerate() {
            if index >= plan.nli_size {
                violations.push(Violation::NliOutOfRange { step, index });
                continue;
            }
            let pass = (s.nli_cursor + i as u64) / plan.nli_size as u64;
            if per_pass.last().map(|(p, _)| *p) != Some(pass) {
                per_pass.push((pass, HashSet::new()));
            }
            let set = &mut per_pass.last_mut().unwrap().1;
            if !set.insert(index) {
                violations.push(Violation::NliRepeatedInPass { pass, index });
            }
        }
        expected = s.nli_cursor + s.nli_indices.len() as u64;
    }
    if expected != plan.nli_cursor_out {
        violations.push(Violation::CursorTotal {
            expected: plan.nli_cursor_out,
            found: expected,
        });
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
