//! Adam with bias correction, warmup + cosine learning-rate schedule and
//! global-norm gradient clipping.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use thiserror::Error;

use crate::model::{Grads, ModelParams};
use crate::tensor::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite update for parameter {0}")]
    NonFiniteUpdate(String),
    #[error("shape mismatch for parameter {0}")]
    ShapeMismatch(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl ScheduleConfig {
    pub fn new(lr_max: f64, total_steps: usize, warmup_fraction: f64) -> Result<Self> {
        let s = Self {
            lr_max,
            total_steps,
            warmup_fraction,
        };
        if !(lr_max > 0.0 && lr_max.is_finite()) {
            return Err(OptimError::InvalidSchedule(format!("lr_max {lr_max}")));
        }
        if total_steps == 0 {
            return Err(OptimError::InvalidSchedule("total_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(OptimError::InvalidSchedule(format!(
                "warmup_fraction {warmup_fraction} outside [0, 1)"
            )));
        }
        if s.warmup_steps() >= total_steps {
            return Err(OptimError::InvalidSchedule(format!(
                "{} warmup steps leave no decay phase in {total_steps} steps",
                s.warmup_steps()
            )));
        }
        Ok(s)
    }

    /// `round(warmup_fraction · T)`.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    /// Schedule evaluated at a real-valued step; [`ScheduleConfig::lr_at`]
    /// is this function restricted to integers.
    pub fn lr_at_continuous(&self, t: f64) -> f64 {
        let tw = self.warmup_steps() as f64;
        if t < tw {
            return self.lr_max * (t + 1.0) / tw;
        }
        let span = (self.total_steps as f64 - 1.0 - tw).max(1.0);
        let p = ((t - tw) / span).min(1.0);
        self.lr_max * 0.5 * (1.0 + (PI * p).cos())
    }

    /// Linear warmup from `lr_max/T_w` to `lr_max` over `T_w` steps, then
    /// cosine decay reaching exactly 0 at step `T - 1`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(OptimError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        Ok(self.lr_at_continuous(step as f64))
    }

    /// Real-valued step at which the cosine phase is half done.
    pub fn cosine_midpoint(&self) -> f64 {
        let tw = self.warmup_steps() as f64;
        tw + (self.total_steps as f64 - 1.0 - tw).max(1.0) / 2.0
    }
}

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the applied factor (1 when no clipping happened).
pub fn clip_global_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(OptimError::InvalidArgument(format!("max_norm {max_norm}")));
    }
    let mut sq = 0.0f64;
    for (name, g) in grads.iter() {
        for &v in g {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(OptimError::NonFiniteGradient(name.clone()));
            }
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    let s = T::from_f64_lossy(scale);
    for g in grads.values_mut() {
        g.iter_mut().for_each(|v| *v *= s);
    }
    Ok(scale)
}

pub fn global_norm<T: Scalar>(grads: &Grads<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ModelParams<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let moments = params
            .tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Moments {
                        m: vec![T::zero(); t.len()],
                        v: vec![T::zero(); t.len()],
                    },
                )
            })
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments,
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(OptimError::InvalidArgument(format!("lr {lr}")));
        }
        if grads.len() != params.tensors.len() {
            return Err(OptimError::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.tensors.len()
            )));
        }
        for (name, t) in &params.tensors {
            let ok = grads.get(name).is_some_and(|g| g.len() == t.len())
                && self.moments.get(name).is_some_and(|m| m.m.len() == t.len());
            if !ok {
                return Err(OptimError::ShapeMismatch(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let eps = T::from_f64_lossy(self.eps);
        let lr = T::from_f64_lossy(lr);
        for (name, tensor) in params.tensors.iter_mut() {
            let g = &grads[name];
            let mom = self.moments.get_mut(name).expect("checked above");
            for (((theta, &gi), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !tensor.is_finite() {
                return Err(OptimError::NonFiniteUpdate(name.clone()));
            }
        }
        Ok(())
    }
}
