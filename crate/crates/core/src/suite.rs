//! The experiment suite: a foundation stage followed by the baseline
//! evaluation, single-task runs and the four mixing ratios, all starting
//! from the foundation checkpoint and sharing one pair of data splits.

use std::path::{Path, PathBuf};

use crate::config::{ConfigError, Precision, TrainConfig};
use crate::mixer::MixRatio;
use crate::report::{self, ReportError, FOUNDATION};
use crate::taskgen::{build_splits, DataError, DatasetSplit};
use crate::tensor::Scalar;
use crate::trainer::{self, EventHook, MetricEvent, RunPaths, TrainError};

/// Key prefix for settings that apply to the foundation stage only.
pub const FOUNDATION_PREFIX: &str = "foundation.";

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: TrainError },
    #[error("report: {0}")]
    Report(#[from] ReportError),
}

impl SuiteError {
    /// Whether the failure is attributable to the configuration rather than
    /// to the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(self, SuiteError::Config(_))
            || matches!(
                self,
                SuiteError::Stage {
                    source: TrainError::Config(_),
                    ..
                }
            )
    }
}

/// Shared settings plus the foundation stage's overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub base: TrainConfig,
    pub foundation_overrides: Vec<(String, String)>,
}

/// Foundation-stage overrides applied before any user-supplied ones.
pub const DEFAULT_FOUNDATION_OVERRIDES: &[(&str, &str)] = &[("epochs", "3"), ("lr_max", "0.001")];

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            foundation_overrides: DEFAULT_FOUNDATION_OVERRIDES
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl SuiteConfig {
    /// Routes `foundation.<key>` to the foundation overrides and everything
    /// else to the shared configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key.strip_prefix(FOUNDATION_PREFIX) {
            Some(inner) => {
                // Validate the key and value eagerly.
                TrainConfig::default().set(inner, value)?;
                self.foundation_overrides.retain(|(k, _)| k != inner);
                self.foundation_overrides.push((inner.to_string(), value.to_string()));
                Ok(())
            }
            None => self.base.set(key, value),
        }
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Per-stage configurations in execution order.
    pub fn stages(&self, out_dir: &Path) -> Result<Vec<TrainConfig>, ConfigError> {
        let foundation_ckpt = RunPaths::new(out_dir, FOUNDATION).final_ckpt;
        let stage = |name: &str, ratio: MixRatio| {
            let mut c = self.base.clone();
            c.experiment = name.to_string();
            c.ratio = ratio;
            c.init_from = Some(foundation_ckpt.clone());
            c.resume_from = None;
            c.eval_only = false;
            c
        };
        let mut foundation = stage(FOUNDATION, MixRatio::NLI_ONLY);
        foundation.init_from = None;
        for (k, v) in &self.foundation_overrides {
            foundation.set(k, v)?;
        }
        let mut baseline = stage("baseline", MixRatio::NLI_ONLY);
        baseline.eval_only = true;
        let mut stages = vec![
            foundation,
            baseline,
            stage("math-only", MixRatio::MATH_ONLY),
            stage("nli-only", MixRatio::NLI_ONLY),
        ];
        for (m, n) in [(1, 1), (3, 1), (7, 1), (15, 1)] {
            let ratio = MixRatio::new(m, n).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            stages.push(stage(&format!("mixed-{m}-{n}"), ratio));
        }
        for s in &stages {
            s.validate()
                .map_err(|e| ConfigError::Invalid(format!("stage {}: {e}", s.experiment)))?;
        }
        Ok(stages)
    }
}

/// Builds the shared splits once.
pub fn splits(config: &TrainConfig) -> Result<(DatasetSplit, DatasetSplit), DataError> {
    build_splits(config.data_seed, config.train_count, config.val_count)
}

/// Runs one stage with the precision its config requests.
pub fn run_stage(
    config: &TrainConfig,
    math: &DatasetSplit,
    nli: &DatasetSplit,
    out_dir: &Path,
    hook: Option<EventHook<'_>>,
) -> Result<(), TrainError> {
    fn go<T: Scalar>(
        c: &TrainConfig,
        m: &DatasetSplit,
        n: &DatasetSplit,
        o: &Path,
        h: Option<EventHook<'_>>,
    ) -> Result<(), TrainError> {
        trainer::run_experiment::<T>(c, m, n, o, h).map(|_| ())
    }
    match config.precision {
        Precision::F32 => go::<f32>(config, math, nli, out_dir, hook),
        Precision::F64 => go::<f64>(config, math, nli, out_dir, hook),
    }
}

/// Runs every stage in order, stopping at the first failure, then writes
/// the report into `out_dir`. `on_stage` is called before each stage.
pub fn run_suite(
    config: &SuiteConfig,
    out_dir: &Path,
    mut on_stage: impl FnMut(&TrainConfig),
    hook: &mut dyn FnMut(&MetricEvent),
) -> Result<Vec<PathBuf>, SuiteError> {
    let stages = config.stages(out_dir)?;
    let (math, nli) = splits(&config.base)?;
    for stage in &stages {
        on_stage(stage);
        run_stage(stage, &math, &nli, out_dir, Some(&mut *hook)).map_err(|source| SuiteError::Stage {
            stage: stage.experiment.clone(),
            source,
        })?;
    }
    let logs = report::load_logs(out_dir)?;
    Ok(report::write_report(&logs, out_dir)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_follow_the_suite_order() {
        let cfg = SuiteConfig::default();
        let stages = cfg.stages(Path::new("out")).unwrap();
        let names: Vec<&str> = stages.iter().map(|s| s.experiment.as_str()).collect();
        assert_eq!(
            names,
            [
                "foundation",
                "baseline",
                "math-only",
                "nli-only",
                "mixed-1-1",
                "mixed-3-1",
                "mixed-7-1",
                "mixed-15-1"
            ]
        );
        assert!(stages[0].init_from.is_none());
        assert!(stages[1].eval_only);
        let ckpt = Path::new("out").join("foundation.final.ckpt");
        assert!(stages[1..]
            .iter()
            .all(|s| s.init_from.as_deref() == Some(ckpt.as_path())));
        assert_eq!(stages[6].ratio, MixRatio::new(7, 1).unwrap());
    }

    #[test]
    fn foundation_overrides_apply_to_stage_zero_only() {
        let mut cfg = SuiteConfig::default();
        cfg.apply_text("foundation.lr_max = 0.002\nseed = 9\n").unwrap();
        let stages = cfg.stages(Path::new("o")).unwrap();
        assert_eq!(stages[0].lr_max, 0.002);
        assert!(stages[1..].iter().all(|s| s.lr_max == TrainConfig::default().lr_max));
        assert!(stages.iter().all(|s| s.seed == 9));
        assert!(cfg.set("foundation.bogus", "1").is_err());
    }

    #[test]
    fn divisibility_is_checked_before_training() {
        let mut cfg = SuiteConfig::default();
        cfg.set("batch_size", "60").unwrap();
        let err = cfg.stages(Path::new("o")).unwrap_err().to_string();
        assert!(err.contains("mixed-7-1"), "{err}");
    }
}
