//! Residual convolutional still/moving classifier trained from scratch on flow ROIs.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};

use crate::flowcore::FlowField;
use crate::labeling::MotionLabel;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use network::{
    backward, batch_from_rois, forward, forward_train, loss_and_gradients, loss_bce, update_running_stats,
    ForwardCache, Gradients, ModelParams, Param,
};
pub use optim::sgd_step;
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate, train, write_history_csv, EpochRecord, LabeledRoi, TrainOutcome};

/// Decision threshold on the output probability.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Network architecture. The default mirrors an 18-layer residual network with a
/// 2-channel input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub output_dim: usize,
    /// Side length of the square input ROI.
    pub input_size: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 2,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            output_dim: 1,
            input_size: 224,
        }
    }
}

impl NetConfig {
    /// One stage of width 4 on 8x8 inputs; small enough for brute-force checks.
    pub fn tiny() -> Self {
        Self {
            input_channels: 2,
            stem_channels: 4,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            stage_widths: vec![4],
            blocks_per_stage: vec![1],
            output_dim: 1,
            input_size: 8,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let fail = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if self.input_channels != 2 {
            return fail("input_channels must be 2");
        }
        if self.output_dim != 1 {
            return fail("output_dim must be 1");
        }
        if self.stem_channels == 0 {
            return fail("stem_channels must be positive");
        }
        if self.stem_kernel == 0 || self.stem_kernel.is_multiple_of(2) {
            return fail("stem_kernel must be odd");
        }
        if self.stem_stride == 0 {
            return fail("stem_stride must be positive");
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return fail("stage_widths and blocks_per_stage must be non-empty and of equal length");
        }
        if self.stage_widths.iter().chain(&self.blocks_per_stage).any(|&v| v == 0) {
            return fail("stage widths and block counts must be positive");
        }
        if self.input_size == 0 {
            return fail("input_size must be positive");
        }
        Ok(())
    }
}

/// Optimizer, schedule and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of horizontally flipping a training ROI.
    pub flip_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.01,
            weight_decay: 0.01,
            momentum: 0.9,
            step_size: 10,
            gamma: 0.5,
            epochs: 30,
            seed: 0,
            flip_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let fail = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if self.step_size == 0 {
            return fail("step_size must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail("flip_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Step schedule: `base * gamma^floor(epoch / step_size)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.step_size.max(1)) as i32;
    cfg.learning_rate * cfg.gamma.powi(steps)
}

/// Moving iff the probability is strictly greater than the threshold.
pub fn label_from_probability(p: f64) -> MotionLabel {
    if p > DECISION_THRESHOLD {
        MotionLabel::Moving
    } else {
        MotionLabel::Still
    }
}

/// Classifies a single ROI with running normalization statistics.
pub fn predict<T: Scalar>(params: &ModelParams<T>, roi: &FlowField) -> Result<(MotionLabel, f64), ClassifierError> {
    let mut out = predict_batch(params, &[roi])?;
    Ok(out.remove(0))
}

/// Classifies ROIs in inference mode. Results do not depend on how inputs are batched.
pub fn predict_batch<T: Scalar>(
    params: &ModelParams<T>,
    rois: &[&FlowField],
) -> Result<Vec<(MotionLabel, f64)>, ClassifierError> {
    let mut out = Vec::with_capacity(rois.len());
    for chunk in rois.chunks(64) {
        let x = batch_from_rois::<T>(chunk, &vec![false; chunk.len()], params.config().input_size)?;
        for p in forward(params, &x)? {
            let p = p.to_f64().unwrap_or(f64::NAN);
            out.push((label_from_probability(p), p));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_step_rule() {
        let cfg = TrainConfig::default();
        let got: Vec<f64> = [0, 9, 10, 19, 20, 25].iter().map(|&e| lr_at_epoch(&cfg, e)).collect();
        assert_eq!(got, [0.01, 0.01, 0.005, 0.005, 0.0025, 0.0025]);
        for e in 0..100 {
            assert!(lr_at_epoch(&cfg, e + 1) <= lr_at_epoch(&cfg, e));
        }
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(label_from_probability(0.5), MotionLabel::Still);
        assert_eq!(label_from_probability(0.93), MotionLabel::Moving);
        assert_eq!(label_from_probability(0.2), MotionLabel::Still);
    }

    #[test]
    fn configs_validate() {
        NetConfig::default().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        let bad = NetConfig {
            input_channels: 3,
            ..NetConfig::tiny()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
