use crate::error::{Error, Result};

/// Fixed-fraction keyframe predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnrBaselineConfig {
    pub fraction: f64,
}

impl Default for PnrBaselineConfig {
    fn default() -> Self {
        Self { fraction: 0.45 }
    }
}

impl PnrBaselineConfig {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("baseline fraction must lie in (0, 1), got {fraction}")));
        }
        Ok(Self { fraction })
    }
}

/// `round(fraction · duration)`, clamped into the clip.
pub fn baseline_fraction(duration_frames: usize, cfg: &PnrBaselineConfig) -> usize {
    let d = duration_frames.max(1);
    ((cfg.fraction * d as f64).round() as usize).min(d - 1)
}

pub fn baseline_center(duration_frames: usize) -> usize {
    baseline_fraction(duration_frames, &PnrBaselineConfig { fraction: 0.5 })
}

/// Absolute localization error in seconds.
pub fn temporal_error_seconds(pred_frame: usize, gt_frame: usize, fps: f64) -> f64 {
    pred_frame.abs_diff(gt_frame) as f64 / fps
}
