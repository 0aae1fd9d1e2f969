//! Deformable window attention: every query attends to `N` sampled points
//! inside its window instead of every token of the window.
//!
//! Per query and head, a linear head predicts `N` continuous `(dt, dh, dw)`
//! offsets from the query's own position and a second head predicts `N`
//! logits that are softmax-normalized into mixing weights. Values are read
//! with trilinear interpolation from the window's value grid.

mod attention;
pub mod flops;
mod plan;

pub use attention::{attend_with_plan, deformable_window_attention, reference_grid};
pub use flops::{count_flops, FlopCount, KernelKind};
pub use plan::{predict_sample_plan, trilinear_sample, SamplePlan, SamplePlanVars};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformConfig {
    /// Sampled points per query and head.
    pub n_points: usize,
    /// Multiplier on predicted offsets, in cell units.
    pub offset_scale: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            n_points: 4,
            offset_scale: 1.0,
        }
    }
}

impl DeformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::Config("n_points must be >= 1".into()));
        }
        if !self.offset_scale.is_finite() {
            return Err(Error::Config("offset_scale must be finite".into()));
        }
        Ok(())
    }
}
