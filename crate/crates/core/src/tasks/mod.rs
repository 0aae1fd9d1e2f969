//! Task-specific math: uniform frame sampling with keyframe encode/decode,
//! the classification and localization heads, and the fixed-fraction
//! keyframe baselines.

mod baselines;
mod heads;
mod sampling;

pub use baselines::{baseline_center, baseline_fraction, temporal_error_seconds, PnrBaselineConfig};
pub use heads::{argmax, init_oscc_head, init_pnr_head, oscc_head, pnr_head};
pub use sampling::{
    decode_pnr, encode_pnr, sample_clip, sampling_rate, uniform_sample_indices, SampledClip, SamplerConfig,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Object state change classification.
    Oscc,
    /// Point-of-no-return keyframe localization.
    Pnr,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Oscc => "oscc",
            Task::Pnr => "pnr",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscc" => Ok(Task::Oscc),
            "pnr" => Ok(Task::Pnr),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}
