use std::path::Path;

use serde::{Deserialize, Serialize};

use super::annotations::ClipAnnotation;
use crate::error::{Error, Result};
use crate::tasks::{temporal_error_seconds, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipResult {
    pub clip_id: String,
    pub prediction: usize,
    pub ground_truth: usize,
    /// 0/1 mistake for classification, seconds for localization.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_error_seconds: Option<f64>,
    pub per_clip: Vec<ClipResult>,
    /// Clips left out, e.g. localization clips without a keyframe.
    pub skipped: usize,
}

impl EvalReport {
    pub fn oscc(per_clip: Vec<ClipResult>) -> Result<Self> {
        if per_clip.is_empty() {
            return Err(Error::EmptyInput("no clips to score".into()));
        }
        let correct = per_clip.iter().filter(|c| c.prediction == c.ground_truth).count();
        Ok(Self {
            task: Task::Oscc,
            accuracy: Some(correct as f64 / per_clip.len() as f64),
            mean_abs_error_seconds: None,
            per_clip,
            skipped: 0,
        })
    }

    pub fn pnr(per_clip: Vec<ClipResult>, skipped: usize) -> Result<Self> {
        if per_clip.is_empty() {
            return Err(Error::EmptyInput("no clips with a keyframe to score".into()));
        }
        let mean = per_clip.iter().map(|c| c.error).sum::<f64>() / per_clip.len() as f64;
        Ok(Self {
            task: Task::Pnr,
            accuracy: None,
            mean_abs_error_seconds: Some(mean),
            per_clip,
            skipped,
        })
    }

    /// Recomputes the aggregate from `per_clip` and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let rebuilt = match self.task {
            Task::Oscc => Self::oscc(self.per_clip.clone())?,
            Task::Pnr => Self::pnr(self.per_clip.clone(), self.skipped)?,
        };
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * (1.0 + y.abs()),
            (None, None) => true,
            _ => false,
        };
        if !close(self.accuracy, rebuilt.accuracy)
            || !close(self.mean_abs_error_seconds, rebuilt.mean_abs_error_seconds)
        {
            return Err(Error::contract("report aggregate disagrees with per-clip results"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Scores a keyframe predictor over every clip with a keyframe. Clips
/// without one are counted in `skipped`.
pub fn score_pnr<F>(annotations: &[ClipAnnotation], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&ClipAnnotation) -> Result<usize>,
{
    let mut per_clip = Vec::new();
    let mut skipped = 0;
    for ann in annotations {
        let Some(truth) = ann.pnr_frame else {
            skipped += 1;
            continue;
        };
        let prediction = predict(ann)?;
        per_clip.push(ClipResult {
            clip_id: ann.clip_id.clone(),
            prediction,
            ground_truth: truth,
            error: temporal_error_seconds(prediction, truth, ann.fps),
        });
    }
    EvalReport::pnr(per_clip, skipped)
}

/// Scores a state-change classifier over every clip.
pub fn score_oscc<F>(annotations: &[ClipAnnotation], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&ClipAnnotation) -> Result<usize>,
{
    let per_clip = annotations
        .iter()
        .map(|ann| {
            let prediction = predict(ann)?;
            let truth = ann.state_change as usize;
            Ok(ClipResult {
                clip_id: ann.clip_id.clone(),
                prediction,
                ground_truth: truth,
                error: (prediction != truth) as u8 as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::oscc(per_clip)
}
