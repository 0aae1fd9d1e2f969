use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metadata of one clip. One JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipAnnotation {
    pub clip_id: String,
    pub duration_frames: usize,
    pub fps: f64,
    pub state_change: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pnr_frame: Option<usize>,
}

impl ClipAnnotation {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Validation {
                clip_id: self.clip_id.clone(),
                msg,
            })
        };
        if self.duration_frames == 0 {
            return fail("duration_frames must be positive".into());
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        match (self.state_change, self.pnr_frame) {
            (true, None) => fail("state change without pnr_frame".into()),
            (false, Some(_)) => fail("pnr_frame on a clip without state change".into()),
            (_, Some(p)) if p >= self.duration_frames => {
                fail(format!("pnr_frame {p} outside 0..{}", self.duration_frames))
            }
            _ => Ok(()),
        }
    }

    /// Keyframe position as a fraction of the clip duration.
    pub fn normalized_pnr(&self) -> Option<f64> {
        self.pnr_frame.map(|p| p as f64 / self.duration_frames as f64)
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<ClipAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ann: ClipAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

pub fn format_annotations(annotations: &[ClipAnnotation]) -> String {
    let mut out = String::new();
    for ann in annotations {
        out.push_str(&serde_json::to_string(ann).expect("annotation serializes"));
        out.push('\n');
    }
    out
}

pub fn read_annotations(path: &Path) -> Result<Vec<ClipAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn write_annotations(path: &Path, annotations: &[ClipAnnotation]) -> Result<()> {
    for ann in annotations {
        ann.validate()?;
    }
    std::fs::write(path, format_annotations(annotations)).map_err(|e| Error::io(path, e))
}
