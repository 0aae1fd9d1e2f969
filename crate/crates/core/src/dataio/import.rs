//! Converts challenge-style annotation JSON into the JSONL schema.

use serde::Deserialize;

use super::annotations::ClipAnnotation;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawClip {
    unique_id: String,
    parent_start_frame: i64,
    parent_end_frame: i64,
    #[serde(default)]
    parent_pnr_frame: Option<i64>,
    state_change: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFile {
    List(Vec<RawClip>),
    Wrapped { clips: Vec<RawClip> },
}

/// Keyframes are made relative to the clip start. The source format has no
/// frame rate, so the caller supplies one.
pub fn import_challenge(json: &str, fps: f64) -> Result<Vec<ClipAnnotation>> {
    let raw: RawFile = serde_json::from_str(json).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let clips = match raw {
        RawFile::List(c) | RawFile::Wrapped { clips: c } => c,
    };
    clips
        .into_iter()
        .map(|c| {
            let invalid = |msg: String| Error::Validation {
                clip_id: c.unique_id.clone(),
                msg,
            };
            let duration = c.parent_end_frame - c.parent_start_frame;
            if duration <= 0 {
                return Err(invalid(format!(
                    "end frame {} not after start frame {}",
                    c.parent_end_frame, c.parent_start_frame
                )));
            }
            let pnr_frame = match (c.state_change, c.parent_pnr_frame) {
                (true, Some(p)) => {
                    let rel = p - c.parent_start_frame;
                    if !(0..duration).contains(&rel) {
                        return Err(invalid(format!("pnr frame {p} outside the clip")));
                    }
                    Some(rel as usize)
                }
                _ => None,
            };
            let ann = ClipAnnotation {
                clip_id: c.unique_id.clone(),
                duration_frames: duration as usize,
                fps,
                state_change: c.state_change,
                pnr_frame,
            };
            ann.validate()?;
            Ok(ann)
        })
        .collect()
}
