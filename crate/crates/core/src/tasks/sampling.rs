use crate::error::{Error, Result};
use crate::ndcore::Array;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Frames fed to the model.
    pub input_size: usize,
    /// Frames per second, for converting frame errors to seconds.
    pub fps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            input_size: 16,
            fps: 30.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 2 {
            return Err(Error::Config(format!("input_size must be >= 2, got {}", self.input_size)));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// A clip reduced to `input_size` uniformly spaced frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledClip {
    /// `(input_size, H, W, C)`.
    pub frames: Array,
    /// `duration_frames / input_size`.
    pub rate: f64,
    pub duration_frames: usize,
    pub encoded_pnr: Option<usize>,
}

/// Frames of the clip represented by one model input slot.
pub fn sampling_rate(duration_frames: usize, input_size: usize) -> f64 {
    duration_frames as f64 / input_size as f64
}

fn check_clip(duration_frames: usize, input_size: usize) -> Result<()> {
    if input_size == 0 || duration_frames < input_size {
        return Err(Error::contract(format!(
            "clip of {duration_frames} frames is shorter than the input size {input_size}"
        )));
    }
    Ok(())
}

/// Bin-center index `floor((k + 1/2) · rate)` for `k` in `0..input_size`,
/// evaluated in exact integer arithmetic.
fn bin_center(bin: usize, duration_frames: usize, input_size: usize) -> usize {
    ((2 * bin + 1) * duration_frames) / (2 * input_size)
}

pub fn uniform_sample_indices(duration_frames: usize, input_size: usize) -> Result<Vec<usize>> {
    check_clip(duration_frames, input_size)?;
    Ok((0..input_size)
        .map(|k| bin_center(k, duration_frames, input_size))
        .collect())
}

/// Input slot holding `frame`: `clamp(floor(frame / rate), 0, input_size - 1)`.
pub fn encode_pnr(frame: usize, duration_frames: usize, input_size: usize) -> Result<usize> {
    check_clip(duration_frames, input_size)?;
    if frame >= duration_frames {
        return Err(Error::contract(format!(
            "frame {frame} outside a clip of {duration_frames} frames"
        )));
    }
    Ok(((frame * input_size) / duration_frames).min(input_size - 1))
}

/// The sampled frame that represents `bin`.
pub fn decode_pnr(bin: usize, duration_frames: usize, input_size: usize) -> Result<usize> {
    check_clip(duration_frames, input_size)?;
    if bin >= input_size {
        return Err(Error::contract(format!("bin {bin} outside 0..{input_size}")));
    }
    Ok(bin_center(bin, duration_frames, input_size))
}

/// Uniformly samples a `(D, H, W, C)` video and encodes its keyframe.
pub fn sample_clip(video: &Array, pnr_frame: Option<usize>, cfg: &SamplerConfig) -> Result<SampledClip> {
    let shape = video.shape();
    if shape.len() != 4 {
        return Err(Error::contract(format!("video must be (D, H, W, C), got {shape:?}")));
    }
    let duration = shape[0];
    let indices = uniform_sample_indices(duration, cfg.input_size)?;
    let frame_len: usize = shape[1..].iter().product();
    let mut gather = Vec::with_capacity(indices.len() * frame_len);
    for &f in &indices {
        gather.extend(f * frame_len..(f + 1) * frame_len);
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = cfg.input_size;
    Ok(SampledClip {
        frames: video.gather(&gather, &out_shape),
        rate: sampling_rate(duration, cfg.input_size),
        duration_frames: duration,
        encoded_pnr: pnr_frame
            .map(|f| encode_pnr(f, duration, cfg.input_size))
            .transpose()?,
    })
}
