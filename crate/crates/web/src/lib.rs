//! Browser demo over the core crate. Each operation has a plain Rust form
//! (tested natively) and a `#[wasm_bindgen]` wrapper returning JSON.

use serde::Serialize;
use swinvid::dataio::{annotate_clip, frequency_analysis, PnrDistribution, SynthSpec};
use swinvid::swin3d::window::{effective_window, padded_extent, window_mask};
use swinvid::tasks::{
    baseline_center, baseline_fraction, decode_pnr, encode_pnr, sampling_rate, temporal_error_seconds,
    PnrBaselineConfig,
};
use swinvid::{Error, Result};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct MaskView {
    pub window: [usize; 3],
    pub shift: [usize; 3],
    pub padded: [usize; 3],
    pub num_windows: usize,
    pub tokens: usize,
    /// Row-major `tokens x tokens`, true where the query may attend the key.
    pub allowed: Vec<bool>,
    /// Band group of each token in the window; padded tokens get `None`.
    pub groups: Vec<Option<usize>>,
}

/// Attention mask of one window of a shifted (or plain) window layout.
pub fn mask_view(spatial: [usize; 3], window: [usize; 3], shifted: bool, window_index: usize) -> Result<MaskView> {
    if spatial.contains(&0) || window.contains(&0) {
        return Err(Error::Config("sizes must be positive".into()));
    }
    let shift = if shifted { window.map(|w| w / 2) } else { [0; 3] };
    let (window, shift) = effective_window(spatial, window, shift);
    let padded = padded_extent(spatial, window);
    let mask = window_mask(padded, spatial, window, shift)?;
    let (num_windows, l) = (mask.shape()[0], mask.shape()[1]);
    if window_index >= num_windows {
        return Err(Error::Config(format!("window {window_index} outside 0..{num_windows}")));
    }
    let allowed: Vec<bool> = mask.data()[window_index * l * l..(window_index + 1) * l * l]
        .iter()
        .map(|&v| v == 0.0)
        .collect();
    // a token is real iff something may attend to it; its group is the first
    // real token it may attend to
    let real: Vec<bool> = (0..l).map(|k| (0..l).any(|q| allowed[q * l + k])).collect();
    let groups = (0..l)
        .map(|q| real[q].then(|| (0..l).find(|&k| allowed[q * l + k]).unwrap_or(q)))
        .collect();
    Ok(MaskView {
        window,
        shift,
        padded,
        num_windows,
        tokens: l,
        allowed,
        groups,
    })
}

#[derive(Debug, Serialize)]
pub struct CodecView {
    pub rate: f64,
    pub bin: usize,
    pub decoded: usize,
    pub codec_error_frames: usize,
    pub fraction_frame: usize,
    pub fraction_error_seconds: f64,
    pub center_frame: usize,
    pub center_error_seconds: f64,
}

/// Encodes a keyframe to its input slot, decodes it back and scores the two
/// fixed-position baselines against it.
pub fn codec_view(duration_frames: usize, input_size: usize, fps: f64, frame: usize, fraction: f64) -> Result<CodecView> {
    if !(fps > 0.0) || !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config("fps must be positive and fraction in [0, 1)".into()));
    }
    let bin = encode_pnr(frame, duration_frames, input_size)?;
    let decoded = decode_pnr(bin, duration_frames, input_size)?;
    let fraction_frame = baseline_fraction(duration_frames, &PnrBaselineConfig { fraction });
    let center_frame = baseline_center(duration_frames);
    Ok(CodecView {
        rate: sampling_rate(duration_frames, input_size),
        bin,
        decoded,
        codec_error_frames: decoded.abs_diff(frame),
        fraction_frame,
        fraction_error_seconds: temporal_error_seconds(fraction_frame, frame, fps),
        center_frame,
        center_error_seconds: temporal_error_seconds(center_frame, frame, fps),
    })
}

#[derive(Debug, Serialize)]
pub struct HistogramView {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mode_midpoint: f64,
    pub mean: f64,
    pub fraction_mae_seconds: f64,
    pub center_mae_seconds: f64,
}

/// Keyframe-position histogram of synthetic annotations, with the mean error
/// of the fraction and center baselines on the same clips.
pub fn histogram_view(num_clips: usize, distribution: &str, bin_width: f64, fraction: f64, seed: u64) -> Result<HistogramView> {
    let spec = SynthSpec {
        num_clips,
        positive_ratio: 1.0,
        pnr_distribution: distribution.parse::<PnrDistribution>()?,
        seed,
        ..Default::default()
    };
    let anns = (0..num_clips).map(|i| annotate_clip(&spec, i)).collect::<Result<Vec<_>>>()?;
    let analysis = frequency_analysis(&anns, bin_width)?;
    let cfg = PnrBaselineConfig { fraction };
    let (mut frac, mut center) = (0.0, 0.0);
    for a in &anns {
        let gt = a.pnr_frame.expect("positive clip");
        frac += temporal_error_seconds(baseline_fraction(a.duration_frames, &cfg), gt, a.fps);
        center += temporal_error_seconds(baseline_center(a.duration_frames), gt, a.fps);
    }
    let n = anns.len() as f64;
    Ok(HistogramView {
        bin_edges: analysis.histogram.bin_edges,
        counts: analysis.histogram.counts,
        mode_midpoint: analysis.mode_midpoint,
        mean: analysis.mean,
        fraction_mae_seconds: frac / n,
        center_mae_seconds: center / n,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn mask_json(t: usize, h: usize, w: usize, wt: usize, wh: usize, ww: usize, shifted: bool, window_index: usize) -> std::result::Result<String, JsValue> {
    to_js(mask_view([t, h, w], [wt, wh, ww], shifted, window_index))
}

#[wasm_bindgen]
pub fn codec_json(duration_frames: usize, input_size: usize, fps: f64, frame: usize, fraction: f64) -> std::result::Result<String, JsValue> {
    to_js(codec_view(duration_frames, input_size, fps, frame, fraction))
}

#[wasm_bindgen]
pub fn histogram_json(num_clips: usize, distribution: &str, bin_width: f64, fraction: f64, seed: u64) -> std::result::Result<String, JsValue> {
    to_js(histogram_view(num_clips, distribution, bin_width, fraction, seed))
}
