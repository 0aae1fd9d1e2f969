use std::fmt;
use std::str::FromStr;

use super::annotations::ClipAnnotation;
use crate::error::{Error, Result};
use crate::ndcore::Array;

/// How the normalized keyframe position of positive clips is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PnrDistribution {
    Uniform,
    /// Symmetric triangle peaked at `mode`, on `[mode - r, mode + r]` with
    /// `r = min(mode, 1 - mode)`.
    Triangular { mode: f64 },
    Fixed(f64),
}

impl PnrDistribution {
    /// Inverse CDF on `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            PnrDistribution::Uniform => u,
            PnrDistribution::Fixed(p) => p,
            PnrDistribution::Triangular { mode } => {
                let r = mode.min(1.0 - mode);
                if u < 0.5 {
                    mode - r + r * (2.0 * u).sqrt()
                } else {
                    mode + r - r * (2.0 * (1.0 - u)).sqrt()
                }
            }
        }
    }
}

impl fmt::Display for PnrDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnrDistribution::Uniform => write!(f, "uniform"),
            PnrDistribution::Triangular { mode } => write!(f, "triangular:{mode}"),
            PnrDistribution::Fixed(p) => write!(f, "fixed:{p}"),
        }
    }
}

impl FromStr for PnrDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_frac = |v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad fraction {v:?} in pnr distribution")))?;
            if !(0.0..1.0).contains(&x) {
                return Err(Error::Config(format!("pnr fraction {x} outside [0, 1)")));
            }
            Ok(x)
        };
        match s.split_once(':') {
            None if s == "uniform" => Ok(PnrDistribution::Uniform),
            Some(("triangular", m)) => Ok(PnrDistribution::Triangular { mode: parse_frac(m)? }),
            Some(("fixed", p)) => Ok(PnrDistribution::Fixed(parse_frac(p)?)),
            _ => Err(Error::Config(format!("unknown pnr distribution {s:?}"))),
        }
    }
}

/// Recipe for a synthetic dataset with planted state changes.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_clips: usize,
    pub positive_ratio: f64,
    pub duration_frames: usize,
    pub fps: f64,
    pub pnr_distribution: PnrDistribution,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_clips: 64,
            positive_ratio: 0.5,
            duration_frames: 240,
            fps: 30.0,
            pnr_distribution: PnrDistribution::Triangular { mode: 0.45 },
            height: 16,
            width: 16,
            channels: 1,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.positive_ratio) {
            return Err(Error::Config(format!("positive_ratio {} outside [0, 1]", self.positive_ratio)));
        }
        if self.duration_frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("clip dimensions must be >= 1".into()));
        }
        if !(self.fps > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("fps must be positive and noise_sigma non-negative".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless generator: every draw is a pure function of `(key, counter)`,
/// so any subset of a clip can be rendered independently and in parallel.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: splitmix64(seed ^ splitmix64(stream)),
        }
    }

    pub fn bits(&self, counter: u64) -> u64 {
        splitmix64(self.key ^ splitmix64(counter.wrapping_add(0x632B_E59B_D9B4_E019)))
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller over two consecutive counters.
    pub fn gaussian(&self, counter: u64) -> f64 {
        let u1 = 1.0 - self.uniform(2 * counter);
        let u2 = self.uniform(2 * counter + 1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

const DRAW_STATE: u64 = 0;
const DRAW_PNR: u64 = 1;
const NOISE_BASE: u64 = 16;

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:06}")
}

/// Annotation of clip `index`, without rendering it.
pub fn annotate_clip(spec: &SynthSpec, index: usize) -> Result<ClipAnnotation> {
    if index >= spec.num_clips {
        return Err(Error::contract(format!(
            "clip index {index} outside 0..{}",
            spec.num_clips
        )));
    }
    spec.validate()?;
    let rng = CounterRng::new(spec.seed, index as u64);
    let state_change = rng.uniform(DRAW_STATE) < spec.positive_ratio;
    let pnr_frame = state_change.then(|| {
        let p = spec.pnr_distribution.quantile(rng.uniform(DRAW_PNR));
        ((p * spec.duration_frames as f64).round() as usize).min(spec.duration_frames - 1)
    });
    Ok(ClipAnnotation {
        clip_id: clip_id(index),
        duration_frames: spec.duration_frames,
        fps: spec.fps,
        state_change,
        pnr_frame,
    })
}

struct Block {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Block {
    fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

fn patterns(spec: &SynthSpec) -> (Block, Block) {
    let height = (spec.height / 4).max(1);
    let width = (spec.width / 4).max(1);
    let before = Block {
        top: spec.height / 4,
        left: spec.width / 4,
        height,
        width,
    };
    let after = Block {
        top: (spec.height / 2).min(spec.height - height),
        left: (spec.width / 2).min(spec.width - width),
        height,
        width,
    };
    (before, after)
}

/// Renders the listed frames of clip `index` as `(frames.len(), H, W, C)`.
/// Frames before the keyframe show a bright block at one position; from the
/// keyframe on the block sits elsewhere. Negative clips never change.
pub fn render_frames(spec: &SynthSpec, index: usize, frames: &[usize]) -> Result<Array> {
    let ann = annotate_clip(spec, index)?;
    if let Some(&f) = frames.iter().find(|&&f| f >= spec.duration_frames) {
        return Err(Error::contract(format!("frame {f} outside clip of {} frames", spec.duration_frames)));
    }
    let rng = CounterRng::new(spec.seed, index as u64);
    let (before, after) = patterns(spec);
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let frame_len = h * w * c;
    let mut data = Vec::with_capacity(frames.len() * frame_len);
    for &f in frames {
        let changed = ann.pnr_frame.is_some_and(|p| f >= p);
        let block = if changed { &after } else { &before };
        for y in 0..h {
            for x in 0..w {
                let base = if block.contains(y, x) { 1.0 } else { 0.0 };
                for ch in 0..c {
                    let element = (f * frame_len + (y * w + x) * c + ch) as u64;
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * rng.gaussian(NOISE_BASE + element)
                    } else {
                        0.0
                    };
                    data.push(base + noise);
                }
            }
        }
    }
    Array::new(vec![frames.len(), h, w, c], data)
}

/// The full `(D, H, W, C)` clip and its annotation.
pub fn generate_clip(spec: &SynthSpec, index: usize) -> Result<(Array, ClipAnnotation)> {
    let frames: Vec<usize> = (0..spec.duration_frames).collect();
    Ok((render_frames(spec, index, &frames)?, annotate_clip(spec, index)?))
}
