use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndcore::{init_linear, Init, ParamStore, Session, Var};
use crate::swin3d::FeatureMap;

/// Global average pool over `(T, H, W)` then a linear map to two logits.
/// Class 1 means "state changed". Parameters: `head.oscc`.
pub fn oscc_head(s: &mut Session, x: FeatureMap) -> Result<Var> {
    let d = x.dims;
    let flat = s.tape.reshape(x.var, &[d.b, d.tokens(), d.c])?;
    let pooled = s.tape.mean_axis(flat, 1)?;
    s.linear(pooled, "head.oscc", true)
}

/// Spatial pool per temporal slot, a linear score per slot, then
/// nearest-repeat resampling to `input_size` logits. Parameters: `head.pnr`.
pub fn pnr_head(s: &mut Session, x: FeatureMap, input_size: usize) -> Result<Var> {
    let d = x.dims;
    if !(input_size % d.t == 0 || d.t % input_size == 0) {
        return Err(Error::contract(format!(
            "temporal slots {} and input size {input_size} do not divide each other",
            d.t
        )));
    }
    let flat = s.tape.reshape(x.var, &[d.b, d.t, d.h * d.w, d.c])?;
    let pooled = s.tape.mean_axis(flat, 2)?;
    let scores = s.linear(pooled, "head.pnr", true)?;
    let mut index = Vec::with_capacity(d.b * input_size);
    for b in 0..d.b {
        index.extend((0..input_size).map(|j| b * d.t + j * d.t / input_size));
    }
    s.tape.gather(scores, index, &[d.b, input_size])
}

pub fn init_oscc_head(store: &mut ParamStore, dim: usize, rng: &mut ChaCha8Rng) {
    init_linear(store, "head.oscc", dim, 2, true, Init::TruncNormal(0.02), rng);
}

pub fn init_pnr_head(store: &mut ParamStore, dim: usize, rng: &mut ChaCha8Rng) {
    init_linear(store, "head.pnr", dim, 1, true, Init::TruncNormal(0.02), rng);
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
