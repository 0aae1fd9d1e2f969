//! Index maps for 3D window partitioning, cyclic shifts, padding and the
//! shifted-window attention mask. Every regrouping is a gather, so the same
//! maps drive both plain [`Array`] transforms and recorded tape ops.

use crate::error::{Error, Result};
use crate::ndcore::{Array, ZERO_INDEX};

/// Additive score for token pairs that may not attend to each other.
pub const MASK_VALUE: f64 = -1e9;

/// Shape of a `(B, T, H, W, C)` feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub b: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(b: usize, t: usize, h: usize, w: usize, c: usize) -> Self {
        Self { b, t, h, w, c }
    }

    pub fn from_shape(shape: &[usize]) -> Result<Self> {
        match *shape {
            [b, t, h, w, c] => Ok(Self { b, t, h, w, c }),
            _ => Err(Error::contract(format!(
                "expected a (B, T, H, W, C) tensor, got {shape:?}"
            ))),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.b, self.t, self.h, self.w, self.c]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn with_spatial(&self, s: [usize; 3]) -> Self {
        Self {
            t: s[0],
            h: s[1],
            w: s[2],
            ..*self
        }
    }

    pub fn tokens(&self) -> usize {
        self.t * self.h * self.w
    }

    fn offset(&self, b: usize, p: [usize; 3]) -> usize {
        (((b * self.t + p[0]) * self.h + p[1]) * self.w + p[2]) * self.c
    }
}

/// Window and shift actually used on a feature volume: an axis no larger
/// than its window gets a single window spanning it and no shift.
pub fn effective_window(spatial: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let mut w = window;
    let mut s = shift;
    for axis in 0..3 {
        if spatial[axis] <= window[axis] {
            w[axis] = spatial[axis];
            s[axis] = 0;
        }
    }
    (w, s)
}

/// Smallest multiple of `window` per axis that covers `spatial`.
pub fn padded_extent(spatial: [usize; 3], window: [usize; 3]) -> [usize; 3] {
    let mut out = [0; 3];
    for axis in 0..3 {
        out[axis] = spatial[axis].div_ceil(window[axis]) * window[axis];
    }
    out
}

pub fn window_volume(window: [usize; 3]) -> usize {
    window.iter().product()
}

pub fn num_windows(spatial: [usize; 3], window: [usize; 3]) -> usize {
    (0..3).map(|a| spatial[a] / window[a]).product()
}

fn for_each_position(extent: [usize; 3], mut f: impl FnMut([usize; 3])) {
    for t in 0..extent[0] {
        for h in 0..extent[1] {
            for w in 0..extent[2] {
                f([t, h, w]);
            }
        }
    }
}

/// Right-pads (with zeros) or crops the spatial axes to `target`.
pub fn resize_index(dims: Dims, target: [usize; 3]) -> (Vec<usize>, Dims) {
    let out = dims.with_spatial(target);
    let mut index = Vec::with_capacity(out.b * out.tokens() * out.c);
    for b in 0..dims.b {
        for_each_position(target, |p| {
            let inside = (0..3).all(|a| p[a] < dims.spatial()[a]);
            let base = if inside { dims.offset(b, p) } else { ZERO_INDEX };
            for c in 0..dims.c {
                index.push(if inside { base + c } else { ZERO_INDEX });
            }
        });
    }
    (index, out)
}

/// Circular roll of the `(T, H, W)` axes by `-shift` (or `+shift` when
/// `inverse`): `out[p] = in[(p + shift) mod D]`.
pub fn roll_index(dims: Dims, shift: [usize; 3], inverse: bool) -> Vec<usize> {
    let spatial = dims.spatial();
    let mut index = Vec::with_capacity(dims.b * dims.tokens() * dims.c);
    for b in 0..dims.b {
        for_each_position(spatial, |p| {
            let mut src = [0; 3];
            for a in 0..3 {
                let s = shift[a] % spatial[a];
                src[a] = if inverse {
                    (p[a] + spatial[a] - s) % spatial[a]
                } else {
                    (p[a] + s) % spatial[a]
                };
            }
            let base = dims.offset(b, src);
            index.extend(base..base + dims.c);
        });
    }
    index
}

fn check_divisible(dims: Dims, window: [usize; 3]) -> Result<()> {
    let spatial = dims.spatial();
    if (0..3).any(|a| window[a] == 0 || spatial[a] % window[a] != 0) {
        return Err(Error::contract(format!(
            "feature volume {spatial:?} is not divisible by window {window:?}"
        )));
    }
    Ok(())
}

/// Gather map from `(B, T, H, W, C)` to `(B·nW, L, C)`. Windows are ordered
/// batch-major then `(t, h, w)` row-major; tokens inside a window likewise.
pub fn partition_index(dims: Dims, window: [usize; 3]) -> Result<(Vec<usize>, Vec<usize>)> {
    check_divisible(dims, window)?;
    let grid = [dims.t / window[0], dims.h / window[1], dims.w / window[2]];
    let nw = grid.iter().product::<usize>();
    let l = window_volume(window);
    let mut index = Vec::with_capacity(dims.b * dims.tokens() * dims.c);
    for b in 0..dims.b {
        for_each_position(grid, |g| {
            for_each_position(window, |o| {
                let p = [g[0] * window[0] + o[0], g[1] * window[1] + o[1], g[2] * window[2] + o[2]];
                let base = dims.offset(b, p);
                index.extend(base..base + dims.c);
            });
        });
    }
    Ok((index, vec![dims.b * nw, l, dims.c]))
}

/// Inverse of [`partition_index`].
pub fn reverse_index(dims: Dims, window: [usize; 3]) -> Result<Vec<usize>> {
    let (forward, _) = partition_index(dims, window)?;
    let mut index = vec![0; forward.len()];
    for (i, &src) in forward.iter().enumerate() {
        index[src] = i;
    }
    Ok(index)
}

pub fn window_partition(x: &Array, window: [usize; 3]) -> Result<Array> {
    let dims = Dims::from_shape(x.shape())?;
    let (index, shape) = partition_index(dims, window)?;
    Ok(x.gather(&index, &shape))
}

pub fn window_reverse(windows: &Array, dims: Dims, window: [usize; 3]) -> Result<Array> {
    let expected = [dims.b * num_windows(dims.spatial(), window), window_volume(window), dims.c];
    if windows.shape() != expected {
        return Err(Error::contract(format!(
            "window tensor {:?} inconsistent with dims {dims:?} and window {window:?}",
            windows.shape()
        )));
    }
    let index = reverse_index(dims, window)?;
    Ok(windows.gather(&index, &dims.shape()))
}

pub fn cyclic_shift(x: &Array, shift: [usize; 3], inverse: bool) -> Result<Array> {
    let dims = Dims::from_shape(x.shape())?;
    Ok(x.gather(&roll_index(dims, shift, inverse), x.shape()))
}

/// Band label of a rolled coordinate: 0 for never-wrapped positions far
/// from the end, 1 for the tail of the last window, 2 for wrapped positions.
fn band(pos: usize, extent: usize, window: usize, shift: usize) -> u8 {
    if shift == 0 || pos < extent - window {
        0
    } else if pos < extent - shift {
        1
    } else {
        2
    }
}

struct TokenInfo {
    region: [u8; 3],
    valid: bool,
}

fn window_tokens(padded: [usize; 3], valid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<Vec<([usize; 3], TokenInfo)>> {
    let grid = [padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]];
    let mut windows = Vec::new();
    for_each_position(grid, |g| {
        let mut tokens = Vec::with_capacity(window_volume(window));
        for_each_position(window, |o| {
            let mut region = [0u8; 3];
            let mut ok = true;
            for a in 0..3 {
                let p = g[a] * window[a] + o[a];
                region[a] = band(p, padded[a], window[a], shift[a]);
                let original = (p + shift[a]) % padded[a];
                ok &= original < valid[a];
            }
            tokens.push((o, TokenInfo { region, valid: ok }));
        });
        windows.push(tokens);
    });
    windows
}

/// Additive mask `(nW, L, L)` for attention over a rolled volume: zero where
/// query and key come from the same pre-roll band, [`MASK_VALUE`] otherwise.
pub fn attention_mask(spatial: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<Array> {
    window_mask(spatial, spatial, window, shift)
}

/// [`attention_mask`] that additionally hides padded keys. `valid` is the
/// unpadded extent; `padded` must be a window multiple.
pub fn window_mask(padded: [usize; 3], valid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<Array> {
    if (0..3).any(|a| window[a] == 0 || padded[a] % window[a] != 0 || shift[a] >= window[a]) {
        return Err(Error::contract(format!(
            "mask needs window-divisible extent {padded:?}, window {window:?}, shift {shift:?} < window"
        )));
    }
    let l = window_volume(window);
    let windows = window_tokens(padded, valid, window, shift);
    let mut data = Vec::with_capacity(windows.len() * l * l);
    for tokens in &windows {
        for (_, q) in tokens {
            for (_, k) in tokens {
                let allowed = q.region == k.region && k.valid;
                data.push(if allowed { 0.0 } else { MASK_VALUE });
            }
        }
    }
    Array::new(vec![windows.len(), l, l], data)
}

/// Whether the mask for this configuration would be all zeros.
pub fn mask_is_trivial(padded: [usize; 3], valid: [usize; 3], shift: [usize; 3]) -> bool {
    shift == [0; 3] && padded == valid
}

/// Per-axis closed sampling box `[lo, hi]` in window-local coordinates for
/// every `(window, token)`: the tokens sharing the query's band and holding
/// real (unpadded) data. Indexed `window * L + token`.
pub fn sample_boxes(padded: [usize; 3], valid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<[[f64; 2]; 3]> {
    let windows = window_tokens(padded, valid, window, shift);
    let mut boxes = Vec::with_capacity(windows.len() * window_volume(window));
    for tokens in &windows {
        for (qpos, q) in tokens {
            let mut bx = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
            for (kpos, k) in tokens {
                if k.region == q.region && k.valid {
                    for a in 0..3 {
                        bx[a][0] = bx[a][0].min(kpos[a] as f64);
                        bx[a][1] = bx[a][1].max(kpos[a] as f64);
                    }
                }
            }
            for a in 0..3 {
                if bx[a][0] > bx[a][1] {
                    bx[a] = [qpos[a] as f64; 2];
                }
            }
            boxes.push(bx);
        }
    }
    boxes
}
