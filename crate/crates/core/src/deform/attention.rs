use super::plan::{predict_sample_plan, SamplePlanVars};
use super::DeformConfig;
use crate::error::{Error, Result};
use crate::ndcore::{Array, Session, Var};
use crate::swin3d::attention::WindowGeometry;
use crate::swin3d::window::window_volume;

/// Each token's own `(t, h, w)` position, repeated for every head and point:
/// shape `(L, heads, N, 3)`.
pub fn reference_grid(window: [usize; 3], heads: usize, n_points: usize) -> Array {
    let l = window_volume(window);
    Array::from_fn(&[l, heads, n_points, 3], |i| {
        let axis = i % 3;
        let token = i / (3 * n_points * heads);
        let pos = [
            token / (window[1] * window[2]),
            (token / window[2]) % window[1],
            token % window[2],
        ];
        pos[axis] as f64
    })
}

/// Aggregates values sampled by an explicit plan.
///
/// `offsets` are relative to each query's position. Absolute coordinates are
/// clamped per query into `boxes[(g mod nW) * L + q]` when boxes are given,
/// else into the whole window. Parameters: `{prefix}.value`, `{prefix}.proj`.
pub fn attend_with_plan(
    s: &mut Session,
    windows: Var,
    prefix: &str,
    geom: WindowGeometry,
    plan: SamplePlanVars,
    boxes: Option<&[[[f64; 2]; 3]]>,
) -> Result<Var> {
    let shape = s.tape.shape(windows).to_vec();
    let [g, l, c] = shape[..] else {
        return Err(Error::contract(format!("expected (G, L, C) windows, got {shape:?}")));
    };
    let heads = geom.heads;
    if heads == 0 || c % heads != 0 {
        return Err(Error::contract(format!("{c} channels not divisible by {heads} heads")));
    }
    if l != window_volume(geom.window) {
        return Err(Error::contract(format!(
            "window of {l} tokens does not match extent {:?}",
            geom.window
        )));
    }
    let n = s.tape.shape(plan.offsets)[3];
    let dh = c / heads;

    let v = s.linear(windows, &format!("{prefix}.value"), true)?;
    let v = s.tape.reshape(v, &[g, l, heads, dh])?;

    let reference = s.tape.constant(reference_grid(geom.window, heads, n));
    let coords = s.tape.add_suffix(plan.offsets, reference)?;
    let (lo, hi) = clamp_bounds(g, l, heads, n, geom.window, boxes)?;
    let coords = s.tape.clamp(coords, lo, hi)?;

    let out = s.tape.deform_sample(v, coords, plan.weights, geom.window)?;
    let out = s.tape.reshape(out, &[g, l, c])?;
    s.linear(out, &format!("{prefix}.proj"), true)
}

fn clamp_bounds(
    g: usize,
    l: usize,
    heads: usize,
    n: usize,
    window: [usize; 3],
    boxes: Option<&[[[f64; 2]; 3]]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let full = [
        [0.0, (window[0] - 1) as f64],
        [0.0, (window[1] - 1) as f64],
        [0.0, (window[2] - 1) as f64],
    ];
    if let Some(b) = boxes {
        if b.is_empty() || b.len() % l != 0 || g % (b.len() / l) != 0 {
            return Err(Error::contract(format!(
                "{} sampling boxes do not tile {g} windows of {l} tokens",
                b.len()
            )));
        }
    }
    let total = g * l * heads * n * 3;
    let mut lo = Vec::with_capacity(total);
    let mut hi = Vec::with_capacity(total);
    for gi in 0..g {
        for q in 0..l {
            let bx = match boxes {
                Some(b) => b[(gi % (b.len() / l)) * l + q],
                None => full,
            };
            for _ in 0..heads * n {
                for axis in bx {
                    lo.push(axis[0]);
                    hi.push(axis[1]);
                }
            }
        }
    }
    Ok((lo, hi))
}

/// Deformable replacement for dense window attention on `(G, L, C)` windows.
///
/// Parameters under `prefix`: `query`, `value`, `proj` (linear) and the
/// per-head `sampling_offsets` / `attention_weights` heads.
pub fn deformable_window_attention(
    s: &mut Session,
    windows: Var,
    prefix: &str,
    cfg: &DeformConfig,
    geom: WindowGeometry,
    boxes: Option<&[[[f64; 2]; 3]]>,
) -> Result<Var> {
    let c = *s.tape.shape(windows).last().unwrap_or(&0);
    if geom.heads == 0 || c % geom.heads != 0 {
        return Err(Error::contract(format!("{c} channels not divisible by {} heads", geom.heads)));
    }
    let q = s.linear(windows, &format!("{prefix}.query"), true)?;
    let plan = predict_sample_plan(s, q, prefix, cfg, geom.heads)?;
    attend_with_plan(s, windows, prefix, geom, plan, boxes)
}
