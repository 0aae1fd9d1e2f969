use super::window::window_volume;
use crate::error::{Error, Result};
use crate::ndcore::{Array, Session, Var};

/// Rows of the relative position bias table for a configured window.
pub fn bias_table_rows(window: [usize; 3]) -> usize {
    window.iter().map(|&w| 2 * w - 1).product()
}

/// Table row for a relative offset `(dt, dh, dw)`, each in `(-w, w)` of the
/// configured window.
pub fn relative_position_row(delta: [isize; 3], table_window: [usize; 3]) -> usize {
    let span = table_window.map(|w| 2 * w - 1);
    let mut row = 0;
    for a in 0..3 {
        let shifted = delta[a] + table_window[a] as isize - 1;
        debug_assert!(shifted >= 0 && (shifted as usize) < span[a]);
        row = row * span[a] + shifted as usize;
    }
    row
}

/// `(L, L)` map from query/key pairs of an `effective` window to bias table
/// rows. The table is sized for `table_window`, which must cover `effective`.
pub fn relative_position_index(effective: [usize; 3], table_window: [usize; 3]) -> Vec<usize> {
    let mut coords = Vec::with_capacity(window_volume(effective));
    for t in 0..effective[0] {
        for h in 0..effective[1] {
            for w in 0..effective[2] {
                coords.push([t as isize, h as isize, w as isize]);
            }
        }
    }
    let mut index = Vec::with_capacity(coords.len() * coords.len());
    for q in &coords {
        for k in &coords {
            index.push(relative_position_row([q[0] - k[0], q[1] - k[1], q[2] - k[2]], table_window));
        }
    }
    index
}

/// Geometry shared by the dense and deformable window attention.
#[derive(Clone, Copy, Debug)]
pub struct WindowGeometry {
    pub heads: usize,
    /// Window extent actually in use.
    pub window: [usize; 3],
    /// Configured window; sizes the bias table.
    pub table_window: [usize; 3],
}

/// Multi-head self-attention inside each window.
///
/// `windows` is `(G, L, C)`; `mask`, when given, is `(nW, L, L)` with
/// `G = batch · nW`. Parameters under `prefix`: `qkv`, `proj` and
/// `rel_pos_table` of shape `(rows, heads)`.
pub fn window_msa(
    s: &mut Session,
    windows: Var,
    prefix: &str,
    geom: WindowGeometry,
    mask: Option<&Array>,
) -> Result<Var> {
    let shape = s.tape.shape(windows).to_vec();
    let [g, l, c] = shape[..] else {
        return Err(Error::contract(format!("window_msa expects (G, L, C), got {shape:?}")));
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
    let dh = c / heads;

    let qkv = s.linear(windows, &format!("{prefix}.qkv"), true)?;
    let qkv = s.tape.reshape(qkv, &[g, l, 3, heads, dh])?;
    let qkv = s.tape.permute(qkv, &[2, 0, 3, 1, 4])?;
    let part = g * heads * l * dh;
    let pick = |i: usize| ((i * part)..((i + 1) * part)).collect::<Vec<_>>();
    let q = s.tape.gather(qkv, pick(0), &[g, heads, l, dh])?;
    let k = s.tape.gather(qkv, pick(1), &[g, heads, l, dh])?;
    let v = s.tape.gather(qkv, pick(2), &[g, heads, l, dh])?;

    let kt = s.tape.permute(k, &[0, 1, 3, 2])?;
    let scores = s.tape.matmul(q, kt)?;
    let scores = s.tape.scale(scores, 1.0 / (dh as f64).sqrt());

    let table = s.param(&format!("{prefix}.rel_pos_table"))?;
    let rows = s.tape.shape(table)[0];
    if s.tape.shape(table) != [bias_table_rows(geom.table_window), heads] {
        return Err(Error::contract(format!(
            "bias table {:?} does not fit window {:?} with {heads} heads",
            s.tape.shape(table),
            geom.table_window
        )));
    }
    let rel = relative_position_index(geom.window, geom.table_window);
    let mut bias_index = Vec::with_capacity(heads * l * l);
    for h in 0..heads {
        bias_index.extend(rel.iter().map(|&r| {
            debug_assert!(r < rows);
            r * heads + h
        }));
    }
    let bias = s.tape.gather(table, bias_index, &[heads, l, l])?;
    let mut scores = s.tape.add_suffix(scores, bias)?;

    if let Some(mask) = mask {
        let nw = mask.shape()[0];
        if mask.shape() != [nw, l, l] || g % nw != 0 {
            return Err(Error::Shape {
                op: "window_msa mask",
                lhs: mask.shape().to_vec(),
                rhs: vec![g, l, l],
            });
        }
        let expanded = Array::from_fn(&[nw, heads, l, l], |i| {
            let w = i / (heads * l * l);
            let qk = i % (l * l);
            mask.data()[w * l * l + qk]
        });
        let m = s.tape.constant(expanded);
        let grouped = s.tape.reshape(scores, &[g / nw, nw, heads, l, l])?;
        let grouped = s.tape.add_suffix(grouped, m)?;
        scores = s.tape.reshape(grouped, &[g, heads, l, l])?;
    }

    let attn = s.tape.softmax(scores, 3)?;
    let out = s.tape.matmul(attn, v)?;
    let out = s.tape.permute(out, &[0, 2, 1, 3])?;
    let out = s.tape.reshape(out, &[g, l, c])?;
    s.linear(out, &format!("{prefix}.proj"), true)
}
