//! Plain-loop reference implementations used to check the tape-based code.

use swinvid::ndcore::{Array, ParamStore};

/// `x (n, in) · W (in, out) + b`.
pub fn linear(x: &[f64], n: usize, w: &Array, b: Option<&Array>) -> Vec<f64> {
    let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), n * fan_in);
    let mut out = vec![0.0; n * fan_out];
    for r in 0..n {
        for o in 0..fan_out {
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for i in 0..fan_in {
                acc += x[r * fan_in + i] * w.data()[i * fan_out + o];
            }
            out[r * fan_out + o] = acc;
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn row_major(extent: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for t in 0..extent[0] {
        for h in 0..extent[1] {
            for w in 0..extent[2] {
                out.push([t, h, w]);
            }
        }
    }
    out
}

/// Bias table row for a relative offset, with the table sized for `window`.
pub fn bias_row(delta: [isize; 3], window: [usize; 3]) -> usize {
    let mut row = 0;
    for a in 0..3 {
        let span = 2 * window[a] - 1;
        row = row * span + (delta[a] + window[a] as isize - 1) as usize;
    }
    row
}

/// Which shifted window a position falls in, measured in unrolled
/// coordinates: window boundaries sit at `p ≡ shift (mod window)`, with no
/// wrap-around.
pub fn shifted_group(p: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| (p[a] + window[a] - shift[a]) / window[a])
}

/// Dense attention over the whole `(B, T, H, W, C)` map where a query sees
/// exactly the keys of its own shifted window. Bias comes from the plain
/// coordinate difference. Parameters: `{prefix}.qkv`, `.rel_pos_table`, `.proj`.
pub fn shifted_window_attention(
    x: &Array,
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    window: [usize; 3],
    shift: [usize; 3],
) -> Array {
    let [b, t, h, w, c] = x.shape()[..] else { panic!("rank-5 input expected") };
    let p = |name: &str| store.get(&format!("{prefix}.{name}")).unwrap();
    let table = p("rel_pos_table");
    let dh = c / heads;
    let positions = row_major([t, h, w]);
    let n = positions.len();
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..b {
        let tokens = &x.data()[bi * n * c..(bi + 1) * n * c];
        let qkv = linear(tokens, n, p("qkv.weight"), Some(p("qkv.bias")));
        let mut mixed = vec![0.0; n * c];
        for (qi, &qp) in positions.iter().enumerate() {
            let group = shifted_group(qp, window, shift);
            let keys: Vec<usize> = (0..n)
                .filter(|&k| shifted_group(positions[k], window, shift) == group)
                .collect();
            for head in 0..heads {
                let q = &qkv[qi * 3 * c + head * dh..][..dh];
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|&k| {
                        let kv = &qkv[k * 3 * c + c + head * dh..][..dh];
                        let dot: f64 = q.iter().zip(kv).map(|(a, b)| a * b).sum();
                        let kp = positions[k];
                        let delta = [0, 1, 2].map(|a| qp[a] as isize - kp[a] as isize);
                        dot / (dh as f64).sqrt() + table.data()[bias_row(delta, window) * heads + head]
                    })
                    .collect();
                let attn = softmax(&logits);
                for (&k, a) in keys.iter().zip(&attn) {
                    let v = &qkv[k * 3 * c + 2 * c + head * dh..][..dh];
                    for j in 0..dh {
                        mixed[qi * c + head * dh + j] += a * v[j];
                    }
                }
            }
        }
        out.extend(linear(&mixed, n, p("proj.weight"), Some(p("proj.bias"))));
    }
    Array::new(x.shape().to_vec(), out).unwrap()
}

/// One dense attention row over a single `(G, L, C)` window: the softmax
/// weights of query `qi`, head `head`, including relative position bias.
pub fn dense_window_row(
    window_tokens: &[f64],
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    window: [usize; 3],
    qi: usize,
    head: usize,
) -> Vec<f64> {
    let p = |name: &str| store.get(&format!("{prefix}.{name}")).unwrap();
    let positions = row_major(window);
    let l = positions.len();
    let c = window_tokens.len() / l;
    let dh = c / heads;
    let qkv = linear(window_tokens, l, p("qkv.weight"), Some(p("qkv.bias")));
    let q = &qkv[qi * 3 * c + head * dh..][..dh];
    let logits: Vec<f64> = (0..l)
        .map(|k| {
            let kv = &qkv[k * 3 * c + c + head * dh..][..dh];
            let dot: f64 = q.iter().zip(kv).map(|(a, b)| a * b).sum();
            let delta = [0, 1, 2].map(|a| positions[qi][a] as isize - positions[k][a] as isize);
            dot / (dh as f64).sqrt() + p("rel_pos_table").data()[bias_row(delta, window) * heads + head]
        })
        .collect();
    softmax(&logits)
}

pub fn window_positions(window: [usize; 3]) -> Vec<[usize; 3]> {
    row_major(window)
}
