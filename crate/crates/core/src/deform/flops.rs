//! Multiply-add accounting for one query of one head.
//!
//! The counts come from running instrumented scalar kernels, not from
//! closed-form formulas. Shared projections (Q/K/V, query and output
//! projections) are excluded for both kinds.

use std::cell::Cell;

use crate::ndcore::trilinear_corners;
use crate::swin3d::window::window_volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Dense,
    Deformable,
}

/// Multiply-adds per query and head, split by phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    /// Attention logits: `q·k` per key (dense) or the per-point weight logits (deformable).
    pub score: u64,
    /// Offset prediction and 8-corner interpolation (deformable only).
    pub sampling: u64,
    /// Weighted sum of values.
    pub aggregate: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.score + self.sampling + self.aggregate
    }
}

#[derive(Default)]
struct Counter {
    score: Cell<u64>,
    sampling: Cell<u64>,
    aggregate: Cell<u64>,
}

impl Counter {
    fn mac(cell: &Cell<u64>, acc: &mut f64, a: f64, b: f64) {
        *acc += a * b;
        cell.set(cell.get() + 1);
    }

    fn snapshot(&self) -> FlopCount {
        FlopCount {
            score: self.score.get(),
            sampling: self.sampling.get(),
            aggregate: self.aggregate.get(),
        }
    }
}

fn dense_kernel(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], counter: &Counter) -> Vec<f64> {
    let d = q.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..d {
                Counter::mac(&counter.score, &mut acc, q[j], k[j]);
            }
            acc * scale
        })
        .collect();
    softmax_in_place(&mut logits);
    let mut out = vec![0.0; d];
    for (p, v) in logits.iter().zip(values) {
        for j in 0..d {
            Counter::mac(&counter.aggregate, &mut out[j], *p, v[j]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn deformable_kernel(
    q: &[f64],
    pos: [f64; 3],
    offset_head: &[Vec<f64>],
    weight_head: &[Vec<f64>],
    values: &[Vec<f64>],
    window: [usize; 3],
    counter: &Counter,
) -> Vec<f64> {
    let d = q.len();
    let n = weight_head.len();
    let mut logits: Vec<f64> = weight_head
        .iter()
        .map(|w| {
            let mut acc = 0.0;
            for j in 0..d {
                Counter::mac(&counter.score, &mut acc, q[j], w[j]);
            }
            acc
        })
        .collect();
    softmax_in_place(&mut logits);
    let mut out = vec![0.0; d];
    for i in 0..n {
        let mut coord = pos;
        for (axis, c) in coord.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                Counter::mac(&counter.sampling, &mut acc, q[j], offset_head[3 * i + axis][j]);
            }
            *c = (*c + acc).clamp(0.0, (window[axis] - 1) as f64);
        }
        let mut sample = vec![0.0; d];
        for corner in trilinear_corners(coord, window) {
            for j in 0..d {
                Counter::mac(&counter.sampling, &mut sample[j], corner.weight, values[corner.index][j]);
            }
        }
        for j in 0..d {
            Counter::mac(&counter.aggregate, &mut out[j], logits[i], sample[j]);
        }
    }
    out
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    x.iter_mut().for_each(|v| *v /= total);
}

fn filler(n: usize, d: usize, salt: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..d).map(|j| (((i * 31 + j * 17 + salt) % 13) as f64 - 6.0) / 13.0).collect())
        .collect()
}

/// Runs the instrumented kernel for the query at the window center and
/// returns its multiply-add counts.
pub fn count_flops(kind: KernelKind, window: [usize; 3], d_head: usize, n_points: usize) -> FlopCount {
    let l = window_volume(window);
    let counter = Counter::default();
    let q = &filler(1, d_head, 1)[0];
    let values = filler(l, d_head, 2);
    match kind {
        KernelKind::Dense => {
            let keys = filler(l, d_head, 3);
            dense_kernel(q, &keys, &values, &counter);
        }
        KernelKind::Deformable => {
            let pos = window.map(|w| (w / 2) as f64);
            let offsets = filler(3 * n_points, d_head, 4);
            let weights = filler(n_points, d_head, 5);
            deformable_kernel(q, pos, &offsets, &weights, &values, window, &counter);
        }
    }
    counter.snapshot()
}
