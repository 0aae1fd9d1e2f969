use super::array::{permute_index, Array, ZERO_INDEX};
use super::interp::trilinear_corners;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        broadcast_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddSuffix {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Softmax {
        a: Var,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Gather {
        a: Var,
        index: Vec<usize>,
    },
    MeanAxis {
        a: Var,
        len: usize,
        inner: usize,
    },
    Sum {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Clamp {
        a: Var,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    DeformSample {
        values: Var,
        coords: Var,
        weights: Var,
        grid: [usize; 3],
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. Nodes are recorded in evaluation order,
/// so every node's inputs precede it and the backward sweep is a plain
/// reverse iteration.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Array, op: Op, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input. Gradients flow into it iff `array.requires_grad`.
    pub fn leaf(&mut self, array: Array) -> Var {
        let rg = array.requires_grad;
        self.push(array, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut array: Array) -> Var {
        array.requires_grad = false;
        self.push(array, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// The value of `v` with its gradient attached, if one was computed.
    pub fn to_array(&self, v: Var) -> Array {
        let mut a = self.nodes[v.0].value.clone();
        a.grad = self.grads[v.0].clone();
        a
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let lead = &sa[..sa.len() - 2];
        let broadcast_b = sb.len() == 2;
        if !broadcast_b && lead != &sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = lead.iter().product();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if broadcast_b { 0 } else { bi * k * n };
            for i in 0..m {
                let crow = &mut out[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                for p in 0..k {
                    let x = av[a_off + i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[b_off + p * n..b_off + (p + 1) * n];
                    for (c, &y) in crow.iter_mut().zip(brow) {
                        *c += x * y;
                    }
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Array::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                broadcast_b,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Array::new(shape, data)?, Op::Add { a, b }, rg))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s, broadcast over the leading axes.
    pub fn add_suffix(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape {
                op: "add_suffix",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bv = self.value(b).data();
        let blen = bv.len();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % blen])
            .collect();
        let shape = sa.to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Array::new(shape, data)?, Op::AddSuffix { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Array::new(shape, data)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(
            Array::new(shape, data).expect("same shape"),
            Op::Scale { a, factor },
            rg,
        )
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let x = self.value(a).data();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len)
                    .map(|j| x[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Array::new(shape, out)?, Op::Softmax { a, len, inner }, rg))
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Array::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(Array::new(shape, data).expect("same shape"), Op::Gelu { a }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let (index, shape) = permute_index(self.shape(a), perm)?;
        self.gather(a, index, &shape)
    }

    /// `out[i] = a[index[i]]` (zero for [`ZERO_INDEX`]); backward scatter-adds.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        let src_len = self.value(a).len();
        if numel != index.len() || index.iter().any(|&i| i != ZERO_INDEX && i >= src_len) {
            return Err(Error::Shape {
                op: "gather",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(a).gather(&index, shape);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Gather { a, index }, rg))
    }

    /// Mean over `axis`, which is removed from the shape (rank-1 inputs keep shape `[1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "mean axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Array::new(out_shape, out)?, Op::MeanAxis { a, len, inner }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Array::scalar(total), Op::Sum { a }, rg)
    }

    /// Mean softmax cross-entropy of `logits` `[batch, classes]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let (rows, classes) = (shape[0], shape[1]);
        if let Some(t) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::contract(format!("target {t} out of range for {classes} classes")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - log_z).exp();
            }
            loss += log_z - row[targets[r]];
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("cross-entropy is not finite".into()));
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Array::scalar(loss / rows as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Elementwise clamp into `[lo[i], hi[i]]`. The gradient passes where the
    /// input lies inside the closed interval.
    pub fn clamp(&mut self, a: Var, lo: Vec<f64>, hi: Vec<f64>) -> Result<Var> {
        let n = self.value(a).len();
        if lo.len() != n || hi.len() != n {
            return Err(Error::Shape {
                op: "clamp",
                lhs: self.shape(a).to_vec(),
                rhs: vec![lo.len(), hi.len()],
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&x, (&l, &h))| x.clamp(l, h))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Array::new(shape, data)?, Op::Clamp { a, lo, hi }, rg))
    }

    /// Weighted trilinear sampling of per-window value grids.
    ///
    /// `values` is `(G, L, heads, d)` with `L = grid[0]·grid[1]·grid[2]`,
    /// `coords` is `(G, Q, heads, N, 3)` in cell units and `weights` is
    /// `(G, Q, heads, N)`. Output is `(G, Q, heads, d)`:
    /// `out[g,q,h] = Σ_i weights[g,q,h,i] · sample(values[g,:,h], coords[g,q,h,i])`.
    pub fn deform_sample(
        &mut self,
        values: Var,
        coords: Var,
        weights: Var,
        grid: [usize; 3],
    ) -> Result<Var> {
        let sv = self.shape(values).to_vec();
        let sc = self.shape(coords).to_vec();
        let sw = self.shape(weights).to_vec();
        let volume: usize = grid.iter().product();
        let ok = sv.len() == 4
            && sc.len() == 5
            && sw.len() == 4
            && sv[1] == volume
            && sc[0] == sv[0]
            && sc[2] == sv[2]
            && sc[4] == 3
            && sw[..] == sc[..4];
        if !ok {
            return Err(Error::Shape {
                op: "deform_sample",
                lhs: sv,
                rhs: sc,
            });
        }
        let (g_n, heads, d) = (sv[0], sv[2], sv[3]);
        let (q_n, pts) = (sc[1], sc[3]);
        let v = self.value(values).data();
        let c = self.value(coords).data();
        let w = self.value(weights).data();
        let mut out = vec![0.0; g_n * q_n * heads * d];
        for g in 0..g_n {
            for q in 0..q_n {
                for h in 0..heads {
                    let o = ((g * q_n + q) * heads + h) * d;
                    for i in 0..pts {
                        let wi = w[((g * q_n + q) * heads + h) * pts + i];
                        let cb = (((g * q_n + q) * heads + h) * pts + i) * 3;
                        for corner in trilinear_corners([c[cb], c[cb + 1], c[cb + 2]], grid) {
                            let scale = wi * corner.weight;
                            if scale == 0.0 {
                                continue;
                            }
                            let vb = ((g * volume + corner.index) * heads + h) * d;
                            for j in 0..d {
                                out[o + j] += scale * v[vb + j];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.needs(&[values, coords, weights]);
        Ok(self.push(
            Array::new(vec![g_n, q_n, heads, d], out)?,
            Op::DeformSample {
                values,
                coords,
                weights,
                grid,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`; gradients accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backward_node(&self.nodes, i, &g, &mut self.grads);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn backward_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            broadcast_b,
        } => {
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                for bi in 0..batch {
                    let b_off = if broadcast_b { 0 } else { bi * k * n };
                    for r in 0..m {
                        let grow = &g[bi * m * n + r * n..bi * m * n + (r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[b_off + p * n..b_off + (p + 1) * n];
                            ga[bi * m * k + r * k + p] +=
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for bi in 0..batch {
                    let b_off = if broadcast_b { 0 } else { bi * k * n };
                    for r in 0..m {
                        let grow = &g[bi * m * n + r * n..bi * m * n + (r + 1) * n];
                        for p in 0..k {
                            let x = av[bi * m * k + r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[b_off + p * n..b_off + (p + 1) * n];
                            for (d, &y) in gbrow.iter_mut().zip(grow) {
                                *d += x * y;
                            }
                        }
                    }
                }
            }
        }
        &Op::Add { a, b } => {
            for v in [a, b] {
                if let Some(gv) = slot(nodes, grads, v) {
                    gv.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
        }
        &Op::AddSuffix { a, b } => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                let blen = gb.len();
                for (j, x) in g.iter().enumerate() {
                    gb[j % blen] += x;
                }
            }
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                for j in 0..g.len() {
                    ga[j] += g[j] * bv[j];
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for j in 0..g.len() {
                    gb[j] += g[j] * av[j];
                }
            }
        }
        &Op::Scale { a, factor } => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, x)| *d += x * factor);
            }
        }
        &Op::Softmax { a, len, inner } => {
            let y = nodes[i].value.data();
            if let Some(ga) = slot(nodes, grads, a) {
                let outer = y.len() / (len * inner);
                for o in 0..outer {
                    for c in 0..inner {
                        let base = o * len * inner + c;
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * inner] * y[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let idx = base + j * inner;
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = nodes[gamma.0].value.len();
            let gv = val(*gamma);
            let rows = xhat.len() / d;
            if let Some(gg) = slot(nodes, grads, *gamma) {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *beta) {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += g[r * d + j];
                    }
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                for r in 0..rows {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        let dh = g[r * d + j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[r * d + j];
                    }
                    let scale = inv_std[r] / d as f64;
                    for j in 0..d {
                        let dh = g[r * d + j] * gv[j];
                        gx[r * d + j] +=
                            scale * (d as f64 * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
                    }
                }
            }
        }
        &Op::Gelu { a } => {
            let av = val(a);
            if let Some(ga) = slot(nodes, grads, a) {
                for j in 0..g.len() {
                    ga[j] += g[j] * gelu_grad(av[j]);
                }
            }
        }
        &Op::Reshape { a } => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
        }
        Op::Gather { a, index } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (&src, x) in index.iter().zip(g) {
                    if src != ZERO_INDEX {
                        ga[src] += x;
                    }
                }
            }
        }
        &Op::MeanAxis { a, len, inner } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let outer = ga.len() / (len * inner);
                for o in 0..outer {
                    for j in 0..len {
                        for c in 0..inner {
                            ga[(o * len + j) * inner + c] += g[o * inner + c] / len as f64;
                        }
                    }
                }
            }
        }
        &Op::Sum { a } => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                let rows = targets.len();
                let classes = probs.len() / rows;
                let scale = g[0] / rows as f64;
                for r in 0..rows {
                    for c in 0..classes {
                        let onehot = if targets[r] == c { 1.0 } else { 0.0 };
                        gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                    }
                }
            }
        }
        Op::Clamp { a, lo, hi } => {
            let av = val(*a);
            if let Some(ga) = slot(nodes, grads, *a) {
                for j in 0..g.len() {
                    if av[j] >= lo[j] && av[j] <= hi[j] {
                        ga[j] += g[j];
                    }
                }
            }
        }
        &Op::DeformSample {
            values,
            coords,
            weights,
            grid,
        } => deform_backward(nodes, grads, g, values, coords, weights, grid),
    }
}

fn deform_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    values: Var,
    coords: Var,
    weights: Var,
    grid: [usize; 3],
) {
    let sv = nodes[values.0].value.shape();
    let sc = nodes[coords.0].value.shape();
    let (g_n, volume, heads, d) = (sv[0], sv[1], sv[2], sv[3]);
    let (q_n, pts) = (sc[1], sc[3]);
    let v = nodes[values.0].value.data();
    let c = nodes[coords.0].value.data();
    let w = nodes[weights.0].value.data();
    let mut dv = nodes[values.0].requires_grad.then(|| vec![0.0; v.len()]);
    let mut dc = nodes[coords.0].requires_grad.then(|| vec![0.0; c.len()]);
    let mut dw = nodes[weights.0].requires_grad.then(|| vec![0.0; w.len()]);
    for gi in 0..g_n {
        for q in 0..q_n {
            for h in 0..heads {
                let go = &g[((gi * q_n + q) * heads + h) * d..][..d];
                for i in 0..pts {
                    let wi_idx = ((gi * q_n + q) * heads + h) * pts + i;
                    let wi = w[wi_idx];
                    let cb = wi_idx * 3;
                    let mut dot_sample = 0.0;
                    let mut dcoord = [0.0; 3];
                    for corner in trilinear_corners([c[cb], c[cb + 1], c[cb + 2]], grid) {
                        let vb = ((gi * volume + corner.index) * heads + h) * d;
                        let vrow = &v[vb..vb + d];
                        let dot: f64 = vrow.iter().zip(go).map(|(x, y)| x * y).sum();
                        dot_sample += corner.weight * dot;
                        for axis in 0..3 {
                            dcoord[axis] += corner.dweight[axis] * dot;
                        }
                        if let Some(dv) = dv.as_mut() {
                            let scale = wi * corner.weight;
                            if scale != 0.0 {
                                for j in 0..d {
                                    dv[vb + j] += scale * go[j];
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[wi_idx] += dot_sample;
                    }
                    if let Some(dc) = dc.as_mut() {
                        for axis in 0..3 {
                            dc[cb + axis] += wi * dcoord[axis];
                        }
                    }
                }
            }
        }
    }
    for (var, part) in [(values, dv), (coords, dc), (weights, dw)] {
        if let (Some(part), Some(dst)) = (part, slot(nodes, grads, var)) {
            dst.iter_mut().zip(part).for_each(|(d, x)| *d += x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let eye = t.constant(arr(&[2, 2], &[1., 0., 0., 1.]));
        let col = t.constant(arr(&[2, 1], &[3., 4.]));
        let out = t.matmul(eye, col).unwrap();
        assert_eq!(t.value(out).data(), &[3., 4.]);
        let row = t.constant(arr(&[1, 2], &[1., 2.]));
        let out = t.matmul(row, col).unwrap();
        assert_eq!(t.value(out).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 3]));
        let b = t.constant(Array::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let va = t.constant(arr(&[3, 4], &a));
        let vb = t.constant(arr(&[4, 2], &b));
        let c = t.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut expect = 0.0;
                for p in 0..4 {
                    expect += a[i * 4 + p] * b[p * 2 + j];
                }
                assert!((t.value(c).data()[i * 2 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2], &[0., 0.]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
        let c = 7.3;
        let x = t.constant(arr(&[2], &[c, c + 3f64.ln()]));
        let y = t.softmax(x, 0).unwrap();
        assert!((t.value(y).data()[0] - 0.25).abs() < 1e-12);
        assert!((t.value(y).data()[1] - 0.75).abs() < 1e-12);
        let x = t.constant(arr(&[2], &[1000., 0.]));
        let y = t.softmax(x, 0).unwrap();
        assert!((t.value(y).data()[0] - 1.0).abs() < 1e-12);
        assert!(t.value(y).data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2], &[f64::NAN, 0.]));
        assert!(matches!(t.softmax(x, 0), Err(Error::Numeric(_))));
        assert!(t.softmax(x, 1).is_err());
    }

    #[test]
    fn softmax_middle_axis_slices_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_fn(&[2, 3, 4], |i| (i as f64 * 0.7).sin() * 5.0));
        let y = t.softmax(x, 1).unwrap();
        let v = t.value(y);
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| v.at(&[o, j, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let ones = t.constant(Array::full(&[2], 1.0));
        let zeros = t.constant(Array::zeros(&[2]));
        let x = t.constant(arr(&[2], &[5., 5.]));
        let y = t.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert_eq!(t.value(y).data(), &[0., 0.]);
        let x = t.constant(arr(&[2], &[1., 3.]));
        let y = t.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert!((t.value(y).data()[0] + 1.0).abs() < 1e-4);
        assert!((t.value(y).data()[1] - 1.0).abs() < 1e-4);
        let beta = t.constant(arr(&[2], &[0.3, -2.0]));
        let y = t.layer_norm(x, zeros, beta, 1e-5).unwrap();
        assert_eq!(t.value(y).data(), &[0.3, -2.0]);
    }

    #[test]
    fn gelu_limits() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn backward_sum_and_square() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1., -2., 0.5]).with_grad());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1., 1., 1.]);

        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1., -2., 0.5]).with_grad());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2., -4., 1.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[3]).with_grad());
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2], &[1., 2.]).with_grad());
        let c = t.constant(arr(&[2], &[3., 4.]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3., 4.]);
        assert!(t.grad(c).is_none());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[2, 4]).with_grad());
        let l = t.cross_entropy(x, &[0, 3]).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!(t.cross_entropy(x, &[0, 4]).is_err());
    }
}
