use super::DeformConfig;
use crate::error::{Error, Result};
use crate::ndcore::{trilinear_corners, Array, Session, Var};

/// Concrete sampling plan: `offsets` `(G, L, heads, N, 3)` and `weights`
/// `(G, L, heads, N)` summing to one over `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub offsets: Array,
    pub weights: Array,
}

impl SamplePlan {
    pub fn new(offsets: Array, weights: Array) -> Result<Self> {
        let so = offsets.shape();
        if so.len() != 5 || so[4] != 3 || weights.shape() != &so[..4] {
            return Err(Error::Shape {
                op: "sample_plan",
                lhs: so.to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        let n = so[3];
        for (row, chunk) in weights.data().chunks(n).enumerate() {
            let total: f64 = chunk.iter().sum();
            if chunk.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::contract(format!(
                    "sample weights of row {row} are not a distribution (sum {total})"
                )));
            }
        }
        Ok(Self { offsets, weights })
    }

    pub fn n_points(&self) -> usize {
        self.offsets.shape()[3]
    }
}

/// A plan recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct SamplePlanVars {
    pub offsets: Var,
    pub weights: Var,
}

impl SamplePlanVars {
    pub fn to_plan(self, s: &Session) -> Result<SamplePlan> {
        SamplePlan::new(s.tape.value(self.offsets).clone(), s.tape.value(self.weights).clone())
    }
}

/// Applies a per-head `(heads, dh, out)` weight and `(heads, out)` bias to
/// `(G, L, C)` queries, giving `(G, L, heads, out)`.
fn per_head_linear(s: &mut Session, queries: Var, prefix: &str, heads: usize, out: usize) -> Result<Var> {
    let shape = s.tape.shape(queries).to_vec();
    let [g, l, c] = shape[..] else {
        return Err(Error::contract(format!("expected (G, L, C) queries, got {shape:?}")));
    };
    if heads == 0 || c % heads != 0 {
        return Err(Error::contract(format!("{c} channels not divisible by {heads} heads")));
    }
    let dh = c / heads;
    let w = s.param(&format!("{prefix}.weight"))?;
    let b = s.param(&format!("{prefix}.bias"))?;
    let x = s.tape.reshape(queries, &[g * l, heads, dh])?;
    let x = s.tape.permute(x, &[1, 0, 2])?;
    let y = s.tape.matmul(x, w)?;
    let y = s.tape.permute(y, &[1, 0, 2])?;
    let y = s.tape.add_suffix(y, b)?;
    s.tape.reshape(y, &[g, l, heads, out])
}

/// Offsets and mixing weights for `(G, L, C)` queries.
///
/// Parameters: `{prefix}.sampling_offsets` and `{prefix}.attention_weights`,
/// each a per-head weight `(heads, dh, ·)` and bias `(heads, ·)`.
pub fn predict_sample_plan(
    s: &mut Session,
    queries: Var,
    prefix: &str,
    cfg: &DeformConfig,
    heads: usize,
) -> Result<SamplePlanVars> {
    let n = cfg.n_points;
    let raw = per_head_linear(s, queries, &format!("{prefix}.sampling_offsets"), heads, 3 * n)?;
    let shape = s.tape.shape(raw).to_vec();
    let raw = s.tape.reshape(raw, &[shape[0], shape[1], heads, n, 3])?;
    let offsets = s.tape.scale(raw, cfg.offset_scale);
    let logits = per_head_linear(s, queries, &format!("{prefix}.attention_weights"), heads, n)?;
    let weights = s.tape.softmax(logits, 3)?;
    Ok(SamplePlanVars { offsets, weights })
}

/// Trilinear read of a `(wt, wh, ww, C)` grid at a continuous coordinate.
/// Coordinates outside `[0, dim - 1]` are clamped first.
pub fn trilinear_sample(grid: &Array, coord: [f64; 3]) -> Result<Vec<f64>> {
    let [t, h, w, c] = grid.shape()[..] else {
        return Err(Error::contract(format!(
            "trilinear grid must be (T, H, W, C), got {:?}",
            grid.shape()
        )));
    };
    let mut out = vec![0.0; c];
    for corner in trilinear_corners(coord, [t, h, w]) {
        let row = &grid.data()[corner.index * c..(corner.index + 1) * c];
        for (o, v) in out.iter_mut().zip(row) {
            *o += corner.weight * v;
        }
    }
    Ok(out)
}
