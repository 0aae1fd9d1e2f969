//! Dense tensors, a define-by-run reverse-mode tape, AdamW and the `SWV1`
//! checkpoint format.

mod adamw;
mod array;
pub mod checkpoint;
mod interp;
mod params;
mod tape;

pub use adamw::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use array::{flat_index, permute_index, strides, Array, ZERO_INDEX};
pub use interp::{trilinear_corners, Corner};
pub use params::{derive_seed, init_layer_norm, init_linear, Init, ParamStore, Session};
pub use tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
