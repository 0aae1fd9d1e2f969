//! Video Swin Transformer backbone with an optional deformable window
//! attention, heads for object state change classification and keyframe
//! (point-of-no-return) localization, and the data, metric and analysis
//! tooling around them.
//!
//! Everything runs on a small define-by-run autodiff engine in [`ndcore`].

pub mod cli;
pub mod config;
pub mod dataio;
pub mod deform;
pub mod error;
pub mod model;
pub mod ndcore;
pub mod swin3d;
pub mod tasks;

pub use error::{Error, Result};
pub use ndcore::{Array, Session, Tape, Var};
