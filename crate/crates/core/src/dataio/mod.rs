//! Synthetic clip generation, annotation and clip files, evaluation reports
//! and histograms.

mod annotations;
mod clipfile;
mod histogram;
mod import;
mod report;
mod synth;

pub use annotations::{format_annotations, parse_annotations, read_annotations, write_annotations, ClipAnnotation};
pub use clipfile::{decode_clip, encode_clip, read_clip_binary, write_clip_binary};
pub use histogram::{error_distribution, frequency_analysis, FrequencyAnalysis, Histogram};
pub use import::import_challenge;
pub use report::{score_oscc, score_pnr, ClipResult, EvalReport};
pub use synth::{annotate_clip, clip_id, generate_clip, render_frames, CounterRng, PnrDistribution, SynthSpec};
