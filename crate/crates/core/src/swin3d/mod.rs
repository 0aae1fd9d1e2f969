//! Video Swin backbone: 3D patch embedding, (shifted) 3D window attention
//! with relative position bias, MLP blocks and spatial-only patch merging.
//! The temporal axis is never downsampled after the patch embedding.

pub mod attention;
mod block;
mod config;
pub mod window;

pub use attention::{window_msa, WindowGeometry};
pub use block::{
    forward_backbone, init_attention, init_backbone, init_block, patch_embed, patch_merging, swin_block,
    windowed_attention, BlockSpec, FeatureMap,
};
pub use config::{AttentionKind, SwinConfig};
pub use window::{attention_mask, cyclic_shift, window_partition, window_reverse, Dims};
