use rand_chacha::ChaCha8Rng;

use super::attention::{bias_table_rows, window_msa, WindowGeometry};
use super::config::{AttentionKind, SwinConfig};
use super::window::{
    effective_window, mask_is_trivial, padded_extent, partition_index, resize_index, reverse_index, roll_index,
    sample_boxes, window_mask, Dims,
};
use crate::deform::deformable_window_attention;
use crate::error::{Error, Result};
use crate::ndcore::{init_layer_norm, init_linear, Init, ParamStore, Session, Var, ZERO_INDEX};

const INIT_STD: f64 = 0.02;

/// A `(B, T, H, W, C)` tensor on the tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub dims: Dims,
}

/// Splits the video into non-overlapping `patch_size` cubes and projects each
/// to `embed_dim`. Volumes that are not patch multiples are zero-padded on
/// the right. Parameters: `patch_embed.proj`.
pub fn patch_embed(s: &mut Session, video: Var, cfg: &SwinConfig) -> Result<FeatureMap> {
    let dims = Dims::from_shape(s.tape.shape(video))?;
    if dims.c != cfg.in_chans {
        return Err(Error::contract(format!(
            "video has {} channels, model expects {}",
            dims.c, cfg.in_chans
        )));
    }
    let p = cfg.patch_size;
    let grid = [dims.t.div_ceil(p[0]), dims.h.div_ceil(p[1]), dims.w.div_ceil(p[2])];
    let patch_len = p[0] * p[1] * p[2] * dims.c;
    let mut index = Vec::with_capacity(dims.b * grid.iter().product::<usize>() * patch_len);
    for b in 0..dims.b {
        for gt in 0..grid[0] {
            for gh in 0..grid[1] {
                for gw in 0..grid[2] {
                    for dt in 0..p[0] {
                        for dh in 0..p[1] {
                            for dw in 0..p[2] {
                                let (t, h, w) = (gt * p[0] + dt, gh * p[1] + dh, gw * p[2] + dw);
                                for c in 0..dims.c {
                                    index.push(if t < dims.t && h < dims.h && w < dims.w {
                                        (((b * dims.t + t) * dims.h + h) * dims.w + w) * dims.c + c
                                    } else {
                                        ZERO_INDEX
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let patches = s
        .tape
        .gather(video, index, &[dims.b, grid[0], grid[1], grid[2], patch_len])?;
    let var = s.linear(patches, "patch_embed.proj", true)?;
    Ok(FeatureMap {
        var,
        dims: Dims::new(dims.b, grid[0], grid[1], grid[2], cfg.embed_dim),
    })
}

/// Per-block settings derived from the config and the stage index.
#[derive(Clone, Copy, Debug)]
pub struct BlockSpec<'a> {
    pub cfg: &'a SwinConfig,
    pub heads: usize,
    /// Requested cyclic shift per axis; zero for regular windows.
    pub shift: [usize; 3],
}

/// Window attention (dense or deformable) over the whole feature map,
/// including padding, the optional cyclic shift and its mask.
pub fn windowed_attention(s: &mut Session, x: FeatureMap, prefix: &str, spec: BlockSpec) -> Result<FeatureMap> {
    let cfg = spec.cfg;
    let (window, shift) = effective_window(x.dims.spatial(), cfg.window_size, spec.shift);
    let valid = x.dims.spatial();
    let padded = padded_extent(valid, window);

    let mut var = x.var;
    let mut dims = x.dims;
    if padded != valid {
        let (index, pdims) = resize_index(dims, padded);
        var = s.tape.gather(var, index, &pdims.shape())?;
        dims = pdims;
    }
    if shift != [0; 3] {
        var = s.tape.gather(var, roll_index(dims, shift, false), &dims.shape())?;
    }
    let (index, wshape) = partition_index(dims, window)?;
    let windows = s.tape.gather(var, index, &wshape)?;

    let geom = WindowGeometry {
        heads: spec.heads,
        window,
        table_window: cfg.window_size,
    };
    let attended = match cfg.attention_kind {
        AttentionKind::DenseWindow => {
            let mask = if mask_is_trivial(padded, valid, shift) {
                None
            } else {
                Some(window_mask(padded, valid, window, shift)?)
            };
            window_msa(s, windows, prefix, geom, mask.as_ref())?
        }
        AttentionKind::Deformable => {
            let boxes = sample_boxes(padded, valid, window, shift);
            deformable_window_attention(s, windows, prefix, &cfg.deform, geom, Some(&boxes))?
        }
    };

    let mut var = s.tape.gather(attended, reverse_index(dims, window)?, &dims.shape())?;
    if shift != [0; 3] {
        var = s.tape.gather(var, roll_index(dims, shift, true), &dims.shape())?;
    }
    if padded != valid {
        let (index, cdims) = resize_index(dims, valid);
        var = s.tape.gather(var, index, &cdims.shape())?;
        dims = cdims;
    }
    Ok(FeatureMap { var, dims })
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
pub fn swin_block(s: &mut Session, x: FeatureMap, prefix: &str, spec: BlockSpec) -> Result<FeatureMap> {
    let h = s.layer_norm(x.var, &format!("{prefix}.norm1"))?;
    let h = windowed_attention(
        s,
        FeatureMap {
            var: h,
            dims: x.dims,
        },
        &format!("{prefix}.attn"),
        spec,
    )?;
    let x1 = s.tape.add(x.var, h.var)?;
    let h = s.layer_norm(x1, &format!("{prefix}.norm2"))?;
    let h = s.linear(h, &format!("{prefix}.mlp.fc1"), true)?;
    let h = s.tape.gelu(h);
    let h = s.linear(h, &format!("{prefix}.mlp.fc2"), true)?;
    let var = s.tape.add(x1, h)?;
    Ok(FeatureMap { var, dims: x.dims })
}

/// Concatenates 2×2 spatial neighbours, normalizes and projects `4C → 2C`.
/// The temporal axis is untouched.
pub fn patch_merging(s: &mut Session, x: FeatureMap, prefix: &str) -> Result<FeatureMap> {
    let d = x.dims;
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(Error::contract(format!(
            "patch merging needs even H and W, got {}x{}",
            d.h, d.w
        )));
    }
    let (h2, w2) = (d.h / 2, d.w / 2);
    let mut index = Vec::with_capacity(d.b * d.t * d.h * d.w * d.c);
    for b in 0..d.b {
        for t in 0..d.t {
            for i in 0..h2 {
                for j in 0..w2 {
                    for (dh, dw) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let base = (((b * d.t + t) * d.h + 2 * i + dh) * d.w + 2 * j + dw) * d.c;
                        index.extend(base..base + d.c);
                    }
                }
            }
        }
    }
    let merged = s.tape.gather(x.var, index, &[d.b, d.t, h2, w2, 4 * d.c])?;
    let merged = s.layer_norm(merged, &format!("{prefix}.norm"))?;
    let var = s.linear(merged, &format!("{prefix}.reduction"), false)?;
    Ok(FeatureMap {
        var,
        dims: Dims::new(d.b, d.t, h2, w2, 2 * d.c),
    })
}

/// Patch embedding, then per stage `depths[i]` blocks alternating unshifted
/// and shifted windows, with patch merging between stages.
pub fn forward_backbone(s: &mut Session, video: Var, cfg: &SwinConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let mut x = patch_embed(s, video, cfg)?;
    for stage in 0..cfg.num_stages() {
        for block in 0..cfg.depths[stage] {
            let spec = BlockSpec {
                cfg,
                heads: cfg.num_heads[stage],
                shift: if block % 2 == 1 { cfg.shift_size() } else { [0; 3] },
            };
            x = swin_block(s, x, &format!("stages.{stage}.blocks.{block}"), spec)?;
        }
        if stage + 1 < cfg.num_stages() {
            x = patch_merging(s, x, &format!("stages.{stage}.merge"))?;
        }
    }
    Ok(x)
}

/// Registers the attention parameters of one block.
pub fn init_attention(store: &mut ParamStore, prefix: &str, cfg: &SwinConfig, dim: usize, heads: usize, rng: &mut ChaCha8Rng) {
    let w = Init::TruncNormal(INIT_STD);
    match cfg.attention_kind {
        AttentionKind::DenseWindow => {
            init_linear(store, &format!("{prefix}.qkv"), dim, 3 * dim, true, w, rng);
            store.init(
                format!("{prefix}.rel_pos_table"),
                &[bias_table_rows(cfg.window_size), heads],
                w,
                rng,
            );
        }
        AttentionKind::Deformable => {
            let dh = dim / heads;
            let n = cfg.deform.n_points;
            init_linear(store, &format!("{prefix}.query"), dim, dim, true, w, rng);
            init_linear(store, &format!("{prefix}.value"), dim, dim, true, w, rng);
            store.init(format!("{prefix}.sampling_offsets.weight"), &[heads, dh, 3 * n], Init::Zeros, rng);
            store.init(format!("{prefix}.sampling_offsets.bias"), &[heads, 3 * n], Init::Zeros, rng);
            store.init(format!("{prefix}.attention_weights.weight"), &[heads, dh, n], Init::Zeros, rng);
            store.init(format!("{prefix}.attention_weights.bias"), &[heads, n], Init::Zeros, rng);
        }
    }
    init_linear(store, &format!("{prefix}.proj"), dim, dim, true, w, rng);
}

pub fn init_block(store: &mut ParamStore, prefix: &str, cfg: &SwinConfig, stage: usize, rng: &mut ChaCha8Rng) {
    let dim = cfg.stage_dim(stage);
    let hidden = dim * cfg.mlp_ratio;
    let w = Init::TruncNormal(INIT_STD);
    init_layer_norm(store, &format!("{prefix}.norm1"), dim, rng);
    init_attention(store, &format!("{prefix}.attn"), cfg, dim, cfg.num_heads[stage], rng);
    init_layer_norm(store, &format!("{prefix}.norm2"), dim, rng);
    init_linear(store, &format!("{prefix}.mlp.fc1"), dim, hidden, true, w, rng);
    init_linear(store, &format!("{prefix}.mlp.fc2"), hidden, dim, true, w, rng);
}

/// All backbone parameters, trunc-normal(0.02) weights and zero biases.
pub fn init_backbone(store: &mut ParamStore, cfg: &SwinConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    cfg.validate()?;
    let patch_len = cfg.patch_size.iter().product::<usize>() * cfg.in_chans;
    init_linear(
        store,
        "patch_embed.proj",
        patch_len,
        cfg.embed_dim,
        true,
        Init::TruncNormal(INIT_STD),
        rng,
    );
    for stage in 0..cfg.num_stages() {
        for block in 0..cfg.depths[stage] {
            init_block(store, &format!("stages.{stage}.blocks.{block}"), cfg, stage, rng);
        }
        if stage + 1 < cfg.num_stages() {
            let dim = cfg.stage_dim(stage);
            init_layer_norm(store, &format!("stages.{stage}.merge.norm"), 4 * dim, rng);
            init_linear(
                store,
                &format!("stages.{stage}.merge.reduction"),
                4 * dim,
                2 * dim,
                false,
                Init::TruncNormal(INIT_STD),
                rng,
            );
        }
    }
    Ok(())
}
