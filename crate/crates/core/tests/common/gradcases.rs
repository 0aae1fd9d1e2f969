use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swinvid::ndcore::{Array, Init, ParamStore, Session, ZERO_INDEX};
use swinvid::swin3d::{
    init_block, patch_embed, patch_merging, swin_block, AttentionKind, BlockSpec, Dims, FeatureMap, SwinConfig,
};
use swinvid::tasks::{init_oscc_head, init_pnr_head, oscc_head, pnr_head};
use swinvid::Result;

use super::gradcheck::{normal_array, uniform_array, Build};

pub struct Case {
    pub name: &'static str,
    pub store: ParamStore,
    pub build: Box<Build>,
}

fn case(name: &'static str, store: ParamStore, build: impl Fn(&mut Session) -> Result<swinvid::Var> + Sync + 'static) -> Case {
    Case {
        name,
        store,
        build: Box::new(build),
    }
}

fn store_of(items: Vec<(&str, Array)>) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, a) in items {
        store.insert(name, a);
    }
    store
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Coordinates at least 0.25 away from every lattice line, inside `grid`.
fn off_lattice_coords(shape: &[usize], grid: [usize; 3], r: &mut ChaCha8Rng) -> Array {
    let raw = uniform_array(shape, 0.25, 0.75, r);
    let cells = uniform_array(shape, 0.0, 1.0, r);
    Array::from_fn(shape, |i| {
        let axis = i % 3;
        let cell = (cells.data()[i] * (grid[axis] - 1) as f64).floor();
        cell + raw.data()[i]
    })
}

pub fn op_cases() -> Vec<Case> {
    let mut r = rng(1);
    let mut cases = Vec::new();

    cases.push(case(
        "matmul_batched",
        store_of(vec![
            ("a", normal_array(&[2, 3, 4, 5], 1.0, &mut r)),
            ("b", normal_array(&[2, 3, 5, 3], 1.0, &mut r)),
        ]),
        |s| {
            let (a, b) = (s.param("a")?, s.param("b")?);
            s.tape.matmul(a, b)
        },
    ));
    cases.push(case(
        "matmul_broadcast_rhs",
        store_of(vec![
            ("a", normal_array(&[3, 6, 5], 1.0, &mut r)),
            ("b", normal_array(&[5, 4], 1.0, &mut r)),
        ]),
        |s| {
            let (a, b) = (s.param("a")?, s.param("b")?);
            s.tape.matmul(a, b)
        },
    ));
    cases.push(case(
        "add",
        store_of(vec![
            ("a", normal_array(&[6, 10], 1.0, &mut r)),
            ("b", normal_array(&[6, 10], 1.0, &mut r)),
        ]),
        |s| {
            let (a, b) = (s.param("a")?, s.param("b")?);
            s.tape.add(a, b)
        },
    ));
    cases.push(case(
        "add_suffix",
        store_of(vec![
            ("a", normal_array(&[4, 5, 6], 1.0, &mut r)),
            ("b", normal_array(&[5, 6], 1.0, &mut r)),
        ]),
        |s| {
            let (a, b) = (s.param("a")?, s.param("b")?);
            s.tape.add_suffix(a, b)
        },
    ));
    cases.push(case(
        "mul_with_fan_out",
        store_of(vec![
            ("a", normal_array(&[8, 10], 1.0, &mut r)),
            ("b", normal_array(&[8, 10], 1.0, &mut r)),
        ]),
        |s| {
            let (a, b) = (s.param("a")?, s.param("b")?);
            let ab = s.tape.mul(a, b)?;
            s.tape.mul(ab, a)
        },
    ));
    cases.push(case(
        "scale",
        store_of(vec![("a", normal_array(&[10, 12], 1.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            Ok(s.tape.scale(a, -1.7))
        },
    ));
    cases.push(case(
        "softmax_last_axis",
        store_of(vec![("a", normal_array(&[6, 20], 1.5, &mut r))]),
        |s| {
            let a = s.param("a")?;
            s.tape.softmax(a, 1)
        },
    ));
    cases.push(case(
        "softmax_inner_axis",
        store_of(vec![("a", normal_array(&[4, 6, 5], 1.5, &mut r))]),
        |s| {
            let a = s.param("a")?;
            s.tape.softmax(a, 1)
        },
    ));
    cases.push(case(
        "layer_norm",
        store_of(vec![
            ("x", normal_array(&[6, 3, 8], 1.0, &mut r)),
            ("g", uniform_array(&[8], 0.5, 1.5, &mut r)),
            ("b", normal_array(&[8], 0.5, &mut r)),
        ]),
        |s| {
            let (x, g, b) = (s.param("x")?, s.param("g")?, s.param("b")?);
            s.tape.layer_norm(x, g, b, 1e-5)
        },
    ));
    cases.push(case(
        "gelu",
        store_of(vec![("a", uniform_array(&[10, 12], -3.0, 3.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            Ok(s.tape.gelu(a))
        },
    ));
    cases.push(case(
        "reshape_permute",
        store_of(vec![("a", normal_array(&[3, 4, 10], 1.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            let a = s.tape.reshape(a, &[12, 10])?;
            let a = s.tape.reshape(a, &[3, 4, 10])?;
            s.tape.permute(a, &[2, 0, 1])
        },
    ));
    cases.push(case(
        "gather_repeat_and_zero",
        store_of(vec![("a", normal_array(&[120], 1.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            let mut index: Vec<usize> = (0..120).rev().collect();
            index.extend((0..60).map(|i| (i * 7) % 120));
            index.extend([ZERO_INDEX; 4]);
            s.tape.gather(a, index, &[184])
        },
    ));
    cases.push(case(
        "mean_axis",
        store_of(vec![("a", normal_array(&[4, 5, 6], 1.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            s.tape.mean_axis(a, 1)
        },
    ));
    cases.push(case(
        "sum",
        store_of(vec![("a", normal_array(&[10, 11], 1.0, &mut r))]),
        |s| {
            let a = s.param("a")?;
            let sq = s.tape.mul(a, a)?;
            Ok(s.tape.sum(sq))
        },
    ));
    cases.push(case(
        "cross_entropy",
        store_of(vec![("logits", normal_array(&[12, 10], 2.0, &mut r))]),
        |s| {
            let l = s.param("logits")?;
            s.tape.cross_entropy(l, &[0, 3, 9, 1, 1, 5, 7, 2, 8, 6, 4, 0])
        },
    ));
    // Values sit at least 0.05 from either bound, half inside and half out.
    let x = uniform_array(&[120], -1.0, 1.0, &mut r);
    let (lo, hi): (Vec<f64>, Vec<f64>) = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| match i % 3 {
            0 => (v - 0.3, v + 0.2),
            1 => (v + 0.05, v + 1.0),
            _ => (v - 1.0, v - 0.05),
        })
        .unzip();
    cases.push(case("clamp", store_of(vec![("x", x)]), move |s| {
        let x = s.param("x")?;
        s.tape.clamp(x, lo.clone(), hi.clone())
    }));
    let grid = [2, 3, 3];
    cases.push(case(
        "deform_sample",
        store_of(vec![
            ("values", normal_array(&[2, 18, 2, 3], 1.0, &mut r)),
            ("coords", off_lattice_coords(&[2, 5, 2, 4, 3], grid, &mut r)),
            ("weights", uniform_array(&[2, 5, 2, 4], 0.1, 1.0, &mut r)),
        ]),
        move |s| {
            let (v, c, w) = (s.param("values")?, s.param("coords")?, s.param("weights")?);
            s.tape.deform_sample(v, c, w, grid)
        },
    ));
    cases
}

pub fn block_config(kind: AttentionKind) -> SwinConfig {
    SwinConfig {
        patch_size: [1, 2, 2],
        in_chans: 2,
        embed_dim: 8,
        depths: vec![2, 1],
        num_heads: vec![2, 2],
        window_size: [2, 2, 2],
        attention_kind: kind,
        ..Default::default()
    }
}

/// Redraws every non-norm parameter at `std`. Deformable offset heads get a
/// bias of ±0.5 cell per axis and a small weight, so sample points stay
/// between lattice lines under finite-difference perturbation (trilinear
/// sampling has kinks there).
fn randomize(store: &mut ParamStore, std: f64, r: &mut ChaCha8Rng) {
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let shape = store.get(&name).unwrap().shape().to_vec();
        let a = if name.contains("norm") && name.ends_with(".weight") {
            uniform_array(&shape, 0.7, 1.3, r)
        } else if name.ends_with("sampling_offsets.bias") {
            let signs = uniform_array(&shape, -1.0, 1.0, r);
            Array::from_fn(&shape, |i| 0.5f64.copysign(signs.data()[i]))
        } else if name.ends_with("sampling_offsets.weight") {
            normal_array(&shape, 0.02, r)
        } else {
            normal_array(&shape, std, r)
        };
        store.insert(name, a);
    }
}

fn block_store(cfg: &SwinConfig, prefix: &str, x_dims: Dims, seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    init_block(&mut store, prefix, cfg, 0, &mut r);
    randomize(&mut store, 0.15, &mut r);
    store.insert("input", normal_array(&x_dims.shape(), 1.0, &mut r));
    store
}

fn block_case(name: &'static str, kind: AttentionKind, dims: Dims, shift: [usize; 3]) -> Case {
    let cfg = block_config(kind);
    let store = block_store(&cfg, "blk", dims, 7);
    case(name, store, move |s| {
        let x = s.param("input")?;
        let spec = BlockSpec {
            cfg: &cfg,
            heads: 2,
            shift,
        };
        Ok(swin_block(s, FeatureMap { var: x, dims }, "blk", spec)?.var)
    })
}

pub fn model_cases() -> Vec<Case> {
    let mut cases = vec![
        block_case("swin_block_dense", AttentionKind::DenseWindow, Dims::new(1, 2, 4, 4, 8), [0; 3]),
        block_case("swin_block_dense_shifted", AttentionKind::DenseWindow, Dims::new(1, 2, 4, 4, 8), [1, 1, 1]),
        block_case("swin_block_dense_padded", AttentionKind::DenseWindow, Dims::new(1, 3, 3, 5, 8), [1, 1, 1]),
        block_case("swin_block_deformable", AttentionKind::Deformable, Dims::new(1, 2, 4, 4, 8), [0; 3]),
        block_case("swin_block_deformable_shifted", AttentionKind::Deformable, Dims::new(1, 2, 4, 4, 8), [1, 1, 1]),
        block_case("swin_block_deformable_padded", AttentionKind::Deformable, Dims::new(1, 3, 3, 5, 8), [1, 1, 1]),
    ];

    let mut r = rng(11);
    let dims = Dims::new(1, 2, 4, 4, 4);
    let mut store = ParamStore::new();
    swinvid::ndcore::init_layer_norm(&mut store, "m.norm", 16, &mut r);
    store.init("m.reduction.weight", &[16, 8], Init::TruncNormal(0.3), &mut r);
    store.insert("input", normal_array(&dims.shape(), 1.0, &mut r));
    cases.push(case("patch_merging", store, move |s| {
        let x = s.param("input")?;
        Ok(patch_merging(s, FeatureMap { var: x, dims }, "m")?.var)
    }));

    let cfg = block_config(AttentionKind::DenseWindow);
    let mut store = ParamStore::new();
    swinvid::ndcore::init_linear(&mut store, "patch_embed.proj", 8, 8, true, Init::TruncNormal(0.3), &mut r);
    store.insert("input", normal_array(&[1, 2, 3, 5, 2], 1.0, &mut r));
    let c = cfg.clone();
    cases.push(case("patch_embed_padded", store, move |s| {
        let x = s.param("input")?;
        Ok(patch_embed(s, x, &c)?.var)
    }));

    let dims = Dims::new(2, 4, 2, 2, 8);
    let mut store = ParamStore::new();
    init_oscc_head(&mut store, 8, &mut r);
    store.insert("head.oscc.weight", normal_array(&[8, 2], 0.5, &mut r));
    store.insert("input", normal_array(&dims.shape(), 1.0, &mut r));
    cases.push(case("oscc_head", store, move |s| {
        let x = s.param("input")?;
        oscc_head(s, FeatureMap { var: x, dims })
    }));

    let mut store = ParamStore::new();
    init_pnr_head(&mut store, 8, &mut r);
    store.insert("head.pnr.weight", normal_array(&[8, 1], 0.5, &mut r));
    store.insert("input", normal_array(&dims.shape(), 1.0, &mut r));
    cases.push(case("pnr_head", store, move |s| {
        let x = s.param("input")?;
        pnr_head(s, FeatureMap { var: x, dims }, 8)
    }));

    for kind in [AttentionKind::DenseWindow, AttentionKind::Deformable] {
        let cfg = block_config(kind);
        let mut store = ParamStore::new();
        swinvid::swin3d::init_backbone(&mut store, &cfg, &mut r).unwrap();
        init_pnr_head(&mut store, 16, &mut r);
        randomize(&mut store, 0.15, &mut r);
        store.insert("input", normal_array(&[1, 4, 4, 4, 2], 1.0, &mut r));
        let name = match kind {
            AttentionKind::DenseWindow => "backbone_pnr_dense",
            AttentionKind::Deformable => "backbone_pnr_deformable",
        };
        cases.push(case(name, store, move |s| {
            let x = s.param("input")?;
            let f = swinvid::swin3d::forward_backbone(s, x, &cfg)?;
            pnr_head(s, f, 4)
        }));
    }
    cases
}
