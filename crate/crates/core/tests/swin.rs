mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swinvid::model::{ModelConfig, VideoModel};
use swinvid::ndcore::{Array, ParamStore, Session};
use swinvid::swin3d::{
    forward_backbone, init_backbone, init_block, patch_embed, patch_merging, swin_block, window_msa, BlockSpec, Dims,
    FeatureMap, SwinConfig, WindowGeometry,
};
use swinvid::tasks::Task;

use common::gradcheck::normal_array;

fn shape_after(cfg: &SwinConfig, video: &[usize], f: impl Fn(&mut Session, swinvid::Var) -> FeatureMap) -> Vec<usize> {
    let mut store = ParamStore::new();
    init_backbone(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut s = Session::new(&store);
    let x = s.tape.constant(Array::zeros(video));
    let out = f(&mut s, x);
    assert_eq!(s.tape.shape(out.var), &out.dims.shape()[..]);
    out.dims.shape()
}

#[test]
fn patch_embed_output_shape() {
    let cfg = SwinConfig::default();
    let shape = shape_after(&cfg, &[1, 16, 16, 16, 1], |s, x| patch_embed(s, x, &cfg).unwrap());
    assert_eq!(shape, [1, 8, 4, 4, 16]);
}

#[test]
fn desk_backbone_output_shape() {
    let cfg = SwinConfig::default();
    let shape = shape_after(&cfg, &[1, 16, 16, 16, 1], |s, x| forward_backbone(s, x, &cfg).unwrap());
    assert_eq!(shape, [1, 8, 2, 2, 32]);
}

#[test]
fn patch_merging_halves_space_and_doubles_channels() {
    let cfg = SwinConfig::default();
    let mut store = ParamStore::new();
    init_backbone(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut s = Session::new(&store);
    let dims = Dims::new(1, 8, 4, 4, 16);
    let x = s.tape.constant(Array::zeros(&dims.shape()));
    let out = patch_merging(&mut s, FeatureMap { var: x, dims }, "stages.0.merge").unwrap();
    assert_eq!(out.dims.shape(), [1, 8, 2, 2, 32]);
}

#[test]
fn two_token_window_matches_hand_softmax() {
    // q_i = s·x_i, k_i = x_i, v = diag(2, 3)·x, identity projection, zero bias.
    // With s = sqrt(2)·ln 3 the score gap is ln 3, so weights are 3/4 and 1/4.
    let s_q = 2f64.sqrt() * 3f64.ln();
    let mut w = vec![0.0; 2 * 6];
    let set = |w: &mut Vec<f64>, r: usize, c: usize, v: f64| w[r * 6 + c] = v;
    set(&mut w, 0, 0, s_q);
    set(&mut w, 1, 1, s_q);
    set(&mut w, 0, 2, 1.0);
    set(&mut w, 1, 3, 1.0);
    set(&mut w, 0, 4, 2.0);
    set(&mut w, 1, 5, 3.0);
    let mut store = ParamStore::new();
    store.insert("a.qkv.weight", Array::new(vec![2, 6], w).unwrap());
    store.insert("a.qkv.bias", Array::zeros(&[6]));
    store.insert("a.rel_pos_table", Array::zeros(&[3, 1]));
    store.insert("a.proj.weight", Array::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    store.insert("a.proj.bias", Array::zeros(&[2]));

    let mut s = Session::new(&store);
    let x = s.tape.constant(Array::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let geom = WindowGeometry {
        heads: 1,
        window: [1, 1, 2],
        table_window: [1, 1, 2],
    };
    let out = window_msa(&mut s, x, "a", geom, None).unwrap();
    let want = [0.75 * 2.0, 0.25 * 3.0, 0.25 * 2.0, 0.75 * 3.0];
    for (a, b) in s.tape.value(out).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn shift_is_dropped_when_the_map_fits_one_window() {
    let cfg = SwinConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    init_block(&mut store, "b", &cfg, 0, &mut rng);
    let dims = Dims::new(1, 2, 4, 4, 16);
    store.insert("x", normal_array(&dims.shape(), 1.0, &mut rng));
    let run = |shift| {
        let mut s = Session::new(&store);
        let x = s.param("x").unwrap();
        let spec = BlockSpec {
            cfg: &cfg,
            heads: 2,
            shift,
        };
        let out = swin_block(&mut s, FeatureMap { var: x, dims }, "b", spec).unwrap();
        s.tape.value(out.var).clone()
    };
    assert_eq!(run([1, 2, 2]), run([0, 0, 0]));
}

#[test]
fn batch_gradient_is_identical_across_thread_counts() {
    let config = ModelConfig {
        swin: SwinConfig::default(),
        task: Task::Pnr,
        input_size: 16,
    };
    let model = VideoModel::init(config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clips: Vec<Array> = (0..4).map(|_| normal_array(&[16, 16, 16, 1], 1.0, &mut rng)).collect();
    let batch: Vec<(&Array, usize)> = clips.iter().zip([3, 7, 0, 15]).collect();
    let run = || model.batch_gradient(&batch).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run);
    assert_eq!(one.0.to_bits(), three.0.to_bits());
    assert_eq!(one.1, three.1);
}
