//! Checks shared by the integration tests and the acceptance target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swinvid::ndcore::{Array, ParamStore, Session};
use swinvid::dataio::{annotate_clip, frequency_analysis, score_pnr, PnrDistribution, SynthSpec};
use swinvid::deform::{attend_with_plan, deformable_window_attention, SamplePlanVars};
use swinvid::swin3d::{
    init_attention, window_msa, windowed_attention, AttentionKind, BlockSpec, Dims, FeatureMap, SwinConfig,
    WindowGeometry,
};
use swinvid::tasks::{baseline_center, baseline_fraction, decode_pnr, encode_pnr, PnrBaselineConfig};

use super::gradcheck::normal_array;
use super::oracles::{dense_window_row, linear, shifted_window_attention, window_positions};

pub const HEADS: usize = 2;
pub const WINDOW: [usize; 3] = [2, 4, 4];

pub fn attention_store(c: usize, seed: u64) -> ParamStore {
    let cfg = SwinConfig {
        window_size: WINDOW,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    init_attention(&mut store, "attn", &cfg, c, HEADS, &mut rng);
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let shape = store.get(&name).unwrap().shape().to_vec();
        store.insert(name, normal_array(&shape, 0.5, &mut rng));
    }
    store
}

pub fn run_windowed(x: &Array, store: &ParamStore, shift: [usize; 3]) -> Array {
    let cfg = SwinConfig {
        window_size: WINDOW,
        ..Default::default()
    };
    let mut s = Session::new(store);
    let var = s.tape.constant(x.clone());
    let dims = Dims::from_shape(x.shape()).unwrap();
    let spec = BlockSpec {
        cfg: &cfg,
        heads: HEADS,
        shift,
    };
    let out = windowed_attention(&mut s, FeatureMap { var, dims }, "attn", spec).unwrap();
    s.tape.value(out.var).clone()
}

pub fn all_shifts() -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for t in [0, WINDOW[0] / 2] {
        for h in [0, WINDOW[1] / 2] {
            for w in [0, WINDOW[2] / 2] {
                out.push([t, h, w]);
            }
        }
    }
    out
}

/// Largest deviation from the oracle over every shift combination.
pub fn max_oracle_gap(shape: [usize; 5]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = normal_array(&shape, 1.0, &mut rng);
    let store = attention_store(shape[4], 9);
    all_shifts()
        .into_iter()
        .map(|shift| {
            let got = run_windowed(&x, &store, shift);
            let want = shifted_window_attention(&x, &store, "attn", HEADS, WINDOW, shift);
            got.max_abs_diff(&want)
        })
        .fold(0.0, f64::max)
}


/// Dense and deformable parameter stores that share value and output
/// projections, over a `(2, 2, 2)` window.
fn degenerate_stores(c: usize, heads: usize, seed: u64) -> (ParamStore, ParamStore) {
    let window = [2, 2, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense_cfg = SwinConfig {
        window_size: window,
        ..Default::default()
    };
    let mut dense = ParamStore::new();
    init_attention(&mut dense, "attn", &dense_cfg, c, heads, &mut rng);
    let names: Vec<String> = dense.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let shape = dense.get(&name).unwrap().shape().to_vec();
        dense.insert(name, normal_array(&shape, 0.5, &mut rng));
    }
    let qkv_w = dense.get("attn.qkv.weight").unwrap();
    let qkv_b = dense.get("attn.qkv.bias").unwrap();
    let mut deform = ParamStore::new();
    deform.insert(
        "attn.value.weight",
        Array::from_fn(&[c, c], |i| qkv_w.data()[(i / c) * 3 * c + 2 * c + i % c]),
    );
    deform.insert("attn.value.bias", Array::from_fn(&[c], |i| qkv_b.data()[2 * c + i]));
    for name in ["attn.proj.weight", "attn.proj.bias"] {
        deform.insert(name, dense.get(name).unwrap().clone());
    }
    (dense, deform)
}

/// Largest gap between dense window attention and deformable attention whose
/// plan samples every key of a `(2, 2, 2)` window with the dense softmax row
/// as weights.
pub fn degenerate_equivalence_gap() -> f64 {
    let (g, c, heads, window) = (3, 8, 2, [2usize, 2, 2]);
    let l = 8;
    let (dense, deform) = degenerate_stores(c, heads, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = normal_array(&[g, l, c], 1.0, &mut rng);
    let positions = window_positions(window);

    let offsets = Array::from_fn(&[g, l, heads, l, 3], |i| {
        let axis = i % 3;
        let key = (i / 3) % l;
        let query = i / (3 * l * heads) % l;
        positions[key][axis] as f64 - positions[query][axis] as f64
    });
    let mut weights = Vec::with_capacity(g * l * heads * l);
    for gi in 0..g {
        let tokens = &x.data()[gi * l * c..(gi + 1) * l * c];
        for qi in 0..l {
            for head in 0..heads {
                weights.extend(dense_window_row(tokens, &dense, "attn", heads, window, qi, head));
            }
        }
    }
    let weights = Array::new(vec![g, l, heads, l], weights).unwrap();
    let geom = WindowGeometry {
        heads,
        window,
        table_window: window,
    };

    let mut s = Session::new(&dense);
    let xv = s.tape.constant(x.clone());
    let want = window_msa(&mut s, xv, "attn", geom, None).unwrap();
    let want = s.tape.value(want).clone();

    let mut s = Session::new(&deform);
    let xv = s.tape.constant(x);
    let plan = SamplePlanVars {
        offsets: s.tape.constant(offsets),
        weights: s.tape.constant(weights),
    };
    let got = attend_with_plan(&mut s, xv, "attn", geom, plan, None).unwrap();
    s.tape.value(got).max_abs_diff(&want)
}

/// Largest gap between freshly initialized deformable attention (zero offsets,
/// uniform weights) and `proj(value(x))` at each query.
pub fn zero_offset_gap() -> f64 {
    let (g, c, heads, window) = (4, 8, 2, [2usize, 4, 4]);
    let l: usize = window.iter().product();
    let cfg = SwinConfig {
        window_size: window,
        attention_kind: AttentionKind::Deformable,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    init_attention(&mut store, "attn", &cfg, c, heads, &mut rng);
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for name in names.into_iter().filter(|n| !n.contains("sampling_offsets") && !n.contains("attention_weights")) {
        let shape = store.get(&name).unwrap().shape().to_vec();
        store.insert(name, normal_array(&shape, 0.5, &mut rng));
    }
    let x = normal_array(&[g, l, c], 1.0, &mut rng);
    let p = |n: &str| store.get(n).unwrap();
    let v = linear(x.data(), g * l, p("attn.value.weight"), Some(p("attn.value.bias")));
    let want = linear(&v, g * l, p("attn.proj.weight"), Some(p("attn.proj.bias")));

    let mut s = Session::new(&store);
    let xv = s.tape.constant(x);
    let geom = WindowGeometry {
        heads,
        window,
        table_window: window,
    };
    let got = deformable_window_attention(&mut s, xv, "attn", &cfg.deform, geom, None).unwrap();
    let got = s.tape.value(got);
    got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub struct RoundTrip {
    pub pairs: usize,
    /// Largest `|decode(encode(f)) - f| - ceil(rate / 2)` seen; `<= 0` passes.
    pub worst_slack: i64,
}

/// Every frame of every duration in `durations` through encode then decode.
pub fn encode_decode_round_trip(durations: std::ops::RangeInclusive<usize>, input_size: usize) -> RoundTrip {
    let mut out = RoundTrip {
        pairs: 0,
        worst_slack: i64::MIN,
    };
    for d in durations {
        let bound = d.div_ceil(2 * input_size) as i64;
        for f in 0..d {
            let bin = encode_pnr(f, d, input_size).unwrap();
            let back = decode_pnr(bin, d, input_size).unwrap();
            out.worst_slack = out.worst_slack.max(back.abs_diff(f) as i64 - bound);
            out.pairs += 1;
        }
    }
    out
}

pub struct BaselineOrdering {
    pub fraction_mae: f64,
    pub center_mae: f64,
    pub mode_bin: (f64, f64),
}

impl BaselineOrdering {
    pub fn passed(&self) -> bool {
        self.fraction_mae < self.center_mae && self.mode_bin.0 <= 0.45 && 0.45 < self.mode_bin.1
    }
}

/// Both fixed-fraction baselines scored on `n` synthetic keyframe
/// annotations, plus the histogram mode bin of the normalized keyframes.
pub fn baseline_ordering(n: usize, seed: u64) -> BaselineOrdering {
    let spec = SynthSpec {
        num_clips: n,
        positive_ratio: 1.0,
        pnr_distribution: PnrDistribution::Triangular { mode: 0.45 },
        seed,
        ..Default::default()
    };
    let anns: Vec<_> = (0..n).map(|i| annotate_clip(&spec, i).unwrap()).collect();
    let fraction = PnrBaselineConfig::new(0.45).unwrap();
    let fraction = score_pnr(&anns, |a| Ok(baseline_fraction(a.duration_frames, &fraction))).unwrap();
    let center = score_pnr(&anns, |a| Ok(baseline_center(a.duration_frames))).unwrap();
    let freq = frequency_analysis(&anns, 0.05).unwrap();
    let bin = freq.histogram.mode_bin();
    BaselineOrdering {
        fraction_mae: fraction.mean_abs_error_seconds.unwrap(),
        center_mae: center.mean_abs_error_seconds.unwrap(),
        mode_bin: (freq.histogram.bin_edges[bin], freq.histogram.bin_edges[bin + 1]),
    }
}
