//! Central-difference gradient checking over everything in a ParamStore.
//!
//! Inputs are stored next to the parameters so one code path perturbs both.
//! The scalar loss is `sum(out * R)` with a fixed random `R`, which exercises
//! every output element with a distinct weight.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swinvid::ndcore::{Array, ParamStore, Session, Var};
use swinvid::Result;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so exact zeros compare as equal.
pub const REL_FLOOR: f64 = 1e-6;
pub const MIN_COORDS: usize = 100;

pub type Build = dyn Fn(&mut Session) -> Result<Var> + Sync;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub coords: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.coords >= MIN_COORDS && self.max_rel < TOLERANCE
    }
}

pub fn normal_array(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

pub fn uniform_array(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

fn projected_loss<'p>(store: &'p ParamStore, build: &Build) -> Result<(f64, Session<'p>)> {
    let mut s = Session::new(store);
    let out = build(&mut s)?;
    let shape = s.tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = s.tape.constant(normal_array(&shape, 1.0, &mut rng));
    let prod = s.tape.mul(out, r)?;
    let loss = s.tape.sum(prod);
    let value = s.tape.value(loss).item();
    s.tape.backward(loss)?;
    Ok((value, s))
}

fn loss_only(store: &ParamStore, build: &Build) -> f64 {
    projected_loss(store, build).expect("forward pass").0
}

/// Compares analytic and numeric gradients on up to `max_coords` randomly
/// chosen coordinates (all of them when there are fewer).
pub fn check(store: &ParamStore, build: &Build, max_coords: usize, seed: u64) -> GradReport {
    let (_, session) = projected_loss(store, build).expect("forward pass");
    let analytic = session.grads();

    let mut coords: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(name, a)| (0..a.len()).map(move |i| (name.clone(), i)))
        .collect();
    if coords.len() > max_coords {
        coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        coords.truncate(max_coords);
        coords.sort();
    }

    let mut report = GradReport {
        coords: coords.len(),
        max_rel: 0.0,
        worst: String::new(),
    };
    for (name, i) in &coords {
        let mut probe = store.clone();
        let base = probe.get(name).unwrap().data()[*i];
        probe.get_mut(name).unwrap().data_mut()[*i] = base + STEP;
        let plus = loss_only(&probe, build);
        probe.get_mut(name).unwrap().data_mut()[*i] = base - STEP;
        let minus = loss_only(&probe, build);
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic.get(name).map_or(0.0, |g| g[*i]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel || !rel.is_finite() {
            report.max_rel = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst = format!("{name}[{i}] analytic {a:.6e} numeric {numeric:.6e}");
        }
    }
    report
}
