use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Named model parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    TruncNormal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: Array) {
        self.params.insert(name.into(), array.with_grad());
    }

    pub fn init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) {
        let array = match init {
            Init::Zeros => Array::zeros(shape),
            Init::Ones => Array::full(shape, 1.0),
            Init::TruncNormal(std) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                Array::from_fn(shape, |_| loop {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= 2.0 * std {
                        break x;
                    }
                })
            }
        };
        self.insert(name, array);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array> {
        self.params.get(name).ok_or_else(|| Error::Checkpoint {
            param: name.to_string(),
            msg: "missing parameter".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    /// Copies values from `other`, checking that every parameter is present with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, dst) in self.params.iter_mut() {
            let src = other.require(name)?;
            if src.shape() != dst.shape() {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    msg: format!("shape {:?} does not match model shape {:?}", src.shape(), dst.shape()),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        if let Some(extra) = other.params.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(Error::Checkpoint {
                param: extra.clone(),
                msg: "not part of this model".into(),
            });
        }
        Ok(())
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: HashMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: HashMap::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let array = self.params.require(name)?.clone();
        let v = self.tape.leaf(array);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    /// `x · W + b` over the last axis of `x`, with `{prefix}.weight` of shape `[in, out]`.
    pub fn linear(&mut self, x: Var, prefix: &str, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let y = self.tape.matmul(x, w)?;
        if bias {
            let b = self.param(&format!("{prefix}.bias"))?;
            self.tape.add_suffix(y, b)
        } else {
            Ok(y)
        }
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.tape.layer_norm(x, g, b, super::LAYER_NORM_EPS)
    }

    /// Gradients of every bound parameter after `tape.backward`.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.tape.grad(v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

/// Registers `{prefix}.weight` `[in, out]` and optionally a zero `{prefix}.bias`.
pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    weight_init: Init,
    rng: &mut ChaCha8Rng,
) {
    store.init(format!("{prefix}.weight"), &[fan_in, fan_out], weight_init, rng);
    if bias {
        store.init(format!("{prefix}.bias"), &[fan_out], Init::Zeros, rng);
    }
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) {
    store.init(format!("{prefix}.weight"), &[dim], Init::Ones, rng);
    store.init(format!("{prefix}.bias"), &[dim], Init::Zeros, rng);
}

/// Derives a child seed so that independent streams do not overlap.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.gen()
}
