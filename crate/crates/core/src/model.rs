//! Backbone plus task head, the training loop and evaluation.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{score_oscc, score_pnr, ClipAnnotation, EvalReport};
use crate::error::{Error, Result};
use crate::ndcore::{derive_seed, AdamW, AdamWConfig, Array, ParamStore, Session, Var};
use crate::swin3d::{forward_backbone, init_backbone, SwinConfig};
use crate::tasks::{argmax, decode_pnr, encode_pnr, init_oscc_head, init_pnr_head, oscc_head, pnr_head, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub swin: SwinConfig,
    pub task: Task,
    pub input_size: usize,
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::Oscc => 2,
            Task::Pnr => self.input_size,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VideoModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl VideoModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.swin.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut params = ParamStore::new();
        init_backbone(&mut params, &config.swin, &mut rng)?;
        let dim = config.swin.stage_dim(config.swin.num_stages() - 1);
        match config.task {
            Task::Oscc => init_oscc_head(&mut params, dim, &mut rng),
            Task::Pnr => init_pnr_head(&mut params, dim, &mut rng),
        }
        Ok(Self { config, params })
    }

    /// Builds the model for `config` and copies `params` into it, failing on
    /// any missing, extra or mis-shaped parameter.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    /// Logits `[1, classes]` for one sampled clip `(T, H, W, C)`.
    pub fn logits_var(&self, s: &mut Session, frames: &Array) -> Result<Var> {
        let shape = frames.shape();
        if shape.len() != 4 || shape[0] != self.config.input_size {
            return Err(Error::contract(format!(
                "expected ({}, H, W, C) frames, got {shape:?}",
                self.config.input_size
            )));
        }
        let mut batched = vec![1];
        batched.extend_from_slice(shape);
        let video = s.tape.constant(frames.clone().reshape(&batched)?);
        let features = forward_backbone(s, video, &self.config.swin)?;
        match self.config.task {
            Task::Oscc => oscc_head(s, features),
            Task::Pnr => pnr_head(s, features, self.config.input_size),
        }
    }

    pub fn logits(&self, frames: &Array) -> Result<Vec<f64>> {
        let mut s = Session::new(&self.params);
        let v = self.logits_var(&mut s, frames)?;
        Ok(s.tape.value(v).data().to_vec())
    }

    /// Class index for OSCC, keyframe bin for PNR.
    pub fn predict(&self, frames: &Array) -> Result<usize> {
        Ok(argmax(&self.logits(frames)?))
    }

    pub fn loss_and_grads(&self, frames: &Array, target: usize) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut s = Session::new(&self.params);
        let logits = self.logits_var(&mut s, frames)?;
        let loss = s.tape.cross_entropy(logits, &[target])?;
        s.tape.backward(loss)?;
        Ok((s.tape.value(loss).item(), s.grads()))
    }

    /// Mean loss and gradient over a batch. Samples run in parallel on
    /// separate tapes and are summed in batch order, so the result does not
    /// depend on the thread count.
    pub fn batch_gradient(&self, batch: &[(&Array, usize)]) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let per_sample: Vec<_> = batch
            .par_iter()
            .map(|&(frames, target)| self.loss_and_grads(frames, target))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut total: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (l, grads) in per_sample {
            loss += l;
            for (name, g) in grads {
                let acc = total.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                for (a, x) in acc.iter_mut().zip(&g) {
                    *a += x;
                }
            }
        }
        for g in total.values_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        Ok((loss * scale, total))
    }
}

/// One sampled clip with its annotation.
#[derive(Clone, Debug)]
pub struct Example {
    pub annotation: ClipAnnotation,
    /// `(input_size, H, W, C)`.
    pub frames: Array,
}

impl Example {
    pub fn target(&self, task: Task, input_size: usize) -> Result<usize> {
        match task {
            Task::Oscc => Ok(self.annotation.state_change as usize),
            Task::Pnr => {
                let frame = self.annotation.pnr_frame.ok_or_else(|| {
                    Error::contract(format!("clip {} has no keyframe", self.annotation.clip_id))
                })?;
                encode_pnr(frame, self.annotation.duration_frames, input_size)
            }
        }
    }
}

/// Keyframe localization trains only on clips with a state change.
pub fn filter_for_task(examples: Vec<Example>, task: Task) -> Vec<Example> {
    match task {
        Task::Oscc => examples,
        Task::Pnr => examples.into_iter().filter(|e| e.annotation.pnr_frame.is_some()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub report: EvalReport,
    /// Accuracy for OSCC, negated mean error in seconds for PNR, so higher
    /// is better in both cases.
    pub score: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        let metric = match (self.report.accuracy, self.report.mean_abs_error_seconds) {
            (Some(acc), _) => format!("val_accuracy={acc}"),
            (_, Some(err)) => format!("val_mae_seconds={err}"),
            _ => String::new(),
        };
        format!("epoch={} train_loss={} {metric}", self.epoch, self.train_loss)
    }
}

pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_params: ParamStore,
}

pub fn score_of(report: &EvalReport) -> f64 {
    match (report.accuracy, report.mean_abs_error_seconds) {
        (Some(acc), _) => acc,
        (_, Some(err)) => -err,
        _ => f64::NEG_INFINITY,
    }
}

/// Minibatch AdamW over shuffled training examples, validating after every
/// epoch and keeping the best parameters. `on_epoch` may stop early.
pub fn train<F>(
    model: &mut VideoModel,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats) -> ControlFlow<()>,
{
    if train_set.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let task = model.config.task;
    let input_size = model.config.input_size;
    let targets = train_set
        .iter()
        .map(|e| e.target(task, input_size))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Array, usize)> = chunk.iter().map(|&i| (&train_set[i].frames, targets[i])).collect();
            let (loss, grads) = model.batch_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            opt.step(&mut model.params, &grads)?;
        }
        let report = evaluate(model, val_set)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            score: score_of(&report),
            report,
        };
        if best.as_ref().map_or(true, |(s, _, _)| stats.score > *s) {
            best = Some((stats.score, epoch, model.params.clone()));
        }
        let flow = on_epoch(&stats);
        history.push(stats);
        if flow.is_break() {
            break;
        }
    }
    let (_, best_epoch, best_params) = best.ok_or_else(|| Error::Config("epochs must be >= 1".into()))?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
    })
}

/// Scores the model on `examples`. Keyframe predictions are decoded back to
/// clip frames before measuring error.
pub fn evaluate(model: &VideoModel, examples: &[Example]) -> Result<EvalReport> {
    let task = model.config.task;
    let input_size = model.config.input_size;
    let eligible: Vec<&Example> = examples
        .iter()
        .filter(|e| task == Task::Oscc || e.annotation.pnr_frame.is_some())
        .collect();
    let bins: Vec<usize> = eligible
        .par_iter()
        .map(|e| model.predict(&e.frames))
        .collect::<Result<_>>()?;
    let annotations: Vec<ClipAnnotation> = examples.iter().map(|e| e.annotation.clone()).collect();
    let mut next = bins.into_iter();
    let mut take = || next.next().ok_or_else(|| Error::contract("prediction count mismatch"));
    let report = match task {
        Task::Oscc => score_oscc(&annotations, |_| take())?,
        Task::Pnr => score_pnr(&annotations, |ann| decode_pnr(take()?, ann.duration_frames, input_size))?,
    };
    report.check_consistency()?;
    Ok(report)
}
