//! Toy training runs on synthetic clips, scored on a held-out split that
//! neither training nor checkpoint selection sees.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use swinvid::dataio::{generate_clip, score_pnr, EvalReport, PnrDistribution, SynthSpec};
use swinvid::model::{evaluate, filter_for_task, train, Example, ModelConfig, TrainConfig, VideoModel};
use swinvid::ndcore::AdamWConfig;
use swinvid::swin3d::SwinConfig;
use swinvid::tasks::{baseline_fraction, sample_clip, PnrBaselineConfig, SamplerConfig, Task};

pub const NUM_CLIPS: usize = 512;
pub const HELD_OUT: usize = 64;
pub const VALIDATION: usize = 64;
pub const MAX_EPOCHS: usize = 200;
/// Epochs without a validation improvement before stopping.
pub const PATIENCE: usize = 25;

pub struct ToyRun {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub test: EvalReport,
    /// Fraction-0.45 baseline on the same held-out clips (pnr only).
    pub baseline_mae: Option<f64>,
    /// Frames per model input slot.
    pub rate: f64,
    pub fps: f64,
    pub seconds: f64,
}

pub fn toy_spec(distribution: PnrDistribution) -> SynthSpec {
    SynthSpec {
        num_clips: NUM_CLIPS,
        positive_ratio: 0.5,
        duration_frames: 16,
        height: 16,
        width: 16,
        channels: 1,
        noise_sigma: 0.1,
        pnr_distribution: distribution,
        seed: 0,
        ..Default::default()
    }
}

fn examples(spec: &SynthSpec, sampler: &SamplerConfig) -> Vec<Example> {
    (0..spec.num_clips)
        .into_par_iter()
        .map(|i| {
            let (video, annotation) = generate_clip(spec, i).unwrap();
            let sampled = sample_clip(&video, annotation.pnr_frame, sampler).unwrap();
            Example {
                annotation,
                frames: sampled.frames,
            }
        })
        .collect()
}

/// Splits into `(train, validation, held-out)` with a fixed shuffle.
fn three_way(mut all: Vec<Example>, seed: u64) -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = all.split_off(all.len() - HELD_OUT);
    let val = all.split_off(all.len() - VALIDATION);
    (all, val, test)
}

pub fn toy_training(task: Task, swin: SwinConfig, distribution: PnrDistribution, verbose: bool) -> ToyRun {
    let start = Instant::now();
    let spec = toy_spec(distribution);
    let sampler = SamplerConfig::default();
    let (train_set, val_set, test_set) = three_way(examples(&spec, &sampler), 99);
    let (train_set, val_set, test_set) = (
        filter_for_task(train_set, task),
        filter_for_task(val_set, task),
        filter_for_task(test_set, task),
    );

    let config = ModelConfig {
        swin,
        task,
        input_size: sampler.input_size,
    };
    let mut model = VideoModel::init(config.clone(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: MAX_EPOCHS,
        batch_size: 16,
        seed: 0,
        optimizer: AdamWConfig::default(),
    };
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    let outcome = train(&mut model, &train_set, &val_set, &cfg, |stats| {
        if verbose {
            eprintln!("  {} {:.1}s", stats.log_line(), start.elapsed().as_secs_f64());
        }
        if stats.score > best {
            best = stats.score;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let perfect = stats.report.accuracy == Some(1.0) || stats.report.mean_abs_error_seconds == Some(0.0);
        if perfect || since_best >= PATIENCE {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();

    let trained = VideoModel::from_params(config, &outcome.best_params).unwrap();
    let test = evaluate(&trained, &test_set).unwrap();
    let baseline_mae = (task == Task::Pnr).then(|| {
        let cfg = PnrBaselineConfig::default();
        let anns: Vec<_> = test_set.iter().map(|e| e.annotation.clone()).collect();
        let report = score_pnr(&anns, |a| Ok(baseline_fraction(a.duration_frames, &cfg))).unwrap();
        report.mean_abs_error_seconds.unwrap()
    });
    ToyRun {
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        test,
        baseline_mae,
        rate: spec.duration_frames as f64 / sampler.input_size as f64,
        fps: spec.fps,
        seconds: start.elapsed().as_secs_f64(),
    }
}
