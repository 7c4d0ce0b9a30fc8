//! Supervised training of a planner network on expert labels.
//!
//! Batches are built map-major: each epoch shuffles the training maps, then
//! the samples inside every map, and cuts the concatenated stream into
//! batches. A batch therefore spans one or two maps, so the shared trunk runs
//! once per map instead of once per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Dataset, Entry, MapRecord, Split};
use crate::models::{Arch, Model, Query};
use crate::netcore::L2Mode;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lambda: f32,
    pub seed: u64,
    pub l2_mode: L2Mode,
    /// Rescale the gradient to this global norm when it is larger (0: off).
    pub clip_norm: f32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.01,
            lambda: 1e-4,
            seed: 0,
            l2_mode: L2Mode::default(),
            clip_norm: 0.0,
        }
    }
}

/// Default step size for VIN. The learned V -> Q kernel drifts above unit
/// gain at 0.01 and the recurrence diverges within a few epochs.
pub const VIN_LEARNING_RATE: f32 = 0.002;

impl Hyperparams {
    /// Defaults with the step size suited to `arch`.
    pub fn for_arch(arch: Arch) -> Self {
        let learning_rate = match arch {
            Arch::Vin => VIN_LEARNING_RATE,
            _ => Hyperparams::default().learning_rate,
        };
        Hyperparams {
            learning_rate,
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "clip norm must be >= 0, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Strict accuracy of the pre-update predictions seen during the epoch.
    pub accuracy: f64,
    pub seconds: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub samples: usize,
}

impl EpochReport {
    pub const LOG_HEADER: &'static str = "epoch\tloss\tacc\tseconds\tgrad_norm";

    /// One tab-separated log line, without a trailing newline.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.3}\t{:.6}",
            self.epoch, self.loss, self.accuracy, self.seconds, self.grad_norm_mean
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Number of epochs already completed; training resumes at the next one.
    pub start_epoch: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Also checkpoint every this many epochs (0 keeps only the final one).
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub reports: Vec<EpochReport>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Training entries of `dataset` grouped into the batches of `epoch`.
pub fn epoch_batches(dataset: &Dataset, hyper: &Hyperparams, epoch: usize) -> Vec<Vec<Entry>> {
    let mut by_map: BTreeMap<usize, Vec<Entry>> = BTreeMap::new();
    for e in dataset.entries_in(Split::Train) {
        by_map.entry(e.map_id).or_default().push(e);
    }
    let mut rng = epoch_rng(hyper.seed, epoch);
    let mut groups: Vec<Vec<Entry>> = by_map.into_values().collect();
    groups.shuffle(&mut rng);
    let mut stream = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        stream.extend(g);
    }
    stream
        .chunks(hyper.batch_size)
        .map(<[Entry]>::to_vec)
        .collect()
}

/// Stacked inputs, queries and labels for one batch.
pub fn batch_tensors(
    model: &Model,
    dataset: &Dataset,
    batch: &[Entry],
) -> Result<(crate::netcore::Tensor<f32>, Vec<Query>, Vec<usize>)> {
    let mut maps: Vec<usize> = Vec::new();
    let mut queries = Vec::with_capacity(batch.len());
    for e in batch {
        let slot = match maps.iter().position(|&m| m == e.map_id) {
            Some(s) => s,
            None => {
                maps.push(e.map_id);
                maps.len() - 1
            }
        };
        queries.push(Query::new(slot, e.pos));
    }
    let records: Vec<&MapRecord> = maps.iter().map(|&m| &dataset.records[m]).collect();
    let input = model.batch_input(&records)?;
    let labels = batch.iter().map(|e| e.label.id() as usize).collect();
    Ok((input, queries, labels))
}

fn check_inputs(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.entries_in(Split::Train).is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    let (h, w, c) = dataset.input_shape()?;
    let spec = model.spec();
    if (h, w, c) != (spec.height, spec.width, spec.channels) {
        return Err(Error::dim(
            "input",
            format!(
                "model expects {:?} (H, W, C), dataset is {:?}",
                (spec.height, spec.width, spec.channels),
                (h, w, c)
            ),
        ));
    }
    Ok(())
}

/// Runs one epoch of SGD. `epoch` is 1-based.
pub fn train_epoch(
    model: &mut Model,
    dataset: &Dataset,
    hyper: &Hyperparams,
    epoch: usize,
) -> Result<EpochReport> {
    let start = Instant::now();
    let (mut loss_sum, mut correct, mut samples) = (0.0f64, 0usize, 0usize);
    let (mut gn_sum, mut gn_max) = (0.0f64, 0.0f64);
    let batches = epoch_batches(dataset, hyper, epoch);
    for (b, batch) in batches.iter().enumerate() {
        let (input, queries, labels) = batch_tensors(model, dataset, batch)?;
        let out = model.loss_batch(input, &queries, &labels, hyper.lambda, hyper.l2_mode)?;
        let grad_norm = model.params().grad_norm();
        if !out.loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: b + 1,
                grad_norm,
                grad_max: model.params().grad_max_abs(),
            });
        }
        let mut lr = hyper.learning_rate;
        if hyper.clip_norm > 0.0 && grad_norm > f64::from(hyper.clip_norm) {
            lr *= (f64::from(hyper.clip_norm) / grad_norm) as f32;
        }
        model.params_mut().sgd_step(lr);
        loss_sum += f64::from(out.loss) * batch.len() as f64;
        correct += out.correct;
        samples += batch.len();
        gn_sum += grad_norm;
        gn_max = gn_max.max(grad_norm);
    }
    let report = EpochReport {
        epoch,
        loss: loss_sum / samples as f64,
        accuracy: correct as f64 / samples as f64,
        seconds: start.elapsed().as_secs_f64(),
        grad_norm_mean: gn_sum / batches.len() as f64,
        grad_norm_max: gn_max,
        samples,
    };
    log::debug!("{}", report.log_line());
    Ok(report)
}

/// Trains from `opts.start_epoch + 1` through `hyper.epochs`, calling
/// `on_epoch` after each epoch. Checkpoints go to `opts.checkpoint_dir`.
pub fn train_with(
    model: &mut Model,
    dataset: &Dataset,
    hyper: &Hyperparams,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainResult> {
    hyper.validate()?;
    check_inputs(model, dataset)?;
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut reports = Vec::new();
    for epoch in opts.start_epoch + 1..=hyper.epochs {
        let report = train_epoch(model, dataset, hyper, epoch)?;
        on_epoch(&report)?;
        reports.push(report);
        if let Some(dir) = &opts.checkpoint_dir {
            if opts.checkpoint_every > 0 && epoch % opts.checkpoint_every == 0 {
                model.save(&dir.join(checkpoint_name(epoch)))?;
            }
        }
    }
    let final_checkpoint = match &opts.checkpoint_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            model.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainResult {
        reports,
        final_checkpoint,
    })
}

/// Trains for `hyper.epochs` epochs without checkpoints.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    hyper: &Hyperparams,
) -> Result<Vec<EpochReport>> {
    Ok(train_with(model, dataset, hyper, &TrainOptions::default(), |_| Ok(()))?.reports)
}

/// Writes the TSV training log.
pub fn write_log(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut text = String::from(EpochReport::LOG_HEADER);
    text.push('\n');
    for r in reports {
        text.push_str(&r.log_line());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
