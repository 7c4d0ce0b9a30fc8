//! Accuracy and success-rate metrics, plus value-map and trajectory images.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Dataset, Entry, MapRecord, Pos, Split};
use crate::models::QMap;
use crate::planner::{adjudicate, plan_multi, Policy, Trajectory};
use crate::{Error, Result};

/// Starts sampled per map when measuring success rate.
pub const DEFAULT_STARTS_PER_MAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    /// The prediction must equal the stored tie-broken label.
    Strict,
    /// Any action of the optimal set counts.
    Set,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AccuracyCounts {
    pub strict: usize,
    pub set: usize,
    pub total: usize,
}

impl AccuracyCounts {
    pub fn fraction(&self, mode: AccuracyMode) -> f64 {
        let hits = match mode {
            AccuracyMode::Strict => self.strict,
            AccuracyMode::Set => self.set,
        };
        hits as f64 / self.total as f64
    }
}

fn entries_by_map(dataset: &Dataset, split: Split) -> Result<BTreeMap<usize, Vec<Entry>>> {
    let entries = dataset.entries_in(split);
    if entries.is_empty() {
        return Err(Error::Empty(format!("{split:?} split has no samples")));
    }
    let mut by_map: BTreeMap<usize, Vec<Entry>> = BTreeMap::new();
    for e in entries {
        by_map.entry(e.map_id).or_default().push(e);
    }
    Ok(by_map)
}

/// Strict and set-mode hits over a split, one Q-map per map. Maps are
/// evaluated in parallel.
pub fn accuracy_counts<P: Policy + Sync + ?Sized>(
    policy: &P,
    dataset: &Dataset,
    split: Split,
) -> Result<AccuracyCounts> {
    let groups: Vec<(usize, Vec<Entry>)> = entries_by_map(dataset, split)?.into_iter().collect();
    let per_map: Vec<AccuracyCounts> = groups
        .par_iter()
        .map(|(map_id, entries)| {
            let rec = &dataset.records[*map_id];
            let qmap = policy.qmap(rec)?;
            let mut c = AccuracyCounts::default();
            for e in entries {
                let a = qmap.greedy(e.pos);
                c.strict += usize::from(a == e.label);
                c.set += usize::from(rec.labels.optimal_set(e.pos).contains(a));
                c.total += 1;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    Ok(per_map
        .iter()
        .fold(AccuracyCounts::default(), |acc, c| AccuracyCounts {
            strict: acc.strict + c.strict,
            set: acc.set + c.set,
            total: acc.total + c.total,
        }))
}

pub fn action_accuracy<P: Policy + Sync + ?Sized>(
    policy: &P,
    dataset: &Dataset,
    split: Split,
    mode: AccuracyMode,
) -> Result<f64> {
    Ok(accuracy_counts(policy, dataset, split)?.fraction(mode))
}

/// Up to `count` labeled cells of a map, drawn without replacement.
pub fn sample_starts(rec: &MapRecord, count: usize, seed: u64, map_id: usize) -> Vec<Pos> {
    let mut cells: Vec<Pos> = rec.labels.labeled_positions().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(map_id as u64);
    cells.shuffle(&mut rng);
    cells.truncate(count);
    cells
}

/// Rollouts from sampled starts on every map of a split.
pub fn rollouts<P: Policy + Sync + ?Sized>(
    policy: &P,
    dataset: &Dataset,
    split: Split,
    starts_per_map: usize,
    seed: u64,
) -> Result<Vec<(usize, Trajectory)>> {
    let ids = dataset.map_ids(split);
    if ids.is_empty() {
        return Err(Error::Empty(format!("{split:?} split has no maps")));
    }
    let per_map: Vec<Vec<Trajectory>> = ids
        .par_iter()
        .map(|&id| {
            let rec = &dataset.records[id];
            plan_multi(policy, rec, &sample_starts(rec, starts_per_map, seed, id))
        })
        .collect::<Result<_>>()?;
    Ok(ids
        .into_iter()
        .zip(per_map)
        .flat_map(|(id, ts)| ts.into_iter().map(move |t| (id, t)))
        .collect())
}

/// Fraction of safe rollouts.
pub fn success_rate<P: Policy + Sync + ?Sized>(
    policy: &P,
    dataset: &Dataset,
    split: Split,
    starts_per_map: usize,
    seed: u64,
) -> Result<f64> {
    let runs = rollouts(policy, dataset, split, starts_per_map, seed)?;
    if runs.is_empty() {
        return Err(Error::Empty(format!(
            "{split:?} split has no labeled cells"
        )));
    }
    Ok(runs.iter().filter(|(_, t)| adjudicate(t)).count() as f64 / runs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arch: String,
    pub seed: u64,
    /// Set-mode accuracies, the headline numbers.
    pub acc_train: f64,
    pub acc_test: f64,
    pub strict_acc_train: f64,
    pub strict_acc_test: f64,
    pub sr_train: f64,
    pub sr_test: f64,
    pub starts_per_map: usize,
    pub epoch_seconds: Vec<f64>,
}

/// Accuracy and success rate on both splits. A split without maps scores 0.
pub fn evaluate<P: Policy + Sync + ?Sized>(
    policy: &P,
    dataset: &Dataset,
    arch: &str,
    seed: u64,
    starts_per_map: usize,
    epoch_seconds: Vec<f64>,
) -> Result<MetricsReport> {
    let split_metrics = |split: Split| -> Result<(AccuracyCounts, f64)> {
        if dataset.entries_in(split).is_empty() {
            return Ok((
                AccuracyCounts {
                    total: 1,
                    ..Default::default()
                },
                0.0,
            ));
        }
        Ok((
            accuracy_counts(policy, dataset, split)?,
            success_rate(policy, dataset, split, starts_per_map, seed)?,
        ))
    };
    let (train, sr_train) = split_metrics(Split::Train)?;
    let (test, sr_test) = split_metrics(Split::Test)?;
    Ok(MetricsReport {
        arch: arch.to_string(),
        seed,
        acc_train: train.fraction(AccuracyMode::Set),
        acc_test: test.fraction(AccuracyMode::Set),
        strict_acc_train: train.fraction(AccuracyMode::Strict),
        strict_acc_test: test.fraction(AccuracyMode::Strict),
        sr_train,
        sr_test,
        starts_per_map,
        epoch_seconds,
    })
}

/// V̂ = max over actions of the Q-map scores, row-major.
pub fn value_estimates(qmap: &QMap) -> Vec<f32> {
    let mut v = Vec::with_capacity(qmap.height() * qmap.width());
    for r in 0..qmap.height() {
        for c in 0..qmap.width() {
            v.push(qmap.value(Pos::new(r, c)));
        }
    }
    v
}

/// Min-max normalization to 0..=255. Returns `None` for a constant input.
pub fn normalize_to_u8(values: &[f32]) -> Option<Vec<u8>> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return None;
    }
    let scale = 255.0 / f64::from(hi - lo);
    Some(
        values
            .iter()
            .map(|&v| (f64::from(v - lo) * scale).round().clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes the normalized value map as a binary PGM and returns the pixels.
/// A constant map is written as mid-gray with a warning.
pub fn export_value_map<P: Policy + Sync + ?Sized>(
    policy: &P,
    rec: &MapRecord,
    path: &Path,
) -> Result<Vec<u8>> {
    let values = value_estimates(&policy.qmap(rec)?);
    let pixels = normalize_to_u8(&values).unwrap_or_else(|| {
        log::warn!("value map is constant; writing a uniform gray image");
        vec![128; values.len()]
    });
    write_pgm(path, rec.width(), rec.height(), &pixels)?;
    Ok(pixels)
}

pub const START_COLOR: [u8; 3] = [0, 255, 0];
pub const GOAL_COLOR: [u8; 3] = [0, 0, 255];
pub const PATH_COLOR: [u8; 3] = [255, 0, 0];

/// Grayscale background of a map: the terrain image when present,
/// otherwise white free cells and black obstacles.
fn background(rec: &MapRecord) -> Vec<[u8; 3]> {
    match &rec.imagery {
        Some(im) => im
            .image
            .data()
            .iter()
            .map(|&v| {
                let g = (v * 255.0).round() as u8;
                [g, g, g]
            })
            .collect(),
        None => rec
            .map
            .cells()
            .iter()
            .map(|&c| if c == 0 { [255; 3] } else { [0; 3] })
            .collect(),
    }
}

/// Writes a binary PPM with paths in red, starts in green and the goal in
/// blue.
pub fn export_trajectory_overlay(
    rec: &MapRecord,
    trajectories: &[Trajectory],
    path: &Path,
) -> Result<()> {
    let (h, w) = (rec.height(), rec.width());
    let mut px = background(rec);
    let mut paint = |p: Pos, color: [u8; 3]| -> Result<()> {
        if p.row >= h || p.col >= w {
            return Err(Error::Precondition(format!(
                "trajectory cell {p:?} outside {h}x{w} image"
            )));
        }
        px[p.row * w + p.col] = color;
        Ok(())
    };
    for t in trajectories {
        for &c in &t.cells {
            paint(c, PATH_COLOR)?;
        }
    }
    for t in trajectories {
        paint(t.start(), START_COLOR)?;
    }
    paint(rec.map.goal(), GOAL_COLOR)?;
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(px.iter().flatten());
    fs::write(path, bytes)?;
    Ok(())
}
