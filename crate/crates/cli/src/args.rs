//! Command-line flags. Every subcommand also reads `--config FILE`, a JSON
//! object keyed by the long flag names (with underscores); flags given on the
//! command line win over the file.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "roverplan",
    version,
    about = "Learned global path planning for planetary rovers"
)]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset of grid maps or crater scenes.
    Gen(GenArgs),
    /// Train a planner network.
    Train(TrainArgs),
    /// Report accuracy and success rate.
    Eval(EvalArgs),
    /// Roll out trajectories from given starts.
    Plan(PlanArgs),
    /// Write value maps and trajectory overlays.
    Viz(VizArgs),
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// grid or crater
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Maps are SIZE x SIZE.
    #[arg(long)]
    pub size: Option<usize>,
    /// Obstacle probability per cell (grid maps).
    #[arg(long)]
    pub density: Option<f64>,
    /// Craters per scene (crater scenes).
    #[arg(long)]
    pub craters: Option<usize>,
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelArgs {
    /// dbcnn, vin, resnet or dcnn (eval/plan/viz also take oracle, constant
    /// and random stubs).
    #[arg(long)]
    pub arch: Option<String>,
    /// Append normalized (row, col) to the action head input.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub coord_augment: Option<bool>,
    /// VIN recurrence depth.
    #[arg(long)]
    pub vin_k: Option<usize>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size (default 0.01, or 0.002 for vin).
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub lambda: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// squared or norm
    #[arg(long)]
    pub l2_mode: Option<String>,
    /// Rescale gradients whose global norm exceeds this (0: off).
    #[arg(long)]
    pub clip_norm: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra checkpoint every N epochs (0: final only).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epochs already completed by the resumed checkpoint (read from an
    /// `epoch_NNNN.ckpt` name when omitted).
    #[arg(long)]
    pub start_epoch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub starts_per_map: Option<usize>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub policy: PolicyArgs,
    /// Map index within the dataset.
    #[arg(long)]
    pub map: Option<usize>,
    /// Start cell as ROW,COL; repeatable.
    #[arg(long)]
    pub start: Vec<String>,
    /// One ROW,COL (or ROW COL) start per line.
    #[arg(long)]
    pub starts_file: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VizArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub policy: PolicyArgs,
    /// Map indices to render (default: the first test maps).
    #[arg(long, value_delimiter = ',')]
    pub maps: Vec<usize>,
    /// How many test maps to render when --maps is absent.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub starts_per_map: Option<usize>,
}

fn strip_empty(v: &mut Value) {
    if let Value::Object(map) = v {
        map.retain(|_, x| !(x.is_null() || x.as_array().is_some_and(Vec::is_empty)));
        for x in map.values_mut() {
            strip_empty(x);
        }
    }
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Reads a config file into the flag struct.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
}

/// Fills every flag missing from `cli` with the value from its config file.
pub fn with_config<T>(cli: T, config: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let Some(path) = config else { return Ok(cli) };
    let file: T = read_config(path)?;
    let mut merged = serde_json::to_value(file).expect("flags serialize");
    let mut top = serde_json::to_value(cli).expect("flags serialize");
    strip_empty(&mut merged);
    strip_empty(&mut top);
    overlay(&mut merged, top);
    serde_json::from_value(merged)
        .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
}

/// Parses `ROW,COL` or `ROW COL`.
pub fn parse_cell(s: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .collect();
    match parts.as_slice() {
        [r, c] => match (r.parse(), c.parse()) {
            (Ok(r), Ok(c)) => Ok((r, c)),
            _ => Err(CliError::usage(format!("bad cell {s:?}, expected ROW,COL"))),
        },
        _ => Err(CliError::usage(format!("bad cell {s:?}, expected ROW,COL"))),
    }
}
