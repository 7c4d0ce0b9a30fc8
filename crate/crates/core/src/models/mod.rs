//! The double-branch CNN, its two ablations and the value iteration network
//! baseline, plus whole-map Q evaluation.

mod branched;
mod head;
mod tabular;
mod vin;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, MapRecord, Pos};
use crate::netcore::{
    architecture_fingerprint, load_checkpoint, ops, restore_into, save_checkpoint,
    softmax_xent_logit_grad, L2Mode, LayerSpec, ParamStore, Scalar, Tape, Tensor,
};
use crate::{Error, Result};

pub use branched::{BranchTwoKind, BranchedNet};
pub use head::Query;
pub use tabular::{greedy_action_sets, tabular_vi, ValueTable};
pub use vin::VinNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Dbcnn,
    Vin,
    Resnet,
    Dcnn,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Dbcnn, Arch::Vin, Arch::Resnet, Arch::Dcnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Dbcnn => "dbcnn",
            Arch::Vin => "vin",
            Arch::Resnet => "resnet",
            Arch::Dcnn => "dcnn",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidSpec(format!("unknown architecture {s:?}")))
    }
}

fn default_feature_width() -> usize {
    10
}

fn default_downsample() -> (usize, usize) {
    (4, 4)
}

fn default_vin_iterations() -> usize {
    80
}

/// Architecture configuration. Serialized as JSON into checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Width of the global feature f1 and of the local feature map.
    #[serde(default = "default_feature_width")]
    pub feature_width: usize,
    /// Downsampling of the reprocessing layers (rows, cols).
    #[serde(default = "default_downsample")]
    pub downsample: (usize, usize),
    #[serde(default = "default_vin_iterations")]
    pub vin_iterations: usize,
    /// Append (row/H, col/W) to the action head's input.
    #[serde(default)]
    pub coord_augment: bool,
}

impl ModelSpec {
    pub fn new(arch: Arch, height: usize, width: usize, channels: usize) -> Self {
        ModelSpec {
            arch,
            height,
            width,
            channels,
            feature_width: default_feature_width(),
            downsample: default_downsample(),
            vin_iterations: default_vin_iterations(),
            coord_augment: false,
        }
    }

    pub fn with_vin_iterations(mut self, k: usize) -> Self {
        self.vin_iterations = k;
        self
    }

    pub fn with_coord_augment(mut self, on: bool) -> Self {
        self.coord_augment = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad(format!(
                "input: empty input shape {}x{}x{}",
                self.height, self.width, self.channels
            ));
        }
        if self.feature_width == 0 {
            return bad("Fc-2/Conv-21: feature width must be positive".into());
        }
        match self.arch {
            Arch::Vin => {
                if self.vin_iterations == 0 {
                    return bad("Q-conv: VIN needs at least one iteration".into());
                }
            }
            _ => {
                if self.downsample != (4, 4) {
                    return bad(format!(
                        "Pool-01: two stride-2 pools downsample by (4,4), spec says {:?}",
                        self.downsample
                    ));
                }
                if self.height % 4 != 0 || self.width % 4 != 0 {
                    return bad(format!(
                        "Pool-01: input {}x{} is not divisible by the downsample factors",
                        self.height, self.width
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Net {
    Branched(BranchedNet),
    Vin(VinNet),
}

/// What [`Model::backward`] needs from a recorded forward pass.
#[derive(Debug)]
pub struct Recording<T> {
    pub(crate) tape: Tape<T>,
    pub(crate) queries: Vec<Query>,
    pub(crate) feature_shapes: Vec<Vec<usize>>,
}

impl Net {
    /// Logits (B×8) for `queries` over a batch of input maps (M×C×H×W).
    pub fn forward_logits<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        input: Tensor<T>,
        queries: &[Query],
        record: bool,
    ) -> Result<(Tensor<T>, Option<Recording<T>>)> {
        match self {
            Net::Branched(n) => n.forward(params, input, queries, record),
            Net::Vin(n) => n.forward(params, input, queries, record),
        }
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        rec: Recording<T>,
        grad_logits: Tensor<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Net::Branched(n) => n.backward(params, rec, grad_logits),
            Net::Vin(n) => n.backward(params, rec, grad_logits),
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        match self {
            Net::Branched(n) => n.layer_specs(),
            Net::Vin(n) => n.layer_specs(),
        }
    }

    pub fn has_skip_connections(&self) -> bool {
        self.layer_specs()
            .iter()
            .any(|s| s.kind == crate::netcore::LayerKind::Residual)
    }
}

/// Post-softmax action scores for every cell of a map.
#[derive(Clone, Debug, PartialEq)]
pub struct QMap {
    height: usize,
    width: usize,
    scores: Vec<[f32; 8]>,
}

impl QMap {
    pub fn from_scores(height: usize, width: usize, scores: Vec<[f32; 8]>) -> Self {
        assert_eq!(scores.len(), height * width);
        QMap {
            height,
            width,
            scores,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, p: Pos) -> &[f32; 8] {
        &self.scores[p.row * self.width + p.col]
    }

    /// Estimated state value: the largest action score.
    pub fn value(&self, p: Pos) -> f32 {
        self.get(p)
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn greedy(&self, p: Pos) -> Action {
        greedy_action(self.get(p))
    }
}

/// Argmax over the eight scores, lowest action ID on ties.
pub fn greedy_action(scores: &[f32; 8]) -> Action {
    let mut best = 0;
    for i in 1..8 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f32,
    pub data_loss: f32,
    /// Samples whose greedy prediction equals the label.
    pub correct: usize,
    pub predictions_len: usize,
}

#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore<f32>,
    net: Net,
    forward_count: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            spec: self.spec.clone(),
            params: self.params.clone(),
            net: self.net.clone(),
            forward_count: AtomicUsize::new(self.forward_passes()),
        }
    }
}

impl Model {
    /// Builds the architecture named by `spec.arch`; weights are drawn from
    /// `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = match spec.arch {
            Arch::Dbcnn => Net::Branched(BranchedNet::build(
                &spec,
                &mut params,
                &mut rng,
                true,
                BranchTwoKind::Residual,
            )),
            Arch::Resnet => Net::Branched(BranchedNet::build(
                &spec,
                &mut params,
                &mut rng,
                false,
                BranchTwoKind::Residual,
            )),
            Arch::Dcnn => Net::Branched(BranchedNet::build(
                &spec,
                &mut params,
                &mut rng,
                false,
                BranchTwoKind::Plain,
            )),
            Arch::Vin => Net::Vin(VinNet::build(&spec, &mut params, &mut rng)),
        };
        for s in net.layer_specs() {
            s.validate()?;
        }
        Ok(Model {
            spec,
            params,
            net,
            forward_count: AtomicUsize::new(0),
        })
    }

    fn build_checked(spec: ModelSpec, seed: u64, arch: Arch) -> Result<Model> {
        if spec.arch != arch {
            return Err(Error::InvalidSpec(format!(
                "builder for {} called with arch {}",
                arch.as_str(),
                spec.arch.as_str()
            )));
        }
        Model::build(spec, seed)
    }

    pub fn build_dbcnn(spec: ModelSpec, seed: u64) -> Result<Model> {
        Model::build_checked(spec, seed, Arch::Dbcnn)
    }

    pub fn build_vin(spec: ModelSpec, seed: u64) -> Result<Model> {
        Model::build_checked(spec, seed, Arch::Vin)
    }

    pub fn build_resnet(spec: ModelSpec, seed: u64) -> Result<Model> {
        Model::build_checked(spec, seed, Arch::Resnet)
    }

    pub fn build_dcnn(spec: ModelSpec, seed: u64) -> Result<Model> {
        Model::build_checked(spec, seed, Arch::Dcnn)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.net.layer_specs()
    }

    pub fn fingerprint(&self) -> u64 {
        architecture_fingerprint(
            &self.layer_specs(),
            &serde_json::to_string(&self.spec).expect("spec serializes"),
        )
    }

    /// Trunk evaluations since construction.
    pub fn forward_passes(&self) -> usize {
        self.forward_count.load(Ordering::Relaxed)
    }

    fn check_record(&self, rec: &MapRecord) -> Result<()> {
        let got = (rec.height(), rec.width(), rec.channels());
        let want = (self.spec.height, self.spec.width, self.spec.channels);
        if got != want {
            return Err(Error::dim(
                "input",
                format!("model expects {want:?} (H, W, C), map is {got:?}"),
            ));
        }
        Ok(())
    }

    /// Stacks the input planes of several maps into one M×C×H×W tensor.
    pub fn batch_input(&self, records: &[&MapRecord]) -> Result<Tensor<f32>> {
        let mut data = Vec::new();
        for r in records {
            self.check_record(r)?;
            data.extend(r.input_planes());
        }
        Tensor::from_vec(
            &[
                records.len(),
                self.spec.channels,
                self.spec.height,
                self.spec.width,
            ],
            data,
        )
    }

    /// Softmax scores (B×8) for queries over a stacked input batch.
    pub fn predict(&self, input: Tensor<f32>, queries: &[Query]) -> Result<Tensor<f32>> {
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let (logits, _) = self
            .net
            .forward_logits(&self.params, input, queries, false)?;
        ops::softmax(&logits)
    }

    /// Records a forward pass for training.
    pub fn forward_train(
        &self,
        input: Tensor<f32>,
        queries: &[Query],
    ) -> Result<(Tensor<f32>, Recording<f32>)> {
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let (logits, rec) = self
            .net
            .forward_logits(&self.params, input, queries, true)?;
        Ok((ops::softmax(&logits)?, rec.expect("recorded")))
    }

    /// Accumulates gradients of a recorded pass into the parameter store.
    pub fn backward(&mut self, rec: Recording<f32>, grad_logits: Tensor<f32>) -> Result<()> {
        self.net.backward(&mut self.params, rec, grad_logits)?;
        Ok(())
    }

    /// Zeroes gradients, then computes the mean cross-entropy + λΩ loss of a
    /// batch and its parameter gradients.
    pub fn loss_batch(
        &mut self,
        input: Tensor<f32>,
        queries: &[Query],
        labels: &[usize],
        lambda: f32,
        mode: L2Mode,
    ) -> Result<BatchLoss> {
        if queries.len() != labels.len() || queries.is_empty() {
            return Err(Error::dim(
                "loss",
                format!("{} queries for {} labels", queries.len(), labels.len()),
            ));
        }
        self.params.zero_grad();
        let (probs, rec) = self.forward_train(input, queries)?;
        let out = crate::netcore::xent_l2_loss(&probs, labels, &mut self.params, lambda, mode)?;
        let grad_logits = softmax_xent_logit_grad(&probs, labels);
        self.backward(rec, grad_logits)?;
        let correct = probs
            .data()
            .chunks(8)
            .zip(labels)
            .filter(|(row, &l)| greedy_action((*row).try_into().unwrap()).id() as usize == l)
            .count();
        Ok(BatchLoss {
            loss: out.loss,
            data_loss: out.data_loss,
            correct,
            predictions_len: labels.len(),
        })
    }

    /// Action scores for every cell from a single forward pass.
    pub fn forward_qmap(&self, rec: &MapRecord) -> Result<QMap> {
        let input = self.batch_input(&[rec])?;
        let (h, w) = (self.spec.height, self.spec.width);
        let (dr, dc) = self.spec.downsample;
        let per_block = matches!(self.net, Net::Branched(_)) && !self.spec.coord_augment;
        let queries: Vec<Query> = if per_block {
            (0..h.div_ceil(dr))
                .flat_map(|i| {
                    (0..w.div_ceil(dc)).map(move |j| Query::new(0, Pos::new(i * dr, j * dc)))
                })
                .collect()
        } else {
            (0..h)
                .flat_map(|r| (0..w).map(move |c| Query::new(0, Pos::new(r, c))))
                .collect()
        };
        let probs = self.predict(input, &queries)?;
        let rows: Vec<[f32; 8]> = probs
            .data()
            .chunks(8)
            .map(|r| r.try_into().unwrap())
            .collect();
        let scores = if per_block {
            let bw = w.div_ceil(dc);
            (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .map(|(r, c)| rows[(r / dr) * bw + c / dc])
                .collect()
        } else {
            rows
        };
        Ok(QMap::from_scores(h, w, scores))
    }

    /// Action scores at one position.
    pub fn forward_single(&self, rec: &MapRecord, pos: Pos) -> Result<[f32; 8]> {
        if !rec.map.in_bounds(pos) {
            return Err(Error::Precondition(format!(
                "position {pos:?} outside {}x{} map",
                rec.height(),
                rec.width()
            )));
        }
        let input = self.batch_input(&[rec])?;
        let probs = self.predict(input, &[Query::new(0, pos)])?;
        Ok(probs.data().try_into().unwrap())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_string(&self.spec)?;
        save_checkpoint(path, &self.params, self.fingerprint(), Some(&config))
    }

    /// Rebuilds the model described by a checkpoint's embedded config and
    /// loads its weights.
    pub fn load(path: &Path) -> Result<Model> {
        let ckpt = load_checkpoint(path)?;
        let config = ckpt
            .config
            .as_deref()
            .ok_or_else(|| Error::format(path, "checkpoint has no model config"))?;
        let spec: ModelSpec = serde_json::from_str(config)?;
        let mut model = Model::build(spec, 0)?;
        let fp = model.fingerprint();
        restore_into(&ckpt, fp, &mut model.params)?;
        Ok(model)
    }

    /// Loads weights into this model, refusing checkpoints of another
    /// architecture.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let ckpt = load_checkpoint(path)?;
        let fp = self.fingerprint();
        restore_into(&ckpt, fp, &mut self.params)
    }
}
