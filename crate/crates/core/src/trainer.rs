//! Normal-only training with KL annealing, Adam, and directory checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::{augment, RoiTensor};
use crate::vae::{batch_gradient, LossBreakdown, VaeConfig, VaeError, VaeParams};
use crate::{stream_seed, Label};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_EPS: u64 = 3;
const STREAM_SPLIT: u64 = 4;

const CHECKPOINT_FORMAT: &str = "splitsense-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training data")]
    EmptyData,
    #[error("dataset has no normal items")]
    NoNormals,
    #[error("ROI {index} does not fit the model: {message}")]
    BadRoi { index: usize, message: String },
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("corrupt checkpoint at {path}: {message}")]
    CorruptCheckpoint { path: String, message: String },
    #[error(transparent)]
    Model(#[from] VaeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

fn default_in_channels() -> usize {
    16
}
fn default_spatial() -> usize {
    210
}
fn default_widths() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}

/// Training hyperparameters. Missing keys take their defaults; unknown keys
/// are rejected when read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeded shuffles and noise. When off, both are drawn from entropy.
    pub reproducible: bool,
    /// Dihedral variants per ROI fed to training, 1 (identity only) to 8.
    pub augmentations: usize,
    /// Model scale; shrink for quick runs.
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_spatial")]
    pub spatial: usize,
    #[serde(default = "default_widths")]
    pub channel_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2500,
            batch_size: 32,
            learning_rate: 1e-3,
            beta_max: 10.0,
            latent_dim: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            reproducible: true,
            augmentations: 1,
            in_channels: default_in_channels(),
            spatial: default_spatial(),
            channel_widths: default_widths(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs < 2 {
            return bad("epochs must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.beta_max > 0.0) || !self.beta_max.is_finite() {
            return bad("beta_max must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam moment decays must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(1..=8).contains(&self.augmentations) {
            return bad("augmentations must be between 1 and 8");
        }
        self.vae_config().validate()?;
        Ok(())
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            in_channels: self.in_channels,
            spatial: self.spatial,
            channel_widths: self.channel_widths.clone(),
            latent_dim: self.latent_dim,
            ..VaeConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// KL weight for epoch `t` of `total`: linear ramp from 0 to `beta_max` over
/// the first half, then constant.
pub fn beta_schedule(t: usize, total: usize, beta_max: f64) -> f64 {
    if 2 * t <= total {
        (2 * t) as f64 / total as f64 * beta_max
    } else {
        beta_max
    }
}

/// Train/test partition: only normals train, every anomalous item tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Sends `round(ratio * normals)` seeded-random normals to training and
/// everything else to test. Both lists keep input order.
pub fn split_dataset(items: &[(String, Label)], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TrainError::InvalidConfig(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut normals: Vec<usize> = (0..items.len()).filter(|&i| items[i].1 == Label::Normal).collect();
    if normals.is_empty() {
        return Err(TrainError::NoNormals);
    }
    let n_train = (ratio * normals.len() as f64).round() as usize;
    normals.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(stream_seed(seed, STREAM_SPLIT)));
    let mut in_train = vec![false; items.len()];
    for &i in &normals[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, (id, _)) in items.iter().enumerate() {
        if in_train[i] { &mut train } else { &mut test }.push(id.clone());
    }
    Ok(DatasetSplit {
        train,
        test,
        ratio,
        seed,
    })
}

/// Per-epoch losses, averaged over the samples seen in that epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vae: VaeConfig,
    pub params: VaeParams<f32>,
    pub train: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub wavelengths: Vec<f64>,
}

/// Adam with bias correction over a flat parameter buffer.
struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(config: &TrainConfig, len: usize) -> Self {
        Adam {
            lr: config.learning_rate,
            b1: config.adam_beta1,
            b2: config.adam_beta2,
            eps: config.adam_eps,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn update(&mut self, params: &mut [f32], grad: &[f32]) {
        self.step += 1;
        let (b1, b2) = (self.b1 as f32, self.b2 as f32);
        let c1 = 1.0 - self.b1.powi(self.step);
        let c2 = 1.0 - self.b2.powi(self.step);
        let lr = (self.lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / ((*v).sqrt() / c2_sqrt + eps);
        }
    }
}

/// Weights a run with `config` starts from.
pub fn initial_params(config: &TrainConfig) -> Result<VaeParams<f32>> {
    Ok(VaeParams::<f32>::init(
        &config.vae_config(),
        stream_seed(config.seed, STREAM_INIT),
    )?)
}

pub fn train(config: &TrainConfig, data: &[RoiTensor]) -> Result<Checkpoint> {
    train_with_progress(config, data, |_| {})
}

/// Runs `config.epochs` epochs of minibatch Adam on `recon + beta(t) * kl`,
/// with the gradient summed over each batch. `progress` sees every epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    data: &[RoiTensor],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let vae = config.vae_config();
    for (index, roi) in data.iter().enumerate() {
        if roi.channels() != vae.in_channels || roi.size() != vae.spatial {
            return Err(TrainError::BadRoi {
                index,
                message: format!(
                    "{}x{}x{} ROI for a {}x{}x{} model",
                    roi.channels(),
                    roi.size(),
                    roi.size(),
                    vae.in_channels,
                    vae.spatial,
                    vae.spatial
                ),
            });
        }
        if roi.wavelengths() != data[0].wavelengths() {
            return Err(TrainError::BadRoi {
                index,
                message: "band wavelengths differ from the first ROI".into(),
            });
        }
    }

    let samples: Vec<Vec<f32>> = data
        .iter()
        .flat_map(|roi| {
            if config.augmentations == 1 {
                vec![roi.data().to_vec()]
            } else {
                augment(roi)
                    .into_iter()
                    .take(config.augmentations)
                    .map(|r| r.data().to_vec())
                    .collect()
            }
        })
        .collect();

    let mut params = initial_params(config)?;
    let mut adam = Adam::new(config, params.len());
    let (mut shuffle_rng, mut eps_rng) = if config.reproducible {
        (
            Xoshiro256PlusPlus::seed_from_u64(stream_seed(config.seed, STREAM_SHUFFLE)),
            Xoshiro256PlusPlus::seed_from_u64(stream_seed(config.seed, STREAM_EPS)),
        )
    } else {
        (Xoshiro256PlusPlus::from_entropy(), Xoshiro256PlusPlus::from_entropy())
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let beta = beta_schedule(epoch, config.epochs, config.beta_max);
        order.shuffle(&mut shuffle_rng);
        let mut seen = Vec::with_capacity(samples.len());
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&[f32]> = batch.iter().map(|&i| samples[i].as_slice()).collect();
            let eps: Vec<Vec<f32>> = batch
                .iter()
                .map(|_| (0..vae.latent_dim).map(|_| eps_rng.sample(StandardNormal)).collect())
                .collect();
            let (grad, losses) = batch_gradient(&params, &inputs, &eps, beta)?;
            if losses.iter().any(|l| !l.total.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss(epoch));
            }
            adam.update(params.as_mut_slice(), &grad);
            seen.extend(losses);
        }
        if !params.all_finite() {
            return Err(TrainError::NonFiniteLoss(epoch));
        }
        let sum = LossBreakdown::sum(&seen, beta);
        let n = seen.len() as f64;
        let record = EpochRecord {
            epoch,
            beta,
            recon: sum.recon / n,
            kl: sum.kl / n,
            total: sum.total / n,
        };
        progress(&record);
        history.push(record);
    }

    Ok(Checkpoint {
        vae,
        params,
        train: config.clone(),
        epoch: config.epochs,
        history,
        wavelengths: data[0].wavelengths().to_vec(),
    })
}

/// Loss history as CSV: epoch, beta, recon, kl, total.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,beta,recon,kl,total\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.beta, r.recon, r.kl, r.total));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    vae_config: VaeConfig,
    train_config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    wavelengths: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `dir/manifest.json` and `dir/tensors/<name>.bin` (little-endian f32).
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(io_err(&tensor_dir))?;
    let mut tensors = Vec::new();
    for (i, spec) in ckpt.params.layout().iter().enumerate() {
        let bytes: Vec<u8> = ckpt.params.tensor(i).iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = format!("tensors/{}.bin", spec.name);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            file,
            bytes: bytes.len(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: "float32-le".into(),
        vae_config: ckpt.vae.clone(),
        train_config: ckpt.train.clone(),
        epoch: ckpt.epoch,
        history: ckpt.history.clone(),
        wavelengths: ckpt.wavelengths.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let corrupt = |message: String| TrainError::CorruptCheckpoint {
        path: dir.display().to_string(),
        message,
    };
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unrecognized format {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.dtype != "float32-le" {
        return Err(corrupt(format!("unsupported dtype {}", manifest.dtype)));
    }
    let mut params = VaeParams::<f32>::zeros(&manifest.vae_config).map_err(|e| corrupt(e.to_string()))?;
    let layout = params.layout().to_vec();
    if layout.len() != manifest.tensors.len() {
        return Err(corrupt(format!(
            "{} tensors listed, architecture has {}",
            manifest.tensors.len(),
            layout.len()
        )));
    }
    let mut data = Vec::with_capacity(params.len());
    for (spec, entry) in layout.iter().zip(&manifest.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape || entry.bytes != spec.len * 4 {
            return Err(corrupt(format!(
                "tensor {} does not match the architecture",
                entry.name
            )));
        }
        let rel = Path::new(&entry.file);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(corrupt(format!("tensor path {} escapes the checkpoint", entry.file)));
        }
        let path: PathBuf = dir.join(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != entry.bytes {
            return Err(corrupt(format!(
                "{} holds {} bytes, expected {}",
                entry.file,
                bytes.len(),
                entry.bytes
            )));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(corrupt(format!("{} fails its hash check", entry.file)));
        }
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    params.as_mut_slice().copy_from_slice(&data);
    Ok(Checkpoint {
        vae: manifest.vae_config,
        params,
        train: manifest.train_config,
        epoch: manifest.epoch,
        history: manifest.history,
        wavelengths: manifest.wavelengths,
    })
}
