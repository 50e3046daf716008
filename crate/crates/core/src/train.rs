//! Training orchestration: seeded minibatch shuffling, fresh Gaussian
//! noise per epoch, periodic checkpoints and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::container::DatasetContainer;
use crate::error::{Error, Result};
use crate::model::{residual_mse_loss, DnCnn, Gradients};
use crate::noise::noise_field_f32;
use crate::optim::{Optimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::tensor::{Mode, Tensor4};
use crate::util::{atomic_write, derive_seed};

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_CHECKPOINT_INTERVAL: usize = 5;

// seed-derivation domains, so shuffling and noise draw independent streams
const SEED_SHUFFLE: u64 = 1;
const SEED_NOISE: u64 = 2;

/// Which update rule drives training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

/// Everything a training run needs, recorded verbatim into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub container: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma: f64,
    pub depth: usize,
    pub width: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
    /// Multiply the learning rate by 0.1 at the start of this epoch.
    pub lr_decay_epoch: Option<usize>,
    /// Clip the global gradient norm to this value before each step.
    pub clip_max_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.checkpoint_interval < 1 {
            return Err(Error::InvalidArgument(
                "checkpoint interval must be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Progress and artifact log of one run; rewritten atomically at every
/// checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub first_batch_loss: f64,
    pub epoch_mean_loss: Vec<f64>,
    pub epoch_wall_seconds: Vec<f64>,
    pub checkpoints: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("run manifest: {e}")))
    }
}

/// Per-epoch statistics passed to the progress callback.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
    pub checkpoint_written: bool,
}

/// Result of a completed run.
pub struct TrainOutcome {
    pub model: DnCnn<f32>,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("checkpoint-epoch-{epoch:04}.dnc")
}

/// Runs the full training loop. Deterministic in the config seed: the
/// shuffle order, the per-item noise and therefore every checkpoint byte
/// depend only on the config.
pub fn train(config: &TrainConfig, mut progress: impl FnMut(&EpochStats)) -> Result<TrainOutcome> {
    config.validate()?;
    let container = DatasetContainer::load(&config.container)?;
    if container.count() == 0 {
        return Err(Error::InvalidArgument(
            "training container holds no patches".into(),
        ));
    }
    std::fs::create_dir_all(&config.out_dir)?;

    let (ph, pw) = (container.patch_h(), container.patch_w());
    let patch_len = ph * pw;
    let sigma_unit = config.sigma / 255.0;

    let mut model = DnCnn::<f32>::build(config.depth, config.width, 1, config.seed)?;
    let mut optimizer = match config.optimizer {
        OptimizerKind::Adam => Optimizer::adam(config.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)?,
        OptimizerKind::SgdMomentum => Optimizer::sgd(config.lr, config.momentum)?,
    };

    let mut manifest = RunManifest {
        config: config.clone(),
        first_batch_loss: f64::NAN,
        epoch_mean_loss: Vec::new(),
        epoch_wall_seconds: Vec::new(),
        checkpoints: Vec::new(),
    };
    let manifest_path = config.out_dir.join("run-manifest.json");

    let mut indices: Vec<usize> = (0..container.count()).collect();
    let mut first_batch_seen = false;

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        if config.lr_decay_epoch == Some(epoch) {
            optimizer.set_lr(optimizer.lr() * 0.1)?;
        }
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SEED_SHUFFLE, epoch as u64]));
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for batch_ids in indices.chunks(config.batch_size) {
            let n = batch_ids.len();
            let mut clean = Tensor4::<f32>::zeros(n, 1, ph, pw);
            let mut noisy = Tensor4::<f32>::zeros(n, 1, ph, pw);
            for (slot, &patch_idx) in batch_ids.iter().enumerate() {
                let bytes = container.patch_bytes(patch_idx);
                let noise = noise_field_f32(
                    patch_len,
                    sigma_unit,
                    derive_seed(config.seed, &[SEED_NOISE, epoch as u64, patch_idx as u64]),
                );
                let c = &mut clean.item_mut(slot)[..patch_len];
                for i in 0..patch_len {
                    c[i] = bytes[i] as f32 / 255.0;
                }
                let y = &mut noisy.item_mut(slot)[..patch_len];
                for i in 0..patch_len {
                    y[i] = bytes[i] as f32 / 255.0 + noise[i];
                }
            }

            let (pred, cache) = model.forward(&noisy, Mode::Train)?;
            let (report, grad_res) = residual_mse_loss(&pred.residual, &noisy, &clean)?;
            let mut grads = model.backward(cache.as_ref().expect("train cache"), &grad_res)?;
            if let Some(max_norm) = config.clip_max_norm {
                clip_grad_norm(&mut grads, max_norm);
            }
            let mut pairs = model.grad_pairs(&grads)?;
            optimizer.step(&mut pairs)?;

            if !first_batch_seen {
                manifest.first_batch_loss = report.value;
                first_batch_seen = true;
            }
            loss_sum += report.value;
            batches += 1;
        }

        let mean_loss = loss_sum / batches as f64;
        let wall = epoch_start.elapsed().as_secs_f64();
        manifest.epoch_mean_loss.push(mean_loss);
        manifest.epoch_wall_seconds.push(wall);

        let checkpoint_due = epoch % config.checkpoint_interval == 0 || epoch == config.epochs;
        if checkpoint_due {
            let name = checkpoint_file_name(epoch);
            save_checkpoint(&model, epoch as u32, &config.out_dir.join(&name))?;
            if manifest.checkpoints.last() != Some(&name) {
                manifest.checkpoints.push(name);
            }
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
            atomic_write(&manifest_path, json.as_bytes())?;
        }
        progress(&EpochStats {
            epoch,
            mean_loss,
            wall_seconds: wall,
            checkpoint_written: checkpoint_due,
        });
    }

    Ok(TrainOutcome {
        model,
        manifest,
        manifest_path,
    })
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Gradients<f32>, max_norm: f64) {
    let mut sq = 0.0f64;
    for s in grads.slices() {
        for &v in s {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for l in &mut grads.layers {
            for v in l.weights.as_mut_slice() {
                *v *= scale;
            }
            for v in &mut l.bias {
                *v *= scale;
            }
            if let Some(g) = &mut l.gamma {
                for v in g {
                    *v *= scale;
                }
            }
            if let Some(b) = &mut l.beta {
                for v in b {
                    *v *= scale;
                }
            }
        }
    }
}
