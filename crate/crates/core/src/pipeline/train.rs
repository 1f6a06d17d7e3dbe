//! Joint end-to-end training of PriorNet and SinoNet.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{load_cases, prepare, sino_scale, Case, Manifest, Split};
use super::eval::Reference;
use crate::error::{MarError, Result};
use crate::io;
use crate::nn::{
    AdamConfig, AdamState, LossValues, LossWeights, Model, ModelSpec, NetInputs, Operators, Targets, Tensor, Variant,
};
use crate::projector::Projector;
use crate::rng::case_rng;

/// Offset of the shuffling streams from the initialization seed.
const SHUFFLE_KEY: u64 = 0x7368_7566_666c_6500;

/// Everything that determines a training run and the data it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Weight of the pre-composite sinogram term.
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Seed of initialization and shuffling.
    pub seed: u64,
    /// Seed of the simulated dataset.
    pub data_seed: u64,
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub width: usize,
    pub scales: usize,
    pub variant: Variant,
    /// Write a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    /// Target image of the reconstruction loss.
    pub fbp_target: Reference,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Desk scale: 64x64 phantoms, 200 training and 40 test cases, 60 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            lr: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            beta: 0.1,
            alpha1: 1.0,
            alpha2: 1.0,
            seed: 1,
            data_seed: 1,
            image_size: 64,
            n_train: 200,
            n_test: 40,
            width: 8,
            scales: 4,
            variant: Variant::Full,
            checkpoint_every: 10,
            fbp_target: Reference::Reconstruction,
        }
    }

    /// The published protocol: 416x416 images, 400 epochs, batch 8, lr 1e-4,
    /// networks at half the usual U-Net width.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 400,
            lr: 1e-4,
            image_size: 416,
            n_train: 1000,
            n_test: 200,
            width: 32,
            checkpoint_every: 20,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n_train == 0 {
            return Err(MarError::Config(
                "epochs, batch_size and n_train must be positive".into(),
            ));
        }
        self.adam().validate()?;
        self.loss_weights().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TrainConfig = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loss record of one epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    /// Mean over the epoch's training samples, before each update.
    pub train: Option<LossValues>,
    /// Mean over the held-out cases after the epoch.
    pub validation: LossValues,
    pub seconds: f64,
}

/// Network inputs and targets of one case.
pub struct Sample {
    pub inputs: NetInputs<f32>,
    pub targets: Targets<f32>,
}

pub fn make_samples(cases: &[Case], projector: &Projector, sigma: f64, fbp_target: Reference) -> Result<Vec<Sample>> {
    super::par_map(cases, |c| {
        let p = prepare(&c.s_ma, &c.trace, projector)?;
        let targets = Targets::new(&c.x_gt, &c.s_gt, &c.mask, sigma)?;
        Ok(Sample {
            inputs: NetInputs::new(&p.x_ma, &p.x_li, &p.s_li, &c.trace, sigma)?,
            targets: match fbp_target {
                Reference::Phantom => targets,
                r => targets.with_fbp_target(&r.image(c, projector)?)?,
            },
        })
    })
    .into_iter()
    .collect()
}

/// Mean loss of `model` over `samples`.
pub fn mean_loss(model: &Model, samples: &[Sample], ops: &Operators<f32>, w: &LossWeights) -> Result<LossValues> {
    let mut acc = LossValues::default();
    if samples.is_empty() {
        return Ok(acc);
    }
    let k = 1.0 / samples.len() as f64;
    for s in samples {
        acc.accumulate(&model.evaluate_loss(&s.inputs, &s.targets, ops, w)?, k);
    }
    Ok(acc)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Train on the cases of the dataset at `data_root`. When `out_dir` is given,
/// checkpoints (`epoch_NNNN.ckpt`, final `model.ckpt`) and `train_log.json`
/// are written there. `progress` sees every epoch record as it is produced.
pub fn train(
    cfg: &TrainConfig,
    data_root: &Path,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<Trained> {
    cfg.validate()?;
    let manifest = Manifest::load(data_root)?;
    if manifest.config.image_size != cfg.image_size {
        return Err(MarError::Config(format!(
            "dataset has {}x{} images, config expects {}",
            manifest.config.image_size, manifest.config.image_size, cfg.image_size
        )));
    }
    let train_cases = load_cases(data_root, &manifest, Split::Train)?;
    let test_cases = load_cases(data_root, &manifest, Split::Test)?;
    if train_cases.is_empty() {
        return Err(MarError::Data("dataset has no training cases".into()));
    }
    let projector = Arc::new(Projector::new(&manifest.geometry));
    let sigma = sino_scale(&train_cases)?;
    let train_samples = make_samples(&train_cases, &projector, sigma, cfg.fbp_target)?;
    let val_samples = make_samples(&test_cases, &projector, sigma, cfg.fbp_target)?;
    drop(train_cases);
    drop(test_cases);

    let mut spec = ModelSpec::new(cfg.variant, cfg.width, &manifest.geometry, sigma);
    spec.scales = cfg.scales;
    let model = Model::new(spec, cfg.seed)?;
    let ops = Operators::<f32>::new(projector, sigma)?;
    if let Some(dir) = out_dir {
        io::create_dir(dir)?;
    }
    train_samples_loop(cfg, model, &train_samples, &val_samples, &ops, out_dir, &mut progress)
}

/// The optimization loop on prepared samples.
pub fn train_samples_loop(
    cfg: &TrainConfig,
    mut model: Model,
    train: &[Sample],
    val: &[Sample],
    ops: &Operators<f32>,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    let weights = cfg.loss_weights();
    let mut adam = AdamState::new(cfg.adam(), &model.params);
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let start = Instant::now();
    let first = EpochLog {
        epoch: 0,
        step: 0,
        train: None,
        validation: mean_loss(&model, val, ops, &weights)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    progress(&first);
    log.push(first);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut case_rng(cfg.seed ^ SHUFFLE_KEY, epoch as u64));
        let mut epoch_loss = LossValues::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor<f32>> = model.params.iter().map(|p| Tensor::zeros(p.shape)).collect();
            for &i in batch {
                let (values, g) = model.loss_and_grad(&train[i].inputs, &train[i].targets, ops, &weights)?;
                epoch_loss.accumulate(&values, 1.0 / train.len() as f64);
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
            let k = 1.0 / batch.len() as f32;
            for g in grads.iter_mut() {
                for v in g.data.iter_mut() {
                    *v *= k;
                }
            }
            adam.step(&mut model.params, &grads)?;
            model.step += 1;
            if !model.params.iter().all(|p| p.is_finite()) {
                return Err(MarError::Divergence(format!(
                    "parameters became non-finite at step {}",
                    model.step
                )));
            }
        }
        model.epoch = epoch as u64;
        let validation = mean_loss(&model, val, ops, &weights)?;
        if !validation.is_finite() {
            return Err(MarError::Divergence(format!(
                "validation loss is not finite after epoch {epoch}"
            )));
        }
        let entry = EpochLog {
            epoch,
            step: model.step,
            train: Some(epoch_loss),
            validation,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&entry);
        log.push(entry);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
                model.save(&checkpoint_path(dir, epoch))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        model.save(&dir.join("model.ckpt"))?;
        io::write_json(&dir.join("train_log.json"), &log)?;
        io::write_json(&dir.join("train_config.json"), cfg)?;
    }
    Ok(Trained { model, log })
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}
