//! Optimizer, single training steps and the epoch loop.

use crate::model::{CaptionModel, Losses, ModelInput};
use crate::tape::{Grads, Mat, ParamStore};
use crate::ModelError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept for every parameter
/// but only trainable ones are ever updated.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params
            .entries()
            .iter()
            .map(|e| Mat::zeros(e.value.raw_dim()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.trainable_ids().collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.value_mut(id);
            match grads.get(id) {
                Some(g) => ndarray::Zip::from(&mut *m)
                    .and(&mut *v)
                    .and(g)
                    .for_each(|m, v, &g| {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    }),
                None => {
                    m.mapv_inplace(|a| c.beta1 * a);
                    v.mapv_inplace(|a| c.beta2 * a);
                }
            }
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let step = (m / bc1) / ((v / bc2).sqrt() + c.eps);
                    *p -= c.lr * (step + c.weight_decay * *p);
                });
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(rename = "L_cap")]
    pub caption: f64,
    #[serde(rename = "L_sf")]
    pub semantic: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    pub beta: f64,
    pub lr: f64,
}

/// Computes the batch gradient and applies one optimizer update. A
/// non-finite loss or gradient leaves the parameters untouched.
pub fn train_step(
    model: &mut CaptionModel,
    opt: &mut AdamW,
    batch: &[&ModelInput],
) -> Result<StepRecord, ModelError> {
    let (grads, losses) = model.gradients(batch)?;
    if !losses.total.is_finite() || !grads.all_finite() {
        return Err(ModelError::NonFiniteLoss { step: opt.step + 1 });
    }
    opt.update(&mut model.params, &grads);
    Ok(StepRecord {
        step: opt.step,
        caption: losses.caption,
        semantic: losses.semantic,
        total: losses.total,
        beta: model.beta(),
        lr: opt.config.lr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            max_steps: None,
            seed: 7,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: u64,
    pub train: Losses,
    pub val: Option<Losses>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    /// Epoch whose parameters gave the lowest validation `L_total`
    /// (training loss when there is no validation set).
    pub best_epoch: usize,
    pub best_params: ParamStore,
    /// Optimizer state right after the best epoch.
    pub best_optimizer: AdamW,
}

fn mean_losses(
    model: &CaptionModel,
    xs: &[ModelInput],
    batch: usize,
) -> Result<Losses, ModelError> {
    let mut acc = Losses {
        caption: 0.0,
        semantic: 0.0,
        total: 0.0,
    };
    let mut weight = 0.0;
    for chunk in xs.chunks(batch.max(1)) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        let l = model.losses(&refs)?;
        let w = chunk.len() as f64;
        acc.caption += w * l.caption;
        acc.semantic += w * l.semantic;
        acc.total += w * l.total;
        weight += w;
    }
    acc.caption /= weight;
    acc.semantic /= weight;
    acc.total /= weight;
    Ok(acc)
}

/// Shuffled mini-batch training; `on_step` sees every log record.
pub fn fit(
    model: &mut CaptionModel,
    opt: &mut AdamW,
    train: &[ModelInput],
    val: &[ModelInput],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore, AdamW)> = None;
    let mut steps = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut acc, mut seen) = ((0.0, 0.0, 0.0), 0.0);
        let mut stopped = false;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stopped = true;
                break;
            }
            let batch: Vec<&ModelInput> = chunk.iter().map(|&i| &train[i]).collect();
            let rec = train_step(model, opt, &batch)?;
            on_step(&rec);
            let w = batch.len() as f64;
            acc.0 += w * rec.caption;
            acc.1 += w * rec.semantic;
            acc.2 += w * rec.total;
            seen += w;
            steps += 1;
        }
        if seen == 0.0 {
            break;
        }
        let train_losses = Losses {
            caption: acc.0 / seen,
            semantic: acc.1 / seen,
            total: acc.2 / seen,
        };
        let val_losses = if val.is_empty() {
            None
        } else {
            Some(mean_losses(model, val, cfg.batch_size)?)
        };
        let score = val_losses.map_or(train_losses.total, |l| l.total);
        if best.as_ref().is_none_or(|(b, ..)| score < *b) {
            best = Some((score, epoch, model.params.clone(), opt.clone()));
        }
        epochs.push(EpochSummary {
            epoch,
            steps: opt.step,
            train: train_losses,
            val: val_losses,
        });
        if stopped {
            break;
        }
    }
    let (_, best_epoch, best_params, best_optimizer) =
        best.unwrap_or_else(|| (f64::NAN, 0, model.params.clone(), opt.clone()));
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_params,
        best_optimizer,
    })
}
