//! Central finite-difference verification of the analytic gradients.

use crate::model::{CaptionModel, ModelInput};
use crate::tape::Mat;
use crate::{ModelConfig, ModelError};
use rand::Rng;
use serde::Serialize;
use shotcap_core::pipeline::{BOS, EOS};

/// Gradients below this magnitude (key biases, whose gradient vanishes
/// because softmax ignores a shared shift) are compared absolutely.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_err: f64,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|, SCALE_FLOOR)`
    /// over the tensor.
    pub rel_err: f64,
}

/// Compares the gradient of the batch `L_total` with central differences of
/// step `eps` for every trainable tensor.
pub fn check_gradients(
    model: &CaptionModel,
    batch: &[&ModelInput],
    eps: f64,
) -> Result<Vec<TensorCheck>, ModelError> {
    let (grads, _) = model.gradients(batch)?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.params.trainable_ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let shape = model.params.value(id).raw_dim();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(shape));
        let mut numeric = Mat::zeros(shape);
        for idx in ndarray::indices(shape) {
            let orig = probe.params.value(id)[idx];
            probe.params.value_mut(id)[idx] = orig + eps;
            let up = probe.losses(batch)?.total;
            probe.params.value_mut(id)[idx] = orig - eps;
            let down = probe.losses(batch)?.total;
            probe.params.value_mut(id)[idx] = orig;
            numeric[idx] = (up - down) / (2.0 * eps);
        }
        let max_abs_err = (&analytic - &numeric)
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        let scale = analytic
            .iter()
            .chain(numeric.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        out.push(TensorCheck {
            name: model.params.entry(id).name.clone(),
            entries: analytic.len(),
            max_abs_err,
            rel_err: max_abs_err / scale.max(SCALE_FLOOR),
        });
    }
    Ok(out)
}

/// A random well-formed input for `config` with `len` caption tokens
/// (BOS and EOS included) and a few missing shuttle frames.
pub fn random_input(config: &ModelConfig, len: usize, rng: &mut impl Rng) -> ModelInput {
    let mut uniform = |r: usize, c: usize| Mat::from_shape_simple_fn((r, c), || rng.gen::<f64>());
    let video = uniform(config.token_count(), config.patch_dim());
    let position = uniform(config.frames, 4);
    let pose = uniform(config.frames, config.pose_dim);
    let shuttle = uniform(config.frames, 2);
    let mut tokens = vec![BOS as usize];
    tokens.extend((2..len).map(|_| rng.gen_range(4..config.vocab_size)));
    tokens.push(EOS as usize);
    ModelInput {
        video,
        position,
        pose,
        shuttle,
        player_missing: vec![false; config.frames],
        shuttle_missing: (0..config.frames).map(|i| i % 3 == 1).collect(),
        tokens,
        semantic_target: (0..config.semantic_dim)
            .map(|_| f64::from(rng.gen_bool(0.3)))
            .collect(),
    }
}

/// Adds `N(0, std^2)` noise to every parameter so that no path through the
/// network sits near its small-init regime.
pub fn jitter_params(model: &mut CaptionModel, std: f64, rng: &mut impl Rng) {
    let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model
            .params
            .value_mut(id)
            .mapv_inplace(|v| v + rng.sample(normal));
    }
}
