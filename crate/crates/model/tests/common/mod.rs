#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shotcap_model::{jitter_params, random_input, CaptionModel, ModelConfig, ModelInput};

/// D=8, two heads, one decoder layer, V=11, four visual tokens, six
/// modality tokens.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        decoder_layers: 1,
        frames: 2,
        height: 4,
        width: 4,
        patch: 2,
        tubelet: 2,
        vocab_size: 11,
        pose_dim: 6,
        max_len: 120,
        ..ModelConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A model with weights jittered away from the small-init regime.
pub fn jittered(config: ModelConfig, seed: u64) -> CaptionModel {
    let mut model = CaptionModel::new(config).unwrap();
    jitter_params(&mut model, 0.3, &mut rng(seed));
    model
}

/// `n` inputs with `len` tokens each.
pub fn inputs(config: &ModelConfig, n: usize, len: usize, seed: u64) -> Vec<ModelInput> {
    let mut r = rng(seed);
    (0..n).map(|_| random_input(config, len, &mut r)).collect()
}

pub fn refs(xs: &[ModelInput]) -> Vec<&ModelInput> {
    xs.iter().collect()
}

pub fn set(model: &mut CaptionModel, name: &str, rows: &[&[f64]]) {
    let id = model
        .param(name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    let m = model.params.value_mut(id);
    assert_eq!(m.nrows(), rows.len(), "{name}");
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(m.ncols(), r.len(), "{name}");
        for (j, &v) in r.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
}

pub fn fill(model: &mut CaptionModel, name: &str, value: f64) {
    let id = model
        .param(name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    model.params.value_mut(id).fill(value);
}
