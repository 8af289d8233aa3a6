use crate::ModelError;
use serde::{Deserialize, Serialize};

/// How the decoder states are pooled before the semantic head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SfPooling {
    /// One mean over all caption positions, broadcast back to every position.
    #[default]
    Full,
    /// Position `t` uses the mean over positions `0..=t`, keeping the decoder causal.
    Prefix,
}

/// Which modality streams take part in fusion; disabled streams are fully masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalitySwitches {
    pub position: bool,
    pub pose: bool,
    pub shuttle: bool,
}

impl Default for ModalitySwitches {
    fn default() -> Self {
        Self {
            position: true,
            pose: true,
            shuttle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    pub refiner_layers: usize,
    /// Self-attention blocks in the stand-in visual backbone.
    pub backbone_blocks: usize,
    /// Backbone blocks (counted from the top) that receive updates; the patch
    /// embedding and all lower blocks stay frozen.
    pub trainable_backbone_blocks: usize,
    pub ffn_mult: usize,
    /// Weight of the cross-modal update added to the visual tokens.
    pub alpha: f64,
    /// Weight of the semantic loss in the total loss.
    pub lambda: f64,
    pub max_len: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub tubelet: usize,
    pub patch: usize,
    pub vocab_size: usize,
    /// Flattened pose features per frame (both players).
    pub pose_dim: usize,
    pub semantic_dim: usize,
    pub use_refiner: bool,
    pub use_sf: bool,
    pub sf_at_inference: bool,
    pub sf_pooling: SfPooling,
    pub modalities: ModalitySwitches,
    pub seed: u64,
}

pub const POSITION_DIM: usize = 4;
pub const SHUTTLE_DIM: usize = 2;
pub const BETA_INIT: f64 = 0.1;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            heads: 8,
            decoder_layers: 6,
            refiner_layers: 1,
            backbone_blocks: 2,
            trainable_backbone_blocks: 2,
            ffn_mult: 4,
            alpha: 0.2,
            lambda: 0.1,
            max_len: 120,
            frames: 16,
            height: 224,
            width: 224,
            channels: 3,
            tubelet: 2,
            patch: 16,
            vocab_size: 0,
            pose_dim: 68,
            semantic_dim: 22,
            use_refiner: true,
            use_sf: true,
            sf_at_inference: true,
            sf_pooling: SfPooling::Full,
            modalities: ModalitySwitches::default(),
            seed: 7,
        }
    }
}

impl ModelConfig {
    /// A laptop-sized configuration for clips of `size x size` pixels.
    pub fn desk(vocab_size: usize, size: usize) -> Self {
        Self {
            d_model: 64,
            heads: 4,
            decoder_layers: 2,
            height: size,
            width: size,
            patch: (size / 4).max(1),
            tubelet: 4,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Visual tokens: `(frames / tubelet) * (height / patch) * (width / patch)`.
    pub fn token_count(&self) -> usize {
        (self.frames / self.tubelet) * (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.tubelet * self.patch * self.patch * self.channels
    }

    /// Rows of the modality token matrix: one per frame per stream.
    pub fn modality_tokens(&self) -> usize {
        3 * self.frames
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.tubelet == 0 || self.patch == 0 || self.frames == 0 {
            return bad("frames, tubelet and patch must be positive".into());
        }
        if !self.frames.is_multiple_of(self.tubelet)
            || !self.height.is_multiple_of(self.patch)
            || !self.width.is_multiple_of(self.patch)
        {
            return bad(format!(
                "clip {}x{}x{} is not divisible into {}x{}x{} tubelets",
                self.frames, self.height, self.width, self.tubelet, self.patch, self.patch
            ));
        }
        if self.token_count() == 0 {
            return bad("clip yields no visual tokens".into());
        }
        if self.vocab_size < 5 {
            return bad(format!(
                "vocab_size {} leaves no room for words",
                self.vocab_size
            ));
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if self.trainable_backbone_blocks > self.backbone_blocks {
            return bad("more trainable backbone blocks than blocks".into());
        }
        if self.semantic_dim == 0 || self.ffn_mult == 0 {
            return bad("semantic_dim and ffn_mult must be positive".into());
        }
        for (name, v) in [("alpha", self.alpha), ("lambda", self.lambda)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_count_arithmetic() {
        let c = ModelConfig {
            vocab_size: 100,
            ..Default::default()
        };
        assert_eq!(c.token_count(), 8 * 14 * 14);
        assert_eq!(c.token_count(), 1568);
        assert_eq!(c.modality_tokens(), 48);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_head_split() {
        let c = ModelConfig {
            d_model: 30,
            heads: 8,
            vocab_size: 100,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: ModelConfig = serde_json::from_str(r#"{"d_model": 32, "heads": 4}"#).unwrap();
        assert_eq!(c.decoder_layers, 6);
        assert_eq!(c.alpha, 0.2);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.sf_pooling, SfPooling::Full);
    }
}
