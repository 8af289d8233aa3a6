//! Visual backbone interface and the small randomly initialized stand-in.

use crate::nn::{Attention, FeedForward, LayerNorm, Linear, ParamBuilder};
use crate::tape::{Mat, ParamId, Tape, Var};
use crate::{ModelConfig, ModelError};
use shotcap_core::pipeline::Clip;

/// Anything that turns a pixel clip into an `N x D` token grid on a tape.
pub trait VisualBackbone {
    fn token_count(&self) -> usize;
    /// Converts a clip into the matrix `encode` consumes (done once per sample).
    fn prepare(&self, clip: &Clip) -> Result<Mat, ModelError>;
    fn encode(&self, t: &mut Tape, input: Var) -> Var;
    fn params(&self) -> Vec<ParamId>;
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

/// Tubelet patchify, linear embedding, learned positions and a stack of
/// pre-norm self-attention blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskBackbone {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    tubelet: usize,
    patch: usize,
    pub embed: Linear,
    pub pos: ParamId,
    blocks: Vec<Block>,
}

impl DeskBackbone {
    pub fn build(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let frozen_blocks = cfg.backbone_blocks - cfg.trainable_backbone_blocks;
        let trainable = b.trainable;
        b.trainable = false;
        let embed = b.linear("backbone.patch_embed", cfg.patch_dim(), d, true);
        let pos = b.weight("backbone.pos", cfg.token_count(), d);
        let blocks = (0..cfg.backbone_blocks)
            .map(|i| {
                b.trainable = trainable && i >= frozen_blocks;
                let p = format!("backbone.block{i}");
                Block {
                    ln1: b.layer_norm(&format!("{p}.ln1"), d),
                    attn: b.attention(&format!("{p}.attn"), d, cfg.heads),
                    ln2: b.layer_norm(&format!("{p}.ln2"), d),
                    ffn: b.feed_forward(&format!("{p}.ffn"), d, cfg.ffn_dim()),
                }
            })
            .collect();
        b.trainable = trainable;
        Self {
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            tubelet: cfg.tubelet,
            patch: cfg.patch,
            embed,
            pos,
            blocks,
        }
    }

    /// Embedded tubelets before positions and attention.
    pub fn patch_embed(&self, t: &mut Tape, input: Var) -> Var {
        self.embed.forward(t, input)
    }
}

impl VisualBackbone for DeskBackbone {
    fn token_count(&self) -> usize {
        (self.frames / self.tubelet) * (self.height / self.patch) * (self.width / self.patch)
    }

    /// Rows are tubelets in (time, row, column) order; each row holds the
    /// tubelet's pixels in (frame, y, x, channel) order, scaled to `[0, 1]`.
    fn prepare(&self, clip: &Clip) -> Result<Mat, ModelError> {
        let expect = [self.frames, self.height, self.width, self.channels];
        if clip.shape() != expect {
            return Err(ModelError::ShapeMismatch(format!(
                "clip {:?}, backbone expects {:?}",
                clip.shape(),
                expect
            )));
        }
        let (tp, p, c) = (self.tubelet, self.patch, self.channels);
        let (gt, gy, gx) = (self.frames / tp, self.height / p, self.width / p);
        let mut out = Mat::zeros((gt * gy * gx, tp * p * p * c));
        let mut row = 0;
        for it in 0..gt {
            for iy in 0..gy {
                for ix in 0..gx {
                    let mut col = 0;
                    for dt in 0..tp {
                        for dy in 0..p {
                            let start = clip.offset(it * tp + dt, iy * p + dy, ix * p, 0);
                            for &px in &clip.data[start..start + p * c] {
                                out[[row, col]] = px as f64 / 255.0;
                                col += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        Ok(out)
    }

    fn encode(&self, t: &mut Tape, input: Var) -> Var {
        let e = self.patch_embed(t, input);
        let pos = t.param(self.pos);
        let mut x = t.add(e, pos);
        for b in &self.blocks {
            let h = b.ln1.forward(t, x);
            let a = b.attn.forward(t, h, h, None).out;
            x = t.add(x, a);
            let h = b.ln2.forward(t, x);
            let f = b.ffn.forward(t, h);
            x = t.add(x, f);
        }
        x
    }

    fn params(&self) -> Vec<ParamId> {
        let mut v = self.embed.params();
        v.push(self.pos);
        for b in &self.blocks {
            v.extend(b.ln1.params());
            v.extend(b.attn.params());
            v.extend(b.ln2.params());
            v.extend(b.ffn.params());
        }
        v
    }
}
