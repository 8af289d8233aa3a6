//! Network stages after the backbone: token refiner, modality embedding,
//! cross-modal fusion, caption decoder and the semantic feedback head.

use crate::config::{SfPooling, POSITION_DIM, SHUTTLE_DIM};
use crate::nn::{causal_mask, key_mask, Attention, FeedForward, LayerNorm, Linear, ParamBuilder};
use crate::tape::{Mat, ParamId, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerLayer {
    pub attn: Attention,
    pub norm: LayerNorm,
}

/// Self-attention over the visual tokens with a residual connection and a
/// LayerNorm after it: `LN(M + MHSA(M))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    pub layers: Vec<RefinerLayer>,
}

pub struct RefinerOut {
    pub out: Var,
    /// Attention probabilities per layer, per head.
    pub probs: Vec<Vec<Var>>,
}

impl Refiner {
    pub fn build(b: &mut ParamBuilder, d: usize, heads: usize, layers: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|i| RefinerLayer {
                    attn: b.attention(&format!("refiner.layer{i}.attn"), d, heads),
                    norm: b.layer_norm(&format!("refiner.layer{i}.ln"), d),
                })
                .collect(),
        }
    }

    pub fn forward(&self, t: &mut Tape, grid: Var) -> RefinerOut {
        let mut x = grid;
        let mut probs = Vec::new();
        for l in &self.layers {
            let a = l.attn.forward(t, x, x, None);
            probs.push(a.probs);
            let r = t.add(x, a.out);
            x = l.norm.forward(t, r);
        }
        RefinerOut { out: x, probs }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.attn.params(), l.norm.params()].concat())
            .collect()
    }
}

/// Per-frame two-layer MLPs (`in -> D`, GELU, `D -> D`) for the position,
/// pose and shuttle streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbed {
    pub position: FeedForward,
    pub pose: FeedForward,
    pub shuttle: FeedForward,
}

impl ModalityEmbed {
    pub fn build(b: &mut ParamBuilder, d: usize, pose_dim: usize) -> Self {
        let mut mlp = |name: &str, din: usize| FeedForward {
            fc1: b.linear(&format!("modality.{name}.fc1"), din, d, true),
            fc2: b.linear(&format!("modality.{name}.fc2"), d, d, true),
        };
        Self {
            position: mlp("position", POSITION_DIM),
            pose: mlp("pose", pose_dim),
            shuttle: mlp("shuttle", SHUTTLE_DIM),
        }
    }

    /// `3T x D` tokens ordered position block, pose block, shuttle block.
    pub fn forward(&self, t: &mut Tape, position: Var, pose: Var, shuttle: Var) -> Var {
        let p = self.position.forward(t, position);
        let q = self.pose.forward(t, pose);
        let s = self.shuttle.forward(t, shuttle);
        t.concat_rows(&[p, q, s])
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            self.position.params(),
            self.pose.params(),
            self.shuttle.params(),
        ]
        .concat()
    }
}

/// Self-attention over the modality tokens, then cross-attention from the
/// visual tokens into them: `out = M + alpha * Attn(M, Ms, Ms)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub positions: ParamId,
    pub self_attn: Attention,
    pub cross_attn: Attention,
}

pub struct FusionOut {
    pub out: Var,
    /// `None` when every modality token is masked and the grid passes through.
    pub delta: Option<Var>,
    pub self_probs: Vec<Var>,
    pub cross_probs: Vec<Var>,
}

impl Fusion {
    pub fn build(b: &mut ParamBuilder, d: usize, heads: usize, modality_tokens: usize) -> Self {
        Self {
            positions: b.weight("fusion.modality_pos", modality_tokens, d),
            self_attn: b.attention("fusion.self_attn", d, heads),
            cross_attn: b.attention("fusion.cross_attn", d, heads),
        }
    }

    /// `allowed[j]` says whether modality token `j` may be attended to.
    pub fn forward(
        &self,
        t: &mut Tape,
        grid: Var,
        modal: Var,
        allowed: &[bool],
        alpha: f64,
    ) -> FusionOut {
        if !allowed.iter().any(|&a| a) {
            return FusionOut {
                out: grid,
                delta: None,
                self_probs: Vec::new(),
                cross_probs: Vec::new(),
            };
        }
        let pos = t.param(self.positions);
        let f = t.add(modal, pos);
        let rows = t.value(f).nrows();
        let s = self
            .self_attn
            .forward(t, f, f, Some(&key_mask(rows, allowed)));
        let ms = t.add(s.out, f);
        let n = t.value(grid).nrows();
        let c = self
            .cross_attn
            .forward(t, grid, ms, Some(&key_mask(n, allowed)));
        let scaled = t.scale(c.out, alpha);
        FusionOut {
            out: t.add(grid, scaled),
            delta: Some(c.out),
            self_probs: s.probs,
            cross_probs: c.probs,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            vec![self.positions],
            self.self_attn.params(),
            self.cross_attn.params(),
        ]
        .concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

/// Post-norm Transformer decoder with learned token and position embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
}

impl Decoder {
    pub fn build(
        b: &mut ParamBuilder,
        d: usize,
        heads: usize,
        layers: usize,
        ffn: usize,
        vocab: usize,
        max_len: usize,
    ) -> Self {
        Self {
            tokens: b.weight("decoder.tok_embed", vocab, d),
            positions: b.weight("decoder.pos_embed", max_len, d),
            layers: (0..layers)
                .map(|i| {
                    let p = format!("decoder.layer{i}");
                    DecoderLayer {
                        self_attn: b.attention(&format!("{p}.self_attn"), d, heads),
                        norm1: b.layer_norm(&format!("{p}.ln1"), d),
                        cross_attn: b.attention(&format!("{p}.cross_attn"), d, heads),
                        norm2: b.layer_norm(&format!("{p}.ln2"), d),
                        ffn: b.feed_forward(&format!("{p}.ffn"), d, ffn),
                        norm3: b.layer_norm(&format!("{p}.ln3"), d),
                    }
                })
                .collect(),
            out: b.linear("decoder.out", d, vocab, true),
        }
    }

    /// Hidden states (`L x D`) for input tokens attending causally to
    /// themselves and fully to `memory`.
    pub fn hidden(&self, t: &mut Tape, memory: Var, tokens: &[usize]) -> Var {
        let tok = t.param(self.tokens);
        let e = t.gather(tok, tokens);
        let pos = t.param(self.positions);
        let idx: Vec<usize> = (0..tokens.len()).collect();
        let p = t.gather(pos, &idx);
        let mut x = t.add(e, p);
        let causal = causal_mask(tokens.len());
        for l in &self.layers {
            let a = l.self_attn.forward(t, x, x, Some(&causal)).out;
            let r = t.add(x, a);
            x = l.norm1.forward(t, r);
            let c = l.cross_attn.forward(t, x, memory, None).out;
            let r = t.add(x, c);
            x = l.norm2.forward(t, r);
            let f = l.ffn.forward(t, x);
            let r = t.add(x, f);
            x = l.norm3.forward(t, r);
        }
        x
    }

    pub fn project(&self, t: &mut Tape, hidden: Var) -> Var {
        self.out.forward(t, hidden)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.tokens, self.positions];
        for l in &self.layers {
            v.extend(l.self_attn.params());
            v.extend(l.norm1.params());
            v.extend(l.cross_attn.params());
            v.extend(l.norm2.params());
            v.extend(l.ffn.params());
            v.extend(l.norm3.params());
        }
        v.extend(self.out.params());
        v
    }
}

/// Pools decoder states into a sentence vector, predicts attribute logits
/// `S = W_s z`, and feeds `P = sigmoid(S)` back as `dh = W_2 gelu(W_1 P)`,
/// giving `H' = H + beta * dh`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHead {
    /// `K x D`
    pub w_s: ParamId,
    /// `D x K`
    pub w1: ParamId,
    /// `D x D`
    pub w2: ParamId,
    /// `1 x 1`
    pub beta: ParamId,
}

pub struct SemanticOut {
    pub hidden: Var,
    pub pooled: Var,
    pub logits: Var,
    pub probs: Var,
    pub delta: Var,
    /// Attribute logits of the whole caption (`1 x K`).
    pub sentence_logits: Var,
}

impl SemanticHead {
    pub fn build(b: &mut ParamBuilder, d: usize, k: usize, beta: f64) -> Self {
        Self {
            w_s: b.weight("sf.w_s", k, d),
            w1: b.weight("sf.w1", d, k),
            w2: b.weight("sf.w2", d, d),
            beta: b.constant("sf.beta", 1, 1, beta),
        }
    }

    /// Pooling weights over `l` positions.
    pub fn pool_matrix(pooling: SfPooling, l: usize) -> Mat {
        match pooling {
            SfPooling::Full => Mat::from_elem((1, l), 1.0 / l as f64),
            SfPooling::Prefix => {
                Mat::from_shape_fn(
                    (l, l),
                    |(i, j)| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 },
                )
            }
        }
    }

    pub fn forward(&self, t: &mut Tape, hidden: Var, pooling: SfPooling) -> SemanticOut {
        let l = t.value(hidden).nrows();
        let z = t.left_mul(Self::pool_matrix(pooling, l), hidden);
        let ws = t.param(self.w_s);
        let s = t.matmul_t(z, ws);
        let p = t.sigmoid(s);
        let w1 = t.param(self.w1);
        let a = t.matmul_t(p, w1);
        let a = t.gelu(a);
        let w2 = t.param(self.w2);
        let dh = t.matmul_t(a, w2);
        let beta = t.param(self.beta);
        let scaled = t.scale_by(dh, beta);
        let (out, sentence) = match pooling {
            SfPooling::Full => (t.add_row(hidden, scaled), s),
            SfPooling::Prefix => {
                let mut last = Mat::zeros((1, l));
                last[[0, l - 1]] = 1.0;
                (t.add(hidden, scaled), t.left_mul(last, s))
            }
        };
        SemanticOut {
            hidden: out,
            pooled: z,
            logits: s,
            probs: p,
            delta: dh,
            sentence_logits: sentence,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_s, self.w1, self.w2, self.beta]
    }
}
