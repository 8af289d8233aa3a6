//! Parameterized building blocks recorded onto a [`Tape`].

use crate::tape::{Mask, Mat, ParamId, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::rc::Rc;

pub const INIT_STD: f64 = 0.02;

/// Creates parameters with the standard initialization: truncated normal
/// (two standard deviations) for weights, zeros for biases, unit LayerNorm gain.
pub struct ParamBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub trainable: bool,
}

impl ParamBuilder<'_> {
    pub fn truncated_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        Mat::from_shape_simple_fn((rows, cols), || loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
    }

    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let m = Self::truncated_normal(self.rng, rows, cols, INIT_STD);
        self.store.add(name, m, self.trainable)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store
            .add(name, Mat::from_elem((rows, cols), value), self.trainable)
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize, bias: bool) -> Linear {
        Linear {
            w: self.weight(&format!("{name}.w"), din, dout),
            b: bias.then(|| self.constant(&format!("{name}.b"), 1, dout, 0.0)),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: self.constant(&format!("{name}.g"), 1, d, 1.0),
            bias: self.constant(&format!("{name}.b"), 1, d, 0.0),
        }
    }

    pub fn attention(&mut self, name: &str, d: usize, heads: usize) -> Attention {
        Attention {
            heads,
            q: self.linear(&format!("{name}.q"), d, d, true),
            k: self.linear(&format!("{name}.k"), d, d, true),
            v: self.linear(&format!("{name}.v"), d, d, true),
            o: self.linear(&format!("{name}.o"), d, d, true),
        }
    }

    pub fn feed_forward(&mut self, name: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            fc1: self.linear(&format!("{name}.fc1"), d, hidden, true),
            fc2: self.linear(&format!("{name}.fc2"), hidden, d, true),
        }
    }
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let (g, b) = (t.param(self.gain), t.param(self.bias));
        t.layer_norm(x, g, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.fc1.forward(t, x);
        let h = t.gelu(h);
        self.fc2.forward(t, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.fc1.params(), self.fc2.params()].concat()
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Output of an attention call plus the per-head probability nodes.
pub struct AttentionOut {
    pub out: Var,
    pub probs: Vec<Var>,
}

impl Attention {
    pub fn forward(
        &self,
        t: &mut Tape,
        queries: Var,
        keys: Var,
        mask: Option<&Mask>,
    ) -> AttentionOut {
        let q = self.q.forward(t, queries);
        let k = self.k.forward(t, keys);
        let v = self.v.forward(t, keys);
        let d = t.value(q).ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, h * dh, dh),
                    t.slice_cols(k, h * dh, dh),
                    t.slice_cols(v, h * dh, dh),
                )
            };
            let scores = t.matmul_t(qh, kh);
            let scores = t.scale(scores, scale);
            let p = t.softmax(scores, mask);
            probs.push(p);
            outs.push(t.matmul(p, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            t.concat_cols(&outs)
        };
        AttentionOut {
            out: self.o.forward(t, joined),
            probs,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            self.q.params(),
            self.k.params(),
            self.v.params(),
            self.o.params(),
        ]
        .concat()
    }
}

/// Mask letting query `i` see keys `0..=i`.
pub fn causal_mask(n: usize) -> Mask {
    Rc::new(Array2::from_shape_fn((n, n), |(i, j)| j <= i))
}

/// Mask hiding the listed keys from every one of `queries` rows.
pub fn key_mask(queries: usize, key_allowed: &[bool]) -> Mask {
    Rc::new(Array2::from_shape_fn(
        (queries, key_allowed.len()),
        |(_, j)| key_allowed[j],
    ))
}
