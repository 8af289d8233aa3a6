use crate::backbone::{DeskBackbone, VisualBackbone};
use crate::config::{SfPooling, BETA_INIT, POSITION_DIM, SHUTTLE_DIM};
use crate::modules::{
    Decoder, Fusion, FusionOut, ModalityEmbed, Refiner, RefinerOut, SemanticHead,
};
use crate::nn::ParamBuilder;
use crate::tape::{Grads, Mat, ParamId, ParamStore, Tape, Var};
use crate::{ModelConfig, ModelError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shotcap_core::pipeline::{ShotSample, BOS, EOS};

/// One shot prepared for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Backbone input built by [`VisualBackbone::prepare`].
    pub video: Mat,
    /// `T x 4` court positions of both players.
    pub position: Mat,
    /// `T x pose_dim` keypoints of both players.
    pub pose: Mat,
    /// `T x 2` shuttle position.
    pub shuttle: Mat,
    pub player_missing: Vec<bool>,
    pub shuttle_missing: Vec<bool>,
    /// Caption ids from BOS to EOS.
    pub tokens: Vec<usize>,
    /// 0/1 semantic attribute target.
    pub semantic_target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub backbone: DeskBackbone,
    pub refiner: Refiner,
    pub modality: ModalityEmbed,
    pub fusion: Fusion,
    pub decoder: Decoder,
    pub semantic: SemanticHead,
}

/// Loss values of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    #[serde(rename = "L_cap")]
    pub caption: f64,
    #[serde(rename = "L_sf")]
    pub semantic: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

impl Losses {
    /// `total = caption + lambda * semantic`.
    pub fn new(caption: f64, semantic: f64, lambda: f64) -> Self {
        Self {
            caption,
            semantic,
            total: caption + lambda * semantic,
        }
    }
}

/// Tape nodes of one teacher-forced forward pass.
pub struct ForwardPass {
    pub grid: Var,
    pub refined: RefinerOut,
    pub modal: Var,
    pub fusion: FusionOut,
    /// Decoder states before semantic feedback.
    pub hidden: Var,
    /// States fed to the vocabulary projection.
    pub final_hidden: Var,
    pub logits: Var,
    /// `1 x K` attribute logits when semantic feedback is on.
    pub semantic_logits: Option<Var>,
    pub semantic_probs: Option<Var>,
}

pub struct SampleObjective {
    pub caption_sum: f64,
    pub semantic_sum: f64,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub net: Network,
}

impl CaptionModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = ParamBuilder {
            store: &mut store,
            rng: &mut rng,
            trainable: true,
        };
        let d = config.d_model;
        let net = Network {
            backbone: DeskBackbone::build(&mut b, &config),
            refiner: Refiner::build(&mut b, d, config.heads, config.refiner_layers),
            modality: ModalityEmbed::build(&mut b, d, config.pose_dim),
            fusion: Fusion::build(&mut b, d, config.heads, config.modality_tokens()),
            decoder: Decoder::build(
                &mut b,
                d,
                config.heads,
                config.decoder_layers,
                config.ffn_dim(),
                config.vocab_size,
                config.max_len,
            ),
            semantic: SemanticHead::build(&mut b, d, config.semantic_dim, BETA_INIT),
        };
        Ok(Self {
            config,
            params: store,
            net,
        })
    }

    pub fn beta(&self) -> f64 {
        self.params.value(self.net.semantic.beta)[[0, 0]]
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.params.id_of(name)
    }

    /// Converts a pipeline sample into network input.
    pub fn prepare(&self, sample: &ShotSample) -> Result<ModelInput, ModelError> {
        let c = &self.config;
        let m = &sample.modalities;
        if m.frames() != c.frames || m.pose_dim() != c.pose_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "modalities have {} frames of pose dim {}, model expects {} of {}",
                m.frames(),
                m.pose_dim(),
                c.frames,
                c.pose_dim
            )));
        }
        let rows = |f: &dyn Fn(usize) -> Vec<f64>, width: usize| {
            let data: Vec<f64> = (0..c.frames).flat_map(f).collect();
            Mat::from_shape_vec((c.frames, width), data).expect("row widths agree")
        };
        let input = ModelInput {
            video: self.net.backbone.prepare(&sample.clip)?,
            position: rows(&|i| m.positions[i].to_vec(), POSITION_DIM),
            pose: rows(&|i| m.poses[i].clone(), c.pose_dim),
            shuttle: rows(&|i| m.shuttle[i].to_vec(), SHUTTLE_DIM),
            player_missing: m.player_missing.clone(),
            shuttle_missing: m.shuttle_missing.clone(),
            tokens: sample.caption_tokens.iter().map(|&t| t as usize).collect(),
            semantic_target: sample.semantic_target.to_f64().to_vec(),
        };
        self.check_input(&input)?;
        Ok(input)
    }

    pub fn check_input(&self, x: &ModelInput) -> Result<(), ModelError> {
        let c = &self.config;
        let shapes = [
            (x.video.dim(), (c.token_count(), c.patch_dim()), "video"),
            (x.position.dim(), (c.frames, POSITION_DIM), "position"),
            (x.pose.dim(), (c.frames, c.pose_dim), "pose"),
            (x.shuttle.dim(), (c.frames, SHUTTLE_DIM), "shuttle"),
        ];
        for (got, want, what) in shapes {
            if got != want {
                return Err(ModelError::ShapeMismatch(format!(
                    "{what} is {got:?}, expected {want:?}"
                )));
            }
        }
        if x.player_missing.len() != c.frames || x.shuttle_missing.len() != c.frames {
            return Err(ModelError::ShapeMismatch("missing-frame flags".into()));
        }
        if x.semantic_target.len() != c.semantic_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "semantic target has {} entries, expected {}",
                x.semantic_target.len(),
                c.semantic_dim
            )));
        }
        if x.tokens.len() > c.max_len {
            return Err(ModelError::SequenceTooLong {
                len: x.tokens.len(),
                max: c.max_len,
            });
        }
        if let Some(&bad) = x.tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {bad} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        Ok(())
    }

    /// Which of the `3T` modality tokens fusion may attend to.
    pub fn modality_allowed(&self, x: &ModelInput) -> Vec<bool> {
        let sw = self.config.modalities;
        let player = x.player_missing.iter().map(|&m| !m);
        let shuttle = x.shuttle_missing.iter().map(|&m| sw.shuttle && !m);
        player
            .clone()
            .map(|ok| sw.position && ok)
            .chain(player.map(|ok| sw.pose && ok))
            .chain(shuttle)
            .collect()
    }

    pub fn encode_video(&self, t: &mut Tape, x: &ModelInput) -> Var {
        let v = t.input(x.video.clone());
        self.net.backbone.encode(t, v)
    }

    pub fn embed_modalities(&self, t: &mut Tape, x: &ModelInput) -> Var {
        let p = t.input(x.position.clone());
        let q = t.input(x.pose.clone());
        let s = t.input(x.shuttle.clone());
        self.net.modality.forward(t, p, q, s)
    }

    /// Visual grid, refinement and fusion: the memory the decoder reads.
    fn encode_parts(&self, t: &mut Tape, x: &ModelInput) -> (Var, RefinerOut, Var, FusionOut) {
        let grid = self.encode_video(t, x);
        let refined = if self.config.use_refiner {
            self.net.refiner.forward(t, grid)
        } else {
            RefinerOut {
                out: grid,
                probs: Vec::new(),
            }
        };
        let modal = self.embed_modalities(t, x);
        let allowed = self.modality_allowed(x);
        let fusion = self
            .net
            .fusion
            .forward(t, refined.out, modal, &allowed, self.config.alpha);
        (grid, refined, modal, fusion)
    }

    pub fn encode(&self, t: &mut Tape, x: &ModelInput) -> Var {
        self.encode_parts(t, x).3.out
    }

    /// Teacher-forced pass over `x.tokens[..len-1]`.
    pub fn forward(&self, t: &mut Tape, x: &ModelInput) -> Result<ForwardPass, ModelError> {
        self.forward_with(t, x, self.config.use_sf, self.config.sf_pooling)
    }

    pub fn forward_with(
        &self,
        t: &mut Tape,
        x: &ModelInput,
        use_sf: bool,
        pooling: SfPooling,
    ) -> Result<ForwardPass, ModelError> {
        self.check_input(x)?;
        if x.tokens.len() < 2 {
            return Err(ModelError::AllPadded);
        }
        let (grid, refined, modal, fusion) = self.encode_parts(t, x);
        let inputs = &x.tokens[..x.tokens.len() - 1];
        let hidden = self.net.decoder.hidden(t, fusion.out, inputs);
        let (final_hidden, semantic_logits, semantic_probs) = if use_sf {
            let sf = self.net.semantic.forward(t, hidden, pooling);
            let probs = t.sigmoid(sf.sentence_logits);
            (sf.hidden, Some(sf.sentence_logits), Some(probs))
        } else {
            (hidden, None, None)
        };
        let logits = self.net.decoder.project(t, final_hidden);
        Ok(ForwardPass {
            grid,
            refined,
            modal,
            fusion,
            hidden,
            final_hidden,
            logits,
            semantic_logits,
            semantic_probs,
        })
    }

    /// Per-sample share of the batch objective: the summed caption
    /// cross-entropy scaled by `caption_scale` plus, with semantic feedback,
    /// the summed attribute BCE scaled by `semantic_scale`.
    pub fn sample_objective(
        &self,
        t: &mut Tape,
        x: &ModelInput,
        caption_scale: f64,
        semantic_scale: f64,
    ) -> Result<SampleObjective, ModelError> {
        let f = self.forward(t, x)?;
        let targets: Vec<Option<usize>> = x.tokens[1..].iter().map(|&id| Some(id)).collect();
        let ce = t.cross_entropy_sum(f.logits, &targets);
        let caption_sum = t.value(ce)[[0, 0]];
        let cap = t.scale(ce, caption_scale);
        match f.semantic_logits {
            Some(s) => {
                let target =
                    Mat::from_shape_vec((1, x.semantic_target.len()), x.semantic_target.clone())
                        .expect("1 x K");
                let bce = t.bce_logits_sum(s, target);
                let semantic_sum = t.value(bce)[[0, 0]];
                let sem = t.scale(bce, semantic_scale);
                Ok(SampleObjective {
                    caption_sum,
                    semantic_sum,
                    total: t.add(cap, sem),
                })
            }
            None => Ok(SampleObjective {
                caption_sum,
                semantic_sum: 0.0,
                total: cap,
            }),
        }
    }

    fn batch_scales(&self, batch: &[&ModelInput]) -> Result<(usize, usize), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let tokens: usize = batch.iter().map(|x| x.tokens.len().saturating_sub(1)).sum();
        Ok((tokens.max(1), batch.len() * self.config.semantic_dim))
    }

    fn combine(&self, caption_sum: f64, semantic_sum: f64, tokens: usize, bk: usize) -> Losses {
        let caption = caption_sum / tokens as f64;
        let semantic = if self.config.use_sf {
            semantic_sum / bk as f64
        } else {
            0.0
        };
        Losses::new(caption, semantic, self.config.lambda)
    }

    /// `L_cap` averages over all target tokens of the batch, `L_sf` over
    /// batch x attributes, and `L_total = L_cap + lambda * L_sf`.
    pub fn losses(&self, batch: &[&ModelInput]) -> Result<Losses, ModelError> {
        let (tokens, bk) = self.batch_scales(batch)?;
        let (mut cs, mut ss) = (0.0, 0.0);
        for x in batch {
            let mut t = Tape::inference(&self.params);
            let o = self.sample_objective(&mut t, x, 1.0, 1.0)?;
            cs += o.caption_sum;
            ss += o.semantic_sum;
        }
        Ok(self.combine(cs, ss, tokens, bk))
    }

    /// Batch losses and their gradients; samples are processed in order and
    /// their gradients summed.
    pub fn gradients(&self, batch: &[&ModelInput]) -> Result<(Grads, Losses), ModelError> {
        let (tokens, bk) = self.batch_scales(batch)?;
        let sem_scale = self.config.lambda / bk as f64;
        let mut grads = Grads::zeros(self.params.len());
        let (mut cs, mut ss) = (0.0, 0.0);
        for x in batch {
            let mut t = Tape::new(&self.params);
            let o = self.sample_objective(&mut t, x, 1.0 / tokens as f64, sem_scale)?;
            cs += o.caption_sum;
            ss += o.semantic_sum;
            grads.add_assign(&t.backward(o.total));
        }
        Ok((grads, self.combine(cs, ss, tokens, bk)))
    }

    /// Greedy decoding from BOS until EOS or `max_len` tokens. With semantic
    /// feedback at inference, each step pools over the current prefix.
    pub fn generate(&self, x: &ModelInput) -> Result<Vec<usize>, ModelError> {
        self.check_input(&ModelInput {
            tokens: Vec::new(),
            ..x.clone()
        })?;
        let memory = {
            let mut t = Tape::inference(&self.params);
            let m = self.encode(&mut t, x);
            t.value(m).clone()
        };
        let sf = self.config.use_sf && self.config.sf_at_inference;
        let mut tokens = vec![BOS as usize];
        while tokens.len() < self.config.max_len {
            let mut t = Tape::inference(&self.params);
            let mem = t.input(memory.clone());
            let mut h = self.net.decoder.hidden(&mut t, mem, &tokens);
            if sf {
                h = self.net.semantic.forward(&mut t, h, SfPooling::Full).hidden;
            }
            let mut last = Mat::zeros((1, tokens.len()));
            last[[0, tokens.len() - 1]] = 1.0;
            let h_last = t.left_mul(last, h);
            let logits = self.net.decoder.project(&mut t, h_last);
            let next = argmax(t.value(logits).row(0).iter().copied());
            tokens.push(next);
            if next == EOS as usize {
                break;
            }
        }
        Ok(tokens)
    }

    /// Attribute probabilities of the teacher-forced caption.
    pub fn semantic_probs(&self, x: &ModelInput) -> Result<Option<Vec<f64>>, ModelError> {
        if !self.config.use_sf {
            return Ok(None);
        }
        let mut t = Tape::inference(&self.params);
        let f = self.forward(&mut t, x)?;
        Ok(f.semantic_probs.map(|p| t.value(p).row(0).to_vec()))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
