mod common;

use common::*;
use proptest::prelude::*;
use shotcap_model::{CaptionModel, Mat, ModelConfig, ModelError, SfPooling, Tape};

fn logits(model: &CaptionModel, x: &shotcap_model::ModelInput) -> Mat {
    let mut t = Tape::inference(&model.params);
    let f = model.forward(&mut t, x).unwrap();
    t.value(f.logits).clone()
}

#[test]
fn zero_alpha_fusion_is_identity() {
    let config = ModelConfig {
        alpha: 0.0,
        ..tiny_config()
    };
    let model = jittered(config.clone(), 1);
    for x in inputs(&config, 3, 5, 2) {
        let mut t = Tape::inference(&model.params);
        let f = model.forward(&mut t, &x).unwrap();
        assert_eq!(t.value(f.fusion.out), t.value(f.refined.out));
        assert!(f.fusion.delta.is_some());
    }
}

#[test]
fn default_alpha_scales_the_cross_attention_update() {
    let config = tiny_config();
    assert_eq!(config.alpha, 0.2);
    let model = jittered(config.clone(), 5);
    let x = &inputs(&config, 1, 5, 6)[0];
    let mut t = Tape::inference(&model.params);
    let f = model.forward(&mut t, x).unwrap();
    let expect = t.value(f.refined.out) + &(t.value(f.fusion.delta.unwrap()) * 0.2);
    let got = t.value(f.fusion.out);
    assert!((got - &expect).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn zero_beta_matches_the_model_without_feedback_bit_for_bit() {
    let config = tiny_config();
    let mut with_sf = jittered(config.clone(), 7);
    fill(&mut with_sf, "sf.beta", 0.0);
    let mut without = with_sf.clone();
    without.config.use_sf = false;
    for x in inputs(&config, 3, 7, 8) {
        assert_eq!(logits(&with_sf, &x), logits(&without, &x));
        assert_eq!(with_sf.generate(&x).unwrap(), without.generate(&x).unwrap());
    }
}

#[test]
fn zero_lambda_and_beta_leave_gradients_outside_the_head_unchanged() {
    let config = ModelConfig {
        lambda: 0.0,
        ..tiny_config()
    };
    let mut with_sf = jittered(config.clone(), 9);
    fill(&mut with_sf, "sf.beta", 0.0);
    let mut without = with_sf.clone();
    without.config.use_sf = false;
    let xs = inputs(&config, 2, 6, 10);
    let (a, la) = with_sf.gradients(&refs(&xs)).unwrap();
    let (b, lb) = without.gradients(&refs(&xs)).unwrap();
    assert_eq!(la.caption, lb.caption);
    assert_eq!(la.total, lb.total);
    for e in with_sf.params.entries() {
        if e.name.starts_with("sf.") {
            continue;
        }
        let id = with_sf.param(&e.name).unwrap();
        assert_eq!(a.get(id), b.get(id), "{}", e.name);
    }
}

fn assert_causal(model: &CaptionModel, pre_feedback: bool) {
    let config = &model.config;
    let base = inputs(config, 1, 8, 21).remove(0);
    let view = |x: &shotcap_model::ModelInput| {
        let mut t = Tape::inference(&model.params);
        let f = model.forward(&mut t, x).unwrap();
        t.value(if pre_feedback { f.hidden } else { f.logits })
            .clone()
    };
    let reference = view(&base);
    let steps = base.tokens.len() - 1;
    for pos in 1..steps {
        let mut x = base.clone();
        x.tokens[pos] = 4 + (x.tokens[pos] + 1) % (config.vocab_size - 4);
        let out = view(&x);
        for row in 0..pos {
            assert_eq!(
                out.row(row),
                reference.row(row),
                "row {row} moved when token {pos} changed"
            );
        }
        assert_ne!(out.row(pos), reference.row(pos));
    }
}

#[test]
fn decoder_states_before_feedback_are_causal() {
    assert_causal(&jittered(tiny_config(), 22), true);
}

#[test]
fn logits_are_causal_with_prefix_pooling() {
    let config = ModelConfig {
        sf_pooling: SfPooling::Prefix,
        ..tiny_config()
    };
    assert_causal(&jittered(config, 23), false);
}

#[test]
fn logits_are_causal_without_feedback() {
    let config = ModelConfig {
        use_sf: false,
        ..tiny_config()
    };
    assert_causal(&jittered(config, 24), false);
}

#[test]
fn attention_rows_are_distributions_and_masked_tokens_get_nothing() {
    let config = tiny_config();
    let model = jittered(config.clone(), 30);
    let mut x = inputs(&config, 1, 5, 31).remove(0);
    x.player_missing = vec![true, false];
    x.shuttle_missing = vec![false, true];
    let allowed = model.modality_allowed(&x);
    assert_eq!(allowed, vec![false, true, false, true, true, false]);
    let mut t = Tape::inference(&model.params);
    let f = model.forward(&mut t, &x).unwrap();
    let mut checked = 0;
    let all = f
        .refined
        .probs
        .iter()
        .flatten()
        .chain(&f.fusion.self_probs)
        .chain(&f.fusion.cross_probs);
    for &p in all {
        let p = t.value(p);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            checked += 1;
        }
        if p.ncols() == allowed.len() {
            for row in p.rows() {
                for (w, ok) in row.iter().zip(&allowed) {
                    if !ok {
                        assert_eq!(*w, 0.0);
                    }
                }
            }
        }
    }
    assert_eq!(checked, 2 * 4 + 2 * 6 + 2 * 4);
}

#[test]
fn fully_masked_modalities_leave_the_grid_unchanged() {
    let config = tiny_config();
    let model = jittered(config.clone(), 32);
    let mut x = inputs(&config, 1, 5, 33).remove(0);
    x.player_missing = vec![true; 2];
    x.shuttle_missing = vec![true; 2];
    let mut t = Tape::inference(&model.params);
    let f = model.forward(&mut t, &x).unwrap();
    assert_eq!(t.value(f.fusion.out), t.value(f.refined.out));
    assert!(f.fusion.delta.is_none());
}

#[test]
fn zero_output_projection_reduces_the_refiner_to_layer_norm() {
    let config = tiny_config();
    let mut model = CaptionModel::new(config.clone()).unwrap();
    fill(&mut model, "refiner.layer0.attn.o.w", 0.0);
    fill(&mut model, "refiner.layer0.attn.o.b", 0.0);
    let x = &inputs(&config, 1, 4, 40)[0];
    let mut t = Tape::inference(&model.params);
    let f = model.forward(&mut t, x).unwrap();
    let grid = t.value(f.grid);
    let out = t.value(f.refined.out);
    for (g, o) in grid.rows().into_iter().zip(out.rows()) {
        let n = g.len() as f64;
        let mean = g.sum() / n;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (a, b) in g.iter().zip(o) {
            assert!(((a - mean) / (var + 1e-5).sqrt() - b).abs() < 1e-12);
        }
        let omean = o.sum() / n;
        let ovar = o.iter().map(|v| (v - omean).powi(2)).sum::<f64>() / n;
        assert!(omean.abs() < 1e-12);
        assert!((ovar - var / (var + 1e-5)).abs() < 1e-9);
    }
}

#[test]
fn zero_modalities_with_zero_biases_embed_to_zero() {
    let config = tiny_config();
    let mut model = jittered(config.clone(), 41);
    for s in ["position", "pose", "shuttle"] {
        for l in ["fc1", "fc2"] {
            fill(&mut model, &format!("modality.{s}.{l}.b"), 0.0);
        }
    }
    let mut x = inputs(&config, 1, 4, 42).remove(0);
    x.position.fill(0.0);
    x.pose.fill(0.0);
    x.shuttle.fill(0.0);
    let mut t = Tape::inference(&model.params);
    let m = model.embed_modalities(&mut t, &x);
    assert!(t.value(m).iter().all(|&v| v == 0.0));
}

#[test]
fn permuting_frames_permutes_each_modality_block() {
    let config = ModelConfig {
        frames: 4,
        tubelet: 2,
        ..tiny_config()
    };
    let model = jittered(config.clone(), 43);
    let x = inputs(&config, 1, 4, 44).remove(0);
    let perm = [2usize, 0, 3, 1];
    let mut y = x.clone();
    for (i, &p) in perm.iter().enumerate() {
        y.position.row_mut(i).assign(&x.position.row(p));
        y.pose.row_mut(i).assign(&x.pose.row(p));
        y.shuttle.row_mut(i).assign(&x.shuttle.row(p));
    }
    let embed = |x: &shotcap_model::ModelInput| {
        let mut t = Tape::inference(&model.params);
        let m = model.embed_modalities(&mut t, x);
        t.value(m).clone()
    };
    let (a, b) = (embed(&x), embed(&y));
    assert_eq!(a.dim(), (12, 8));
    for block in 0..3 {
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(b.row(block * 4 + i), a.row(block * 4 + p));
        }
    }
}

#[test]
fn sixteen_frames_give_forty_eight_modality_tokens() {
    let config = ModelConfig {
        frames: 16,
        ..tiny_config()
    };
    let model = CaptionModel::new(config.clone()).unwrap();
    let x = inputs(&config, 1, 4, 45).remove(0);
    let mut t = Tape::inference(&model.params);
    let m = model.embed_modalities(&mut t, &x);
    assert_eq!(t.value(m).dim(), (48, 8));
}

#[test]
fn bos_only_prefix_gives_one_row_of_logits() {
    let config = tiny_config();
    let model = CaptionModel::new(config.clone()).unwrap();
    let x = inputs(&config, 1, 2, 46).remove(0);
    assert_eq!(logits(&model, &x).dim(), (1, 11));
}

#[test]
fn overlong_and_empty_captions_are_rejected() {
    let config = tiny_config();
    let model = CaptionModel::new(config.clone()).unwrap();
    let long = inputs(&config, 1, 121, 47).remove(0);
    let mut t = Tape::inference(&model.params);
    assert!(matches!(
        model.forward(&mut t, &long),
        Err(ModelError::SequenceTooLong { len: 121, max: 120 })
    ));
    let mut short = long.clone();
    short.tokens.truncate(1);
    assert!(matches!(
        model.forward(&mut t, &short),
        Err(ModelError::AllPadded)
    ));
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (
        prop::sample::select(vec![(4usize, 1usize), (4, 2), (6, 3), (8, 2)]),
        1usize..3,
        0usize..2,
        prop::sample::select(vec![(2usize, 1usize), (2, 2), (4, 2)]),
        prop::sample::select(vec![(4usize, 2usize), (6, 3), (4, 4)]),
        5usize..9,
        1usize..4,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(
            |((d, h), dec, refl, (frames, tub), (size, patch), v, k, sf, prefix)| ModelConfig {
                d_model: d,
                heads: h,
                decoder_layers: dec,
                refiner_layers: refl,
                backbone_blocks: 1,
                trainable_backbone_blocks: 1,
                frames,
                tubelet: tub,
                height: size,
                width: size,
                patch,
                vocab_size: v,
                pose_dim: 2,
                semantic_dim: k,
                max_len: 12,
                use_sf: sf,
                sf_pooling: if prefix {
                    SfPooling::Prefix
                } else {
                    SfPooling::Full
                },
                ..ModelConfig::default()
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_stage_keeps_its_declared_shape(config in small_config(), len in 2usize..8, seed in 0u64..1000) {
        let model = CaptionModel::new(config.clone()).unwrap();
        let x = inputs(&config, 1, len, seed).remove(0);
        let (n, d, v) = (config.token_count(), config.d_model, config.vocab_size);
        let mut t = Tape::new(&model.params);
        let f = model.forward(&mut t, &x).unwrap();
        prop_assert_eq!(t.value(f.grid).dim(), (n, d));
        prop_assert_eq!(t.value(f.refined.out).dim(), (n, d));
        prop_assert_eq!(t.value(f.modal).dim(), (3 * config.frames, d));
        prop_assert_eq!(t.value(f.fusion.out).dim(), (n, d));
        prop_assert_eq!(t.value(f.hidden).dim(), (len - 1, d));
        prop_assert_eq!(t.value(f.final_hidden).dim(), (len - 1, d));
        prop_assert_eq!(t.value(f.logits).dim(), (len - 1, v));
        match f.semantic_probs {
            Some(p) => prop_assert_eq!(t.value(p).dim(), (1, config.semantic_dim)),
            None => prop_assert!(!config.use_sf),
        }
        let out = model.generate(&x).unwrap();
        prop_assert!(out.len() >= 2 && out.len() <= config.max_len);
        let (grads, losses) = model.gradients(&[&x]).unwrap();
        prop_assert!(losses.total.is_finite());
        for id in model.params.trainable_ids() {
            if let Some(g) = grads.get(id) {
                prop_assert_eq!(g.dim(), model.params.value(id).dim());
            }
        }
    }
}
