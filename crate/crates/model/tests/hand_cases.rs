//! Small modules with hand-set weights against arithmetic done by hand.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shotcap_core::pipeline::{BOS, EOS};
use shotcap_model::modules::{Decoder, Fusion, Refiner, SemanticHead};
use shotcap_model::nn::ParamBuilder;
use shotcap_model::{CaptionModel, Losses, Mat, ModelConfig, ParamStore, SfPooling, Tape};

fn store_with<T>(build: impl FnOnce(&mut ParamBuilder) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let module = build(&mut ParamBuilder {
        store: &mut store,
        rng: &mut rng,
        trainable: true,
    });
    (store, module)
}

fn put(store: &mut ParamStore, name: &str, rows: &[&[f64]]) {
    let id = store
        .id_of(name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    let m = Mat::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
    assert_eq!(store.value(id).dim(), m.dim(), "{name}");
    *store.value_mut(id) = m;
}

fn row(v: &[f64]) -> Mat {
    Mat::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

fn close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

/// LayerNorm of a two-vector with unit gain and zero bias.
fn ln2(a: f64, b: f64) -> [f64; 2] {
    let half = (a - b) / 2.0;
    let s = (half * half + 1e-5).sqrt();
    [half / s, -half / s]
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn single_token_refiner() {
    let (mut s, refiner) = store_with(|b| Refiner::build(b, 2, 1, 1));
    put(
        &mut s,
        "refiner.layer0.attn.q.w",
        &[&[3.0, -1.0], &[0.5, 2.0]],
    );
    put(
        &mut s,
        "refiner.layer0.attn.k.w",
        &[&[1.0, 1.0], &[-2.0, 0.0]],
    );
    put(
        &mut s,
        "refiner.layer0.attn.v.w",
        &[&[1.0, 2.0], &[0.0, 1.0]],
    );
    put(&mut s, "refiner.layer0.attn.v.b", &[&[0.5, 0.0]]);
    put(
        &mut s,
        "refiner.layer0.attn.o.w",
        &[&[1.0, 0.0], &[0.0, -1.0]],
    );
    put(&mut s, "refiner.layer0.ln.g", &[&[2.0, 1.0]]);
    put(&mut s, "refiner.layer0.ln.b", &[&[0.0, 1.0]]);
    let mut t = Tape::inference(&s);
    let x = t.input(row(&[1.0, 3.0]));
    let out = refiner.forward(&mut t, x);
    // v = [1.5, 5], o(v) = [1.5, -5], residual [2.5, -2]
    let n = 2.25 / (2.25f64 * 2.25 + 1e-5).sqrt();
    close(t.value(out.out).as_slice().unwrap(), &[2.0 * n, 1.0 - n]);
    assert_eq!(t.value(out.probs[0][0])[[0, 0]], 1.0);
}

#[test]
fn single_grid_token_single_modality_token_fusion() {
    let (mut s, fusion) = store_with(|b| Fusion::build(b, 2, 1, 1));
    put(&mut s, "fusion.modality_pos", &[&[0.5, -1.0]]);
    put(&mut s, "fusion.self_attn.v.w", &[&[1.0, 0.0], &[0.0, 1.0]]);
    put(&mut s, "fusion.self_attn.o.w", &[&[1.0, 0.0], &[0.0, 1.0]]);
    put(&mut s, "fusion.cross_attn.v.w", &[&[0.0, 1.0], &[1.0, 0.0]]);
    put(&mut s, "fusion.cross_attn.o.w", &[&[0.5, 0.0], &[0.0, 0.5]]);
    put(&mut s, "fusion.cross_attn.o.b", &[&[0.0, 0.25]]);
    let mut t = Tape::inference(&s);
    let grid = t.input(row(&[3.0, 4.0]));
    let modal = t.input(row(&[1.0, 2.0]));
    let out = fusion.forward(&mut t, grid, modal, &[true], 0.2);
    // f = [1.5, 1], Ms = 2f = [3, 2], swap -> [2, 3], halve + bias -> [1, 1.75]
    close(
        t.value(out.delta.unwrap()).as_slice().unwrap(),
        &[1.0, 1.75],
    );
    close(t.value(out.out).as_slice().unwrap(), &[3.2, 4.35]);
}

#[test]
fn masked_second_modality_token_changes_nothing() {
    let (mut s, fusion) = store_with(|b| Fusion::build(b, 2, 1, 2));
    put(&mut s, "fusion.modality_pos", &[&[0.5, -1.0], &[9.0, 9.0]]);
    put(&mut s, "fusion.self_attn.v.w", &[&[1.0, 0.0], &[0.0, 1.0]]);
    put(&mut s, "fusion.self_attn.o.w", &[&[1.0, 0.0], &[0.0, 1.0]]);
    put(&mut s, "fusion.cross_attn.v.w", &[&[0.0, 1.0], &[1.0, 0.0]]);
    put(&mut s, "fusion.cross_attn.o.w", &[&[0.5, 0.0], &[0.0, 0.5]]);
    put(&mut s, "fusion.cross_attn.o.b", &[&[0.0, 0.25]]);
    let mut t = Tape::inference(&s);
    let grid = t.input(row(&[3.0, 4.0]));
    let modal = t.input(Mat::from_shape_vec((2, 2), vec![1.0, 2.0, -7.0, 5.0]).unwrap());
    let out = fusion.forward(&mut t, grid, modal, &[true, false], 0.2);
    close(t.value(out.out).as_slice().unwrap(), &[3.2, 4.35]);
}

#[test]
fn one_layer_decoder_on_a_bos_prefix() {
    let (mut s, dec) = store_with(|b| Decoder::build(b, 2, 1, 1, 4, 3, 4));
    let tok = s.id_of("decoder.tok_embed").unwrap();
    s.value_mut(tok).fill(0.0);
    s.value_mut(tok)[[BOS as usize, 0]] = 1.0;
    let pos = s.id_of("decoder.pos_embed").unwrap();
    s.value_mut(pos).fill(0.0);
    s.value_mut(pos)[[0, 1]] = 1.0;
    let eye: &[&[f64]] = &[&[1.0, 0.0], &[0.0, 1.0]];
    put(&mut s, "decoder.layer0.self_attn.v.w", eye);
    put(&mut s, "decoder.layer0.self_attn.o.w", eye);
    put(&mut s, "decoder.layer0.ln1.b", &[&[1.0, -1.0]]);
    put(&mut s, "decoder.layer0.cross_attn.v.w", eye);
    put(
        &mut s,
        "decoder.layer0.cross_attn.o.w",
        &[&[1.0, 0.0], &[0.0, 2.0]],
    );
    put(
        &mut s,
        "decoder.layer0.ffn.fc1.w",
        &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0]],
    );
    put(
        &mut s,
        "decoder.layer0.ffn.fc2.w",
        &[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]],
    );
    put(&mut s, "decoder.layer0.ffn.fc2.b", &[&[0.5, 0.0]]);
    put(
        &mut s,
        "decoder.out.w",
        &[&[1.0, 0.0, -1.0], &[0.0, 1.0, 1.0]],
    );
    put(&mut s, "decoder.out.b", &[&[0.0, 0.0, 0.1]]);
    let mut t = Tape::inference(&s);
    let memory = t.input(row(&[2.0, 0.0]));
    let h = dec.hidden(&mut t, memory, &[BOS as usize]);
    let logits = dec.project(&mut t, h);
    // x = [1, 1]; self-attn passes it through, residual [2, 2] normalizes to 0,
    // leaving ln1's bias [1, -1]; cross-attn adds [2, 0]
    let [a, b] = ln2(3.0, -1.0);
    let f = gelu(a) + 0.5;
    let [u, w] = ln2(a + f, b);
    close(t.value(h).as_slice().unwrap(), &[u, w]);
    close(t.value(logits).as_slice().unwrap(), &[u, w, w - u + 0.1]);
}

#[test]
fn semantic_feedback_by_hand() {
    let (mut s, head) = store_with(|b| SemanticHead::build(b, 2, 2, 0.5));
    put(&mut s, "sf.w_s", &[&[1.0, 0.0], &[0.0, -1.0]]);
    put(&mut s, "sf.w1", &[&[1.0, 1.0], &[0.0, 2.0]]);
    put(&mut s, "sf.w2", &[&[1.0, 0.0], &[1.0, 1.0]]);
    let mut t = Tape::inference(&s);
    let h = t.input(Mat::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 0.0]).unwrap());
    let out = head.forward(&mut t, h, SfPooling::Full);
    let (p0, p1) = (sigmoid(2.0), sigmoid(-1.0));
    let (g0, g1) = (gelu(p0 + p1), gelu(2.0 * p1));
    let dh = [g0, g0 + g1];
    close(t.value(out.pooled).as_slice().unwrap(), &[2.0, 1.0]);
    close(t.value(out.logits).as_slice().unwrap(), &[2.0, -1.0]);
    close(t.value(out.probs).as_slice().unwrap(), &[p0, p1]);
    close(t.value(out.delta).as_slice().unwrap(), &dh);
    close(
        t.value(out.hidden).as_slice().unwrap(),
        &[
            1.0 + 0.5 * dh[0],
            2.0 + 0.5 * dh[1],
            3.0 + 0.5 * dh[0],
            0.5 * dh[1],
        ],
    );
}

#[test]
fn constant_states_pool_to_the_constant() {
    let (s, head) = store_with(|b| SemanticHead::build(b, 3, 2, 0.1));
    let mut t = Tape::inference(&s);
    let h = t.input(Mat::from_shape_fn((5, 3), |(_, j)| j as f64 - 0.5));
    let out = head.forward(&mut t, h, SfPooling::Full);
    close(t.value(out.pooled).as_slice().unwrap(), &[-0.5, 0.5, 1.5]);
    let out = head.forward(&mut t, h, SfPooling::Prefix);
    for r in t.value(out.pooled).rows() {
        close(r.as_slice().unwrap(), &[-0.5, 0.5, 1.5]);
    }
}

#[test]
fn uniform_logits_and_half_probabilities_give_log_losses() {
    let config = tiny_config();
    let mut model = jittered(config.clone(), 50);
    fill(&mut model, "decoder.out.w", 0.0);
    fill(&mut model, "decoder.out.b", 0.0);
    fill(&mut model, "sf.w_s", 0.0);
    let xs = inputs(&config, 3, 6, 51);
    let l = model.losses(&refs(&xs)).unwrap();
    assert!((l.caption - 11f64.ln()).abs() < 1e-12);
    assert!((l.semantic - 2f64.ln()).abs() < 1e-12);
    assert!((l.total - (11f64.ln() + 0.1 * 2f64.ln())).abs() < 1e-12);
}

#[test]
fn total_loss_adds_the_weighted_semantic_term() {
    let l = Losses::new(2.0, 0.5, 0.1);
    assert!((l.total - 2.05).abs() < 1e-12);
}

fn biased_to(token: u32) -> CaptionModel {
    let mut model = jittered(tiny_config(), 52);
    fill(&mut model, "decoder.out.w", 0.0);
    let b = model.param("decoder.out.b").unwrap();
    model.params.value_mut(b).fill(0.0);
    model.params.value_mut(b)[[0, token as usize]] = 5.0;
    model
}

#[test]
fn eos_favouring_projection_stops_immediately() {
    let model = biased_to(EOS);
    let x = inputs(&model.config, 1, 4, 53).remove(0);
    assert_eq!(
        model.generate(&x).unwrap(),
        vec![BOS as usize, EOS as usize]
    );
}

#[test]
fn never_ending_caption_is_cut_at_the_length_limit() {
    let model = biased_to(7);
    let x = inputs(&model.config, 1, 4, 54).remove(0);
    let out = model.generate(&x).unwrap();
    assert_eq!(out.len(), 120);
    assert_eq!(out[0], BOS as usize);
    assert!(out[1..].iter().all(|&t| t == 7));
}

#[test]
fn generation_without_inference_feedback_ignores_the_head() {
    let config = ModelConfig {
        sf_at_inference: false,
        ..tiny_config()
    };
    let a = jittered(config.clone(), 55);
    let mut b = a.clone();
    fill(&mut b, "sf.w2", 3.0);
    let x = inputs(&config, 1, 4, 56).remove(0);
    assert_eq!(a.generate(&x).unwrap(), b.generate(&x).unwrap());
}
