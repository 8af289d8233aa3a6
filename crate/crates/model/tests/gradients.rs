mod common;

use common::*;
use shotcap_model::{check_gradients, SfPooling};

fn assert_all_close(config: shotcap_model::ModelConfig) {
    let model = jittered(config.clone(), 11);
    let xs = inputs(&config, 2, 6, 12);
    let checks = check_gradients(&model, &refs(&xs), 1e-3).unwrap();
    assert_eq!(checks.len(), model.params.trainable_ids().count());
    for c in &checks {
        assert!(
            c.rel_err < 1e-4,
            "{} relative error {:e}",
            c.name,
            c.rel_err
        );
    }
}

#[test]
fn finite_differences_match_every_trainable_tensor() {
    assert_all_close(tiny_config());
}

#[test]
fn finite_differences_match_with_prefix_pooling() {
    assert_all_close(shotcap_model::ModelConfig {
        sf_pooling: SfPooling::Prefix,
        ..tiny_config()
    });
}

#[test]
fn finite_differences_match_without_refiner_or_feedback() {
    assert_all_close(shotcap_model::ModelConfig {
        use_refiner: false,
        use_sf: false,
        ..tiny_config()
    });
}

#[test]
fn frozen_tensors_are_not_checked_and_get_no_gradient() {
    let config = shotcap_model::ModelConfig {
        backbone_blocks: 2,
        trainable_backbone_blocks: 1,
        ..tiny_config()
    };
    let model = jittered(config.clone(), 3);
    let xs = inputs(&config, 2, 6, 4);
    let (grads, _) = model.gradients(&refs(&xs)).unwrap();
    for e in model.params.entries() {
        let id = model.param(&e.name).unwrap();
        let frozen = e.name.starts_with("backbone.patch_embed")
            || e.name.starts_with("backbone.pos")
            || e.name.starts_with("backbone.block0");
        assert_eq!(!e.trainable, frozen, "{}", e.name);
        if frozen {
            assert!(grads.get(id).is_none(), "{}", e.name);
        }
    }
}
