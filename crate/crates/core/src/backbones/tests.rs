//! Parameter-count oracles for the six backbones.
//!
//! The per-model base counts below (trainable / non-trainable before the
//! fine-tuning head is attached) are the published reference figures for
//! these architectures at 224x224 input; reproducing them is the strongest
//! available check that every layer has the right shape.

use super::*;

fn base_counts(id: BackboneId) -> (u64, u64) {
    let mut g = Graph::new(&INPUT_SHAPE);
    base_output(id, &mut g);
    let trainable = g.trainable_param_count();
    (trainable, g.total_param_count() - trainable)
}

#[test]
fn inception_v3_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::InceptionV3), (21_768_352, 34_432));
}

#[test]
fn xception_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::Xception), (20_806_952, 54_528));
}

#[test]
fn densenet121_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::DenseNet121), (6_953_856, 83_648));
}

#[test]
fn mobilenet_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::MobileNet), (3_206_976, 21_888));
}

#[test]
fn resnet50_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::ResNet50), (23_534_592, 53_120));
}

#[test]
fn vgg16_base_matches_reference() {
    assert_eq!(base_counts(BackboneId::Vgg16), (14_714_688, 0));
}

#[test]
fn vgg16_full_count_decomposes_as_base_plus_head() {
    let model = build_model(&BackboneSpec::new(BackboneId::Vgg16), false, 7).unwrap();
    // base + Dense(512 x 512 + 512) + Dense(1 x 512 + 1)
    assert_eq!(
        trainable_param_count(&model),
        14_714_688 + (512 * 512 + 512) + (512 + 1)
    );
}

#[test]
fn audit_reproduces_published_counts_within_tolerance() {
    let rows = audit_params(7);
    assert_eq!(rows.len(), 6);
    for row in &rows {
        assert!(
            row.within_tolerance,
            "{}: computed {} vs expected {} (delta {})",
            row.id.token(),
            row.computed,
            row.expected,
            row.delta
        );
    }
    // Four counts reproduce exactly.
    for row in &rows {
        if row.tolerance == 0.0 {
            assert_eq!(row.delta, 0, "{} should match exactly", row.id.token());
        }
    }
    // The ResNet-50 residual is two 128-channel batch-norm layers' moving
    // statistics worth of head parameters: documented, stable, and small.
    let resnet = rows.iter().find(|r| r.id == BackboneId::ResNet50).unwrap();
    assert_eq!(resnet.computed, 23_801_345);
    assert_eq!(resnet.delta, 4_352);
}

#[test]
fn every_head_ends_in_a_single_sigmoid_unit() {
    for id in BackboneId::ALL {
        assert!(
            head_for(id).final_layer_is_sigmoid_unit(),
            "{} head must end in Dense(1, sigmoid)",
            id.token()
        );
    }
}

#[test]
fn model_emits_one_logit_and_taps_features_after_first_head_layer() {
    let model = build_model(&BackboneSpec::new(BackboneId::Vgg16), false, 7).unwrap();
    let out = model.graph.output_node();
    assert_eq!(model.graph.nodes[out].out_shape, vec![1]);
    // VGG16's first head layer is global max pooling: a 512-wide feature
    // vector, which is what the hybrid model consumes.
    assert_eq!(model.graph.nodes[model.feature_tap].out_shape, vec![512]);
    assert!(model.feature_tap >= model.head_start);
}

#[test]
fn tokens_round_trip_and_display_names_are_table_rows() {
    for id in BackboneId::ALL {
        assert_eq!(BackboneId::from_token(id.token()), Some(id));
    }
    assert_eq!(BackboneId::from_token("resnet-50"), None);
    let names: Vec<&str> = BackboneId::ALL.iter().map(|b| b.display_name()).collect();
    assert_eq!(
        names,
        ["Inceptionv3", "Xception", "Densenet", "Mobilenet", "Resnet50", "VGG16"]
    );
}

#[test]
fn building_twice_with_one_seed_is_deterministic() {
    let spec = BackboneSpec::new(BackboneId::MobileNet);
    let a = build_model(&spec, false, 42).unwrap();
    let b = build_model(&spec, false, 42).unwrap();
    for (na, nb) in a.graph.nodes.iter().zip(&b.graph.nodes) {
        for (pa, pb) in na.params.iter().zip(&nb.params) {
            assert_eq!(pa.data.data, pb.data.data, "{}/{}", na.name, pa.name);
        }
    }
}

#[test]
fn pretrained_without_weights_dir_reports_unavailable() {
    // The env var is absent in the test environment.
    std::env::remove_var(WEIGHTS_DIR_ENV);
    match build_model(&BackboneSpec::new(BackboneId::MobileNet), true, 7) {
        Err(ModelError::WeightsUnavailable(..)) => {}
        Err(other) => panic!("expected WeightsUnavailable, got {other}"),
        Ok(_) => panic!("expected WeightsUnavailable, got a model"),
    }
}

#[test]
fn every_backbone_emits_a_finite_logit_at_random_init() {
    let x = crate::dataset::synth_pixels(7, 0, crate::dataset::Label::Asd);
    for id in BackboneId::ALL {
        let model = build_model(&BackboneSpec::new(id), false, 7).unwrap();
        let acts = model.graph.forward(&x, nn::Mode::Eval);
        let z = acts.output().data[0];
        assert!(z.is_finite(), "{}: logit {z}", id.token());
    }
}
