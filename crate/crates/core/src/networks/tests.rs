use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::Net;

fn config(size: usize, blocks: usize, base: usize, cm: usize, cc: usize) -> NetworkConfig {
    NetworkConfig {
        image_shape: [1, size, size],
        num_blocks: blocks,
        base_channels: base,
        motion_channels: cm,
        content_channels: cc,
        clstm_layers: 2,
        clstm_hidden_channels: 8,
    }
}

fn random_frame(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Frame {
    let [c, h, w] = cfg.image_shape;
    Tensor::new(
        vec![c, h, w],
        (0..c * h * w).map(|_| rng.random()).collect(),
    )
    .unwrap()
}

#[test]
fn init_is_deterministic() {
    let cfg = config(16, 2, 4, 2, 3);
    assert_eq!(init_params(&cfg, 3).unwrap(), init_params(&cfg, 3).unwrap());
    assert_ne!(init_params(&cfg, 3).unwrap(), init_params(&cfg, 4).unwrap());
    let p = init_params(&cfg, 3).unwrap();
    for net in Net::ALL {
        assert!(p.has_network(net), "{net}");
    }
    assert!(p
        .iter()
        .filter(|(k, _)| k.ends_with(".b"))
        .all(|(_, t)| t.data().iter().all(|v| *v == 0.0)));
}

#[test]
fn indivisible_image_rejected() {
    let cfg = config(20, 3, 4, 2, 3);
    assert!(matches!(
        init_params(&cfg, 0),
        Err(MsnetError::InvalidConfig(_))
    ));
}

#[test]
fn bottleneck_sizes() {
    assert_eq!(config(64, 4, 32, 4, 8).bottleneck(), (4, 4));
    assert_eq!(config(128, 4, 32, 8, 8).bottleneck(), (8, 8));
}

#[test]
fn sixty_four_pixel_feature_shapes() {
    let cfg = config(64, 4, 8, 4, 8);
    let p = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let (content, skips) = content_encode(&p, &cfg, &a, &b).unwrap();
    assert_eq!(content.shape(), [8, 4, 4]);
    assert_eq!(content.kind, FeatureKind::Content);
    let sizes: Vec<usize> = skips.iter().map(|s| s.shape()[1]).collect();
    assert_eq!(sizes, vec![32, 16, 8, 4]);
    assert!(content.values.is_finite());
    let motion = motion_encode(&p, &cfg, &a, &b).unwrap();
    assert_eq!(motion.shape(), [4, 4, 4]);
    let still = motion_encode(&p, &cfg, &a, &a).unwrap();
    assert!(still.values.is_finite());
    let frame = generate(&p, &cfg, &content, &skips, &motion).unwrap();
    assert_eq!(frame.shape(), &[1, 64, 64]);
    assert!(frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn encoder_rejects_wrong_frame_shape() {
    let cfg = config(16, 2, 4, 2, 3);
    let p = init_params(&cfg, 0).unwrap();
    let a = Tensor::zeros(&[1, 16, 16]);
    let b = Tensor::zeros(&[1, 8, 8]);
    assert!(matches!(
        content_encode(&p, &cfg, &a, &b),
        Err(MsnetError::Shape(_))
    ));
    assert!(frame_discriminate(&p, &cfg, &a, &b).is_err());
}

#[test]
fn motion_guided_connection_zero_conv_is_identity() {
    let cfg = config(16, 2, 4, 2, 3);
    let mut p = init_params(&cfg, 1).unwrap();
    for (name, t) in p.iter_mut() {
        if name.starts_with("G/mgc") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let (_, skips) = content_encode(&p, &cfg, &a, &b).unwrap();
    let motion = motion_encode(&p, &cfg, &a, &b).unwrap();
    for (i, s) in skips.iter().enumerate() {
        let out = motion_guided_connect(&p, &cfg, i, s, &motion).unwrap();
        assert_eq!(out.values, s.values);
    }
}

#[test]
fn motion_guided_connection_preserves_shape() {
    let cfg = config(32, 3, 4, 2, 3);
    let p = init_params(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let (_, skips) = content_encode(&p, &cfg, &a, &b).unwrap();
    let motion = motion_encode(&p, &cfg, &a, &b).unwrap();
    for (i, s) in skips.iter().enumerate() {
        let out = motion_guided_connect(&p, &cfg, i, s, &motion).unwrap();
        assert_eq!(out.shape(), s.shape());
    }
}

#[test]
fn generator_rejects_wrong_skip_count() {
    let cfg = config(16, 2, 4, 2, 3);
    let p = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let (content, skips) = content_encode(&p, &cfg, &a, &b).unwrap();
    let motion = motion_encode(&p, &cfg, &a, &b).unwrap();
    assert!(generate(&p, &cfg, &content, &skips[..1], &motion).is_err());
}

#[test]
fn discriminators_output_probabilities() {
    let cfg = config(16, 2, 4, 2, 3);
    let p = init_params(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let df = frame_discriminate(&p, &cfg, &a, &b).unwrap();
    assert!(df > 0.0 && df < 1.0);
    assert_eq!(df, frame_discriminate(&p, &cfg, &a, &b).unwrap());

    let m = motion_encode(&p, &cfg, &a, &b).unwrap();
    let dc = content_discriminate(&p, &cfg, &m, &m).unwrap();
    assert!(dc.is_finite() && dc > 0.0 && dc < 1.0);

    let (c, _) = content_encode(&p, &cfg, &a, &b).unwrap();
    let dm = motion_discriminate(&p, &cfg, &c).unwrap();
    assert!(dm > 0.0 && dm < 1.0);
    assert_eq!(dm, motion_discriminate(&p, &cfg, &c).unwrap());
}

#[test]
fn discriminators_check_feature_kinds() {
    let cfg = config(16, 2, 4, 3, 3);
    let p = init_params(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let m = motion_encode(&p, &cfg, &a, &b).unwrap();
    let (c, _) = content_encode(&p, &cfg, &a, &b).unwrap();
    assert!(matches!(
        content_discriminate(&p, &cfg, &c, &m),
        Err(MsnetError::KindMismatch { .. })
    ));
    assert!(matches!(
        motion_discriminate(&p, &cfg, &m),
        Err(MsnetError::KindMismatch { .. })
    ));
}

#[test]
fn clstm_shapes_and_zero_origin() {
    let cfg = config(16, 2, 4, 2, 3);
    let mut p = init_params(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (random_frame(&cfg, &mut rng), random_frame(&cfg, &mut rng));
    let m = motion_encode(&p, &cfg, &a, &b).unwrap();
    let (state, out) = clstm_step(&p, &cfg, &PredictorState::zeros(&cfg), &m).unwrap();
    assert_eq!(out.shape(), cfg.motion_shape());
    assert_eq!(out.kind, FeatureKind::PredictedMotion);
    assert_eq!(state.layers.len(), 2);
    let (_, again) = clstm_step(&p, &cfg, &state, &out).unwrap();
    assert!(again.values.is_finite());

    for (name, t) in p.iter_mut() {
        if name.starts_with("cLSTM") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let zero = FeatureMap {
        values: Tensor::zeros(&cfg.motion_shape()),
        kind: FeatureKind::Motion,
        scale: cfg.num_blocks,
    };
    let (_, out) = clstm_step(&p, &cfg, &PredictorState::zeros(&cfg), &zero).unwrap();
    assert!(out.values.data().iter().all(|v| *v == 0.0));
}
