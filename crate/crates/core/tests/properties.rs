mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msnet::config::{parse_config, parse_override, Preset};
use msnet::dataset::{generate_bouncing_sprites, reflect_step, Glyph, SpriteSpec};
use msnet::evaluation::{retrieve_nearest, FeatureRecord, RecordKind};
use msnet::losses::{clamp_prob, content_gan_losses, frame_gan_losses, motion_gan_losses};
use msnet::networks::{content_encode, generate, init_params, motion_encode};
use msnet::prediction::{predict_sequence, PredictionRequest};
use msnet::training::{decode_checkpoint, encode_checkpoint, fresh_checkpoint};

use common::{noise_clips, tiny_network};

fn record(id: usize, vector: Vec<f32>) -> FeatureRecord {
    FeatureRecord {
        clip_id: format!("c{id:03}"),
        frame_a: 0,
        frame_b: 1,
        kind: RecordKind::Content,
        vector,
        motion_label: String::new(),
        content_label: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_stays_inside(lo in -20i64..20, span in 0i64..40, off in 0i64..40, v in -40i64..40) {
        let hi = lo + span;
        let p = lo + off.min(span);
        let (q, w) = reflect_step(p, v, lo, hi);
        prop_assert!(q >= lo && q <= hi);
        if span > 0 {
            prop_assert_eq!(w.abs(), v.abs());
        }
    }

    #[test]
    fn sprite_clips_are_binary_and_reproducible(seed in 0u64..1000, sprites in 1usize..4) {
        let spec = SpriteSpec {
            canvas: (16, 16),
            glyphs: Glyph::digits(1),
            sprites_per_clip: sprites,
            speed_set: vec![1, 2],
            frames_per_clip: 6,
        };
        let a = generate_bouncing_sprites(&spec, 2, seed).unwrap();
        prop_assert_eq!(&a, &generate_bouncing_sprites(&spec, 2, seed).unwrap());
        for c in &a {
            prop_assert_eq!(c.len(), 6);
            prop_assert!(c.motion_label.is_some() && c.content_label.is_some());
            for f in &c.frames {
                prop_assert!(f.data().iter().all(|v| *v == 0.0 || *v == 1.0));
                prop_assert!(f.data().contains(&1.0));
            }
        }
    }

    #[test]
    fn gan_losses_are_nonnegative_and_adversarial_bounded(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (d, g) = frame_gan_losses(p, q);
        prop_assert!(d >= 0.0 && g >= 0.0 && d.is_finite() && g.is_finite());
        for (disc, adv) in [content_gan_losses(p, q), motion_gan_losses(p, q)] {
            prop_assert!(disc >= 0.0 && disc.is_finite());
            prop_assert!(adv >= 2.0 * std::f64::consts::LN_2 - 1e-12);
        }
        let c = clamp_prob(p);
        prop_assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn retrieval_is_a_sorted_permutation(
        vectors in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..30),
        query in prop::collection::vec(-1.0f32..1.0, 3),
    ) {
        let candidates: Vec<_> = vectors.iter().enumerate().map(|(i, v)| record(i, v.clone())).collect();
        let ranked = retrieve_nearest(&record(999, query), &candidates, RecordKind::Content).unwrap();
        let mut seen: Vec<usize> = ranked.iter().map(|r| r.index).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..candidates.len()).collect::<Vec<_>>());
        prop_assert!(ranked.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn overrides_take_precedence(beta in 0.0f64..1.0, seed in 0u64..1_000_000) {
        let o = vec![
            parse_override(&format!("train.weights.beta={beta}")).unwrap(),
            parse_override(&format!("train.seed={seed}")).unwrap(),
        ];
        let c = parse_config(Some(Preset::Mnist64), None, &o).unwrap();
        prop_assert_eq!(c.train.weights.beta, beta);
        prop_assert_eq!(c.train.seed, seed);
        prop_assert_eq!(c.train.k_max, 5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn networks_are_finite_and_generator_bounded(seed in 0u64..1000) {
        let cfg = tiny_network();
        let params = init_params(&cfg, seed).unwrap();
        let clip = &noise_clips(&cfg, 1, 4, seed)[0];
        let (c, skips) = content_encode(&params, &cfg, &clip.frames[0], &clip.frames[1]).unwrap();
        let m = motion_encode(&params, &cfg, &clip.frames[1], &clip.frames[3]).unwrap();
        prop_assert!(c.values.is_finite() && m.values.is_finite());
        let x = generate(&params, &cfg, &c, &skips, &m).unwrap();
        prop_assert_eq!(x.shape(), &cfg.image_shape[..]);
        prop_assert!(x.data().iter().all(|v| *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn prediction_length_matches_horizon(seed in 0u64..1000, k in 2usize..5, horizon in 1usize..7) {
        let cfg = tiny_network();
        let params = init_params(&cfg, seed).unwrap();
        let clip = &noise_clips(&cfg, 1, 5, seed)[0];
        let out = predict_sequence(&params, &cfg, &PredictionRequest {
            given: clip.frames[..k].to_vec(),
            horizon,
        }).unwrap();
        prop_assert_eq!(out.len(), horizon);
        prop_assert!(out.iter().all(|f| f.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in 0u64..1000, step in 0u64..1_000_000) {
        let cfg = msnet::config::RunConfig::preset(Preset::Desk);
        let mut train = cfg.train.clone();
        train.seed = seed;
        let mut ck = fresh_checkpoint(&tiny_network(), &train).unwrap();
        ck.step = step;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ck.params.get_mut("G/out.b").unwrap().data_mut()[0] = rng.random();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(&back.params, &ck.params);
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }
}
