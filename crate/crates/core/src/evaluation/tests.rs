use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{generate_bouncing_sprites, Glyph, SpriteSpec};
use crate::networks::init_params;

fn frame(h: usize, w: usize, data: Vec<f64>) -> Frame {
    Tensor::new(vec![1, h, w], data.into_iter().map(|v| v as f32).collect()).unwrap()
}

fn random_frame(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    Tensor::new(
        vec![c, h, w],
        (0..c * h * w).map(|_| rng.random()).collect(),
    )
    .unwrap()
}

/// Deterministic test pattern shared with the frozen reference values below.
fn pattern(h: usize, w: usize, seed: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| ((i * 7919 + seed * 104729 + (i * i) % 613) % 1000) as f64 / 999.0)
        .collect()
}

/// SSIM evaluated window by window with a full 2-D Gaussian.
fn brute_ssim(x: &Frame, y: &Frame) -> f64 {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let c = x.shape()[0];
    let px = |f: &Frame, r: usize, col: usize| {
        (0..c)
            .map(|ch| f.data()[(ch * h + r) * w + col] as f64)
            .sum::<f64>()
            / c as f64
    };
    let mut k2 = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for (i, row) in k2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0;
    for r0 in 0..=h - 11 {
        for c0 in 0..=w - 11 {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in k2.iter().enumerate() {
                for (j, kij) in row.iter().enumerate() {
                    let g = kij / s;
                    let (a, b) = (px(x, r0 + i, c0 + j), px(y, r0 + i, c0 + j));
                    mx += g * a;
                    my += g * b;
                    xx += g * a * a;
                    yy += g * b * b;
                    xy += g * a * b;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_frame(1, 8, 8, &mut rng);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let z = frame(10, 10, vec![0.0; 100]);
    let o = frame(10, 10, vec![0.1; 100]);
    let v = psnr(&z, &o).unwrap();
    assert!((v - 20.0).abs() < 1e-5, "{v}");
    let b = random_frame(1, 8, 8, &mut rng);
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / 64.0;
    assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    assert!(psnr(&a, &frame(4, 16, vec![0.0; 64])).is_err());
}

#[test]
fn ssim_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_frame(1, 16, 16, &mut rng);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let zero = frame(16, 16, vec![0.0; 256]);
    let one = frame(16, 16, vec![1.0; 256]);
    let v = ssim(&zero, &one).unwrap();
    assert!((v - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12, "{v}");
    assert!(ssim(
        &frame(10, 16, vec![0.0; 160]),
        &frame(10, 16, vec![0.0; 160])
    )
    .is_err());
}

#[test]
fn ssim_matches_frozen_reference_values() {
    // scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
    // use_sample_covariance=False, data_range=1.0).
    for (h, w, s1, s2, want) in [
        (16, 16, 1, 2, 0.7470223063780056),
        (32, 20, 3, 4, 0.7662917936915397),
        (11, 11, 5, 6, 0.5838061479134207),
    ] {
        let a = pattern(h, w, s1);
        let b: Vec<f64> = a
            .iter()
            .zip(pattern(h, w, s2))
            .map(|(x, y)| 0.6 * x + 0.4 * y)
            .collect();
        // f32 storage rounds inputs, so compare against an f64 evaluation too.
        let got = ssim(&frame(h, w, a), &frame(h, w, b)).unwrap();
        assert!((got - want).abs() < 1e-5, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn ssim_and_psnr_match_oracles_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..20 {
        let c = if i % 4 == 0 { 3 } else { 1 };
        let a = random_frame(c, 14, 17, &mut rng);
        let b = random_frame(c, 14, 17, &mut rng);
        assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn curves_and_csv() {
    let c = MetricCurve::from_values("ssim", &[vec![1.0, 0.5], vec![0.0, 0.5]]).unwrap();
    assert_eq!(c.mean, vec![0.5, 0.5]);
    assert_eq!(c.std, vec![0.5, 0.0]);
    assert_eq!(c.num_sequences, 2);
    assert_eq!(c.to_csv(), "offset,mean,std\n1,0.5,0.5\n2,0.5,0\n");
    assert!(MetricCurve::from_values("ssim", &[]).is_err());
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<MetricCurve>(&json).unwrap(), c);
}

fn small_cfg() -> NetworkConfig {
    NetworkConfig {
        image_shape: [1, 16, 16],
        num_blocks: 2,
        base_channels: 4,
        motion_channels: 2,
        content_channels: 3,
        clstm_layers: 1,
        clstm_hidden_channels: 4,
    }
}

fn sprite_clips(n: usize, frames: usize) -> Vec<VideoClip> {
    let spec = SpriteSpec {
        canvas: (16, 16),
        glyphs: Glyph::digits(1),
        sprites_per_clip: 1,
        speed_set: vec![1, 2],
        frames_per_clip: frames,
    };
    generate_bouncing_sprites(&spec, n, 5).unwrap()
}

#[test]
fn static_video_baseline_is_perfect() {
    let p = init_params(&small_cfg(), 1).unwrap();
    let f = random_frame(1, 16, 16, &mut ChaCha8Rng::seed_from_u64(4));
    let clip = VideoClip::new("still", vec![f; 8], None, None).unwrap();
    let e = evaluate_prediction(&p, &small_cfg(), &[clip], 3, 5).unwrap();
    assert_eq!(e.baseline_ssim.len(), 5);
    assert_eq!(e.ssim.len(), 5);
    assert_eq!(e.psnr.len(), 5);
    assert!(e.baseline_ssim.mean.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(e.baseline_psnr.mean.iter().all(|v| *v == 100.0));
    assert!(e.ssim.mean.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn evaluation_errors() {
    let p = init_params(&small_cfg(), 1).unwrap();
    assert!(matches!(
        evaluate_prediction(&p, &small_cfg(), &[], 2, 3),
        Err(MsnetError::Empty(_))
    ));
    let clips = sprite_clips(2, 5);
    assert!(matches!(
        evaluate_prediction(&p, &small_cfg(), &clips, 3, 3),
        Err(MsnetError::ClipTooShort { .. })
    ));
}

#[test]
fn feature_export_counts_and_csv() {
    let cfg = small_cfg();
    let p = init_params(&cfg, 2).unwrap();
    let clips = sprite_clips(3, 6);
    let m = export_features(&p, &cfg, &clips, RecordKind::Motion).unwrap();
    assert_eq!(m.len(), 3 * 5);
    assert!(m
        .iter()
        .all(|r| r.vector.len() == 2 * 4 * 4 && r.kind == RecordKind::Motion));
    let c = export_features(&p, &cfg, &clips, RecordKind::Content).unwrap();
    assert!(c.iter().all(|r| r.vector.len() == 3 * 4 * 4));
    assert_eq!(
        m,
        export_features(&p, &cfg, &clips, RecordKind::Motion).unwrap()
    );
    let single =
        crate::networks::motion_encode(&p, &cfg, &clips[1].frames[2], &clips[1].frames[3]).unwrap();
    let rec = &m[5 + 2];
    assert_eq!(
        (rec.clip_id.as_str(), rec.frame_a, rec.frame_b),
        ("clip_00001", 2, 3)
    );
    let diff = single
        .flatten()
        .iter()
        .zip(&rec.vector)
        .fold(0f32, |d, (a, b)| d.max((a - b).abs()));
    assert!(diff < 1e-5);
    assert_eq!(rec.motion_label, clips[1].motion_label.clone().unwrap());

    let mut buf = Vec::new();
    write_features_csv(&mut buf, &m).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("clip_id,frame_a,frame_b,kind,motion_label,content_label,v0,v1,"));
    assert!(header.ends_with(",v31"));
    assert_eq!(lines.count(), 15);
    let unlabeled = VideoClip::new("u", clips[0].frames.clone(), None, None).unwrap();
    let r = export_features(&p, &cfg, &[unlabeled], RecordKind::Motion).unwrap();
    assert!(r
        .iter()
        .all(|r| r.motion_label.is_empty() && r.content_label.is_empty()));
}

fn rec(clip: &str, a: usize, v: Vec<f32>) -> FeatureRecord {
    FeatureRecord {
        clip_id: clip.into(),
        frame_a: a,
        frame_b: a + 1,
        kind: RecordKind::Motion,
        vector: v,
        motion_label: String::new(),
        content_label: String::new(),
    }
}

#[test]
fn retrieval_contract() {
    let q = rec("q", 0, vec![0.0, 0.0]);
    let near = rec("b", 0, vec![1.0, 0.0]);
    let far = rec("a", 0, vec![2.0, 0.0]);
    for cands in [
        vec![near.clone(), far.clone()],
        vec![far.clone(), near.clone()],
    ] {
        let r = retrieve_nearest(&q, &cands, RecordKind::Motion).unwrap();
        assert_eq!(cands[r[0].index].clip_id, "b");
        assert_eq!(r[0].distance, 1.0);
        assert_eq!(r[1].distance, 2.0);
    }
    let cands = vec![far.clone(), q.clone(), near.clone()];
    let r = retrieve_nearest(&q, &cands, RecordKind::Motion).unwrap();
    assert_eq!((r[0].index, r[0].distance), (1, 0.0));
    let tie = vec![
        rec("z", 3, vec![1.0, 0.0]),
        rec("y", 5, vec![0.0, 1.0]),
        rec("y", 2, vec![-1.0, 0.0]),
    ];
    let r = retrieve_nearest(&q, &tie, RecordKind::Motion).unwrap();
    assert_eq!(r.iter().map(|x| x.index).collect::<Vec<_>>(), vec![2, 1, 0]);
    assert!(matches!(
        retrieve_nearest(&q, &[], RecordKind::Motion),
        Err(MsnetError::Empty(_))
    ));
    assert!(matches!(
        retrieve_nearest(&q, &cands, RecordKind::Content),
        Err(MsnetError::KindMismatch { .. })
    ));
}

#[test]
fn retrieval_matches_brute_force_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let cands: Vec<_> = (0..20)
            .map(|i| {
                rec(
                    &format!("c{i:02}"),
                    i,
                    (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let q = rec(
            "q",
            0,
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let r = retrieve_nearest(&q, &cands, RecordKind::Motion).unwrap();
        let mut best = (f64::INFINITY, 0);
        for (i, c) in cands.iter().enumerate() {
            let d: f64 = q
                .vector
                .iter()
                .zip(&c.vector)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        assert_eq!(r[0].index, best.1);
        assert!(r.windows(2).all(|w| w[0].distance <= w[1].distance));
    }
}

#[test]
fn silhouette_examples() {
    let pts: Vec<Vec<f32>> = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
    let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
    let s = silhouette(&refs, &["A", "A", "B", "B"]).unwrap();
    // Hand values: a = 0.1; b = 10.05 / 9.95 / 9.95 / 10.05.
    let want = ((1.0 - 0.1 / 10.05) * 2.0 + (1.0 - 0.1 / 9.95) * 2.0) / 4.0;
    assert!((s - want).abs() < 1e-6, "{s}");
    assert!((s - 0.990).abs() < 1e-3);
    let same: Vec<Vec<f32>> = vec![vec![1.0]; 4];
    let refs: Vec<&[f32]> = same.iter().map(|p| p.as_slice()).collect();
    assert_eq!(silhouette(&refs, &["A", "B", "A", "B"]).unwrap(), 0.0);
    assert!(silhouette(&refs, &["A", "A", "A", "A"]).is_err());
    let pts: Vec<Vec<f32>> = vec![vec![0.0], vec![5.0], vec![5.5]];
    let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
    let s = silhouette(&refs, &["A", "B", "B"]).unwrap();
    let v = |a: f64, b: f64| (b - a) / a.max(b);
    assert!((s - (0.0 + v(0.5, 5.0) + v(0.5, 5.5)) / 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn silhouette_bounded_and_order_invariant(
        pts in proptest::collection::vec((-5.0f32..5.0, -5.0f32..5.0, 0usize..3), 6..20),
        shift in 0usize..20,
    ) {
        let mut labels: Vec<String> = pts.iter().map(|p| format!("L{}", p.2)).collect();
        labels[0] = "L0".into();
        labels[1] = "L1".into();
        let vecs: Vec<Vec<f32>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let refs: Vec<&[f32]> = vecs.iter().map(|v| v.as_slice()).collect();
        let lr: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
        let s = silhouette(&refs, &lr).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        let k = shift % refs.len();
        let mut r2 = refs.clone();
        let mut l2 = lr.clone();
        r2.rotate_left(k);
        l2.rotate_left(k);
        prop_assert!((silhouette(&r2, &l2).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn metrics_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_frame(1, 12, 12, &mut rng);
        let b = random_frame(1, 12, 12, &mut rng);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(psnr(&a, &b).unwrap() >= 0.0);
    }
}
