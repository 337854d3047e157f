//! Frame reproduction and multi-step prediction with a trained checkpoint.

use std::fs::File;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame as GifFrame, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dataset::{to_byte, write_frame, Frame};
use crate::error::{MsnetError, Result};
use crate::networks::{clstm, encoders, NetworkConfig};
use crate::params::{ModelParams, Net};
use crate::tensor::Tensor;

/// Given frames `x_1..x_k` and the number of frames to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRequest {
    pub given: Vec<Frame>,
    pub horizon: usize,
}

impl PredictionRequest {
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.given.len() < 2 {
            return Err(MsnetError::InvalidConfig(format!(
                "prediction needs at least 2 given frames, got {}",
                self.given.len()
            )));
        }
        if self.horizon == 0 {
            return Err(MsnetError::InvalidConfig(
                "prediction horizon must be >= 1".into(),
            ));
        }
        if let Some(f) = self.given.iter().find(|f| f.shape() != cfg.image_shape) {
            return Err(MsnetError::Shape(format!(
                "given frame {:?}, network expects {:?}",
                f.shape(),
                cfg.image_shape
            )));
        }
        Ok(())
    }
}

fn stack(g: &mut Graph<f32>, frames: &[&Frame]) -> Result<Var> {
    Ok(g.constant(Tensor::stack(frames)?))
}

/// `G(E_c(x_t, x_{t+1}), E_m(x_{t+1}, x_{t+k}))`.
pub fn reproduce_frame(
    params: &ModelParams,
    cfg: &NetworkConfig,
    x_t: &Frame,
    x_t1: &Frame,
    x_tk: &Frame,
) -> Result<Frame> {
    let mut g = Graph::with_params(params, &[]);
    let a = stack(&mut g, &[x_t])?;
    let b = stack(&mut g, &[x_t1])?;
    let c = stack(&mut g, &[x_tk])?;
    let (content, skips) = encoders::content_encoder(&mut g, cfg, a, b)?;
    let motion = encoders::motion_encoder(&mut g, cfg, b, c)?;
    let out = encoders::generator(&mut g, cfg, content, &skips, motion)?;
    Ok(g.value(out).index(0))
}

/// Predicts `horizon` frames after the given ones.
pub fn predict_sequence(
    params: &ModelParams,
    cfg: &NetworkConfig,
    request: &PredictionRequest,
) -> Result<Vec<Frame>> {
    Ok(predict_batch(params, cfg, std::slice::from_ref(request))?.remove(0))
}

/// Runs several requests with equal `k` and horizon as one batch. Requests share no
/// state: every operation is per sample.
pub fn predict_batch(
    params: &ModelParams,
    cfg: &NetworkConfig,
    requests: &[PredictionRequest],
) -> Result<Vec<Vec<Frame>>> {
    let first = requests
        .first()
        .ok_or_else(|| MsnetError::Empty("no prediction requests".into()))?;
    let (k, horizon) = (first.given.len(), first.horizon);
    for r in requests {
        r.validate(cfg)?;
        if r.given.len() != k || r.horizon != horizon {
            return Err(MsnetError::InvalidConfig(
                "batched requests need equal given-frame counts and horizons".into(),
            ));
        }
    }
    if !params.has_network(Net::Predictor) {
        return Err(MsnetError::MissingParam("cLSTM parameters".into()));
    }
    let n = requests.len();
    let mut g = Graph::with_params(params, &[]);

    let prev: Vec<&Frame> = requests.iter().map(|r| &r.given[k - 2]).collect();
    let last: Vec<&Frame> = requests.iter().map(|r| &r.given[k - 1]).collect();
    let a = stack(&mut g, &prev)?;
    let b = stack(&mut g, &last)?;
    let (content, skips) = encoders::content_encoder(&mut g, cfg, a, b)?;

    // Warm-up inputs E_m(x_k, x_t), t = 1..k, encoded in one pass.
    let anchors: Vec<&Frame> = (0..k).flat_map(|_| last.iter().copied()).collect();
    let given: Vec<&Frame> = (0..k)
        .flat_map(|t| requests.iter().map(move |r| &r.given[t]))
        .collect();
    let ma = stack(&mut g, &anchors)?;
    let mb = stack(&mut g, &given)?;
    let motion = encoders::motion_encoder(&mut g, cfg, ma, mb)?;

    let mut state = clstm::zero_state(&mut g, cfg, n);
    let mut pred = None;
    for t in 0..k {
        let x = g.narrow(motion, 0, t * n, n)?;
        let (s, o) = clstm::step(&mut g, cfg, &state, x)?;
        state = s;
        pred = Some(o);
    }
    let mut preds = vec![pred.expect("k >= 2")];
    for _ in 1..horizon {
        let (s, o) = clstm::step(&mut g, cfg, &state, *preds.last().expect("non-empty"))?;
        state = s;
        preds.push(o);
    }

    let reps = vec![content; horizon];
    let content_all = g.concat(&reps, 0)?;
    let skips_all = skips
        .iter()
        .map(|s| g.concat(&vec![*s; horizon], 0))
        .collect::<Result<Vec<_>>>()?;
    let motion_all = g.concat(&preds, 0)?;
    let frames = encoders::generator(&mut g, cfg, content_all, &skips_all, motion_all)?;
    let out = g.value(frames);
    Ok((0..n)
        .map(|i| (0..horizon).map(|t| out.index(t * n + i)).collect())
        .collect())
}

/// Metadata written next to predicted frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSidecar {
    pub checkpoint: PathBuf,
    pub given_frames: usize,
    pub horizon: usize,
    pub image_shape: [usize; 3],
    pub frames: Vec<String>,
    pub gif: Option<String>,
    pub source: Option<String>,
}

pub const SIDECAR_FILE: &str = "prediction.json";

/// Writes `pred_%04d.png` per frame (numbered from `k + 1`), an optional animated GIF
/// and the JSON sidecar.
pub fn write_prediction(
    dir: &Path,
    frames: &[Frame],
    mut sidecar: PredictionSidecar,
    gif: bool,
) -> Result<PredictionSidecar> {
    std::fs::create_dir_all(dir).map_err(|e| MsnetError::io(dir, e))?;
    sidecar.frames.clear();
    for (i, f) in frames.iter().enumerate() {
        let name = format!("pred_{:04}.png", sidecar.given_frames + i + 1);
        write_frame(&dir.join(&name), f)?;
        sidecar.frames.push(name);
    }
    sidecar.gif = None;
    if gif {
        let name = "prediction.gif".to_string();
        write_gif(&dir.join(&name), frames)?;
        sidecar.gif = Some(name);
    }
    let p = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&p, json).map_err(|e| MsnetError::io(&p, e))?;
    Ok(sidecar)
}

fn to_rgba(f: &Frame) -> RgbaImage {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let d = f.data();
    RgbaImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |ch: usize| to_byte(d[ch.min(c - 1) * h * w + i]);
        image::Rgba([px(0), px(1), px(2), 255])
    })
}

pub fn write_gif(path: &Path, frames: &[Frame]) -> Result<()> {
    let file = File::create(path).map_err(|e| MsnetError::io(path, e))?;
    let mut enc = GifEncoder::new(file);
    enc.set_repeat(Repeat::Infinite)?;
    for f in frames {
        enc.encode_frame(GifFrame::from_parts(
            to_rgba(f),
            0,
            0,
            Delay::from_numer_denom_ms(200, 1),
        ))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{
        clstm_step, content_encode, generate, init_params, motion_encode, PredictorState,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            image_shape: [1, 16, 16],
            num_blocks: 2,
            base_channels: 4,
            motion_channels: 2,
            content_channels: 3,
            clstm_layers: 2,
            clstm_hidden_channels: 3,
        }
    }

    fn frames(n: usize, seed: u64) -> Vec<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Tensor::new(vec![1, 16, 16], (0..256).map(|_| rng.random()).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn reproduction_shape_range_and_determinism() {
        let p = init_params(&cfg(), 1).unwrap();
        let f = frames(3, 2);
        let a = reproduce_frame(&p, &cfg(), &f[0], &f[1], &f[2]).unwrap();
        assert_eq!(a.shape(), &[1, 16, 16]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, reproduce_frame(&p, &cfg(), &f[0], &f[1], &f[2]).unwrap());
        let (c, s) = content_encode(&p, &cfg(), &f[0], &f[1]).unwrap();
        let m = motion_encode(&p, &cfg(), &f[1], &f[2]).unwrap();
        let b = generate(&p, &cfg(), &c, &s, &m).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
        let wrong = Tensor::zeros(&[1, 8, 8]);
        assert!(reproduce_frame(&p, &cfg(), &f[0], &f[1], &wrong).is_err());
    }

    /// Re-derives the rollout from the single-sample network functions.
    fn reference(p: &ModelParams, given: &[Frame], horizon: usize) -> Vec<Frame> {
        let k = given.len();
        let (content, skips) = content_encode(p, &cfg(), &given[k - 2], &given[k - 1]).unwrap();
        let mut state = PredictorState::zeros(&cfg());
        let mut out = None;
        for x in given {
            let m = motion_encode(p, &cfg(), &given[k - 1], x).unwrap();
            let (s, o) = clstm_step(p, &cfg(), &state, &m).unwrap();
            state = s;
            out = Some(o);
        }
        let mut preds = vec![out.unwrap()];
        for _ in 1..horizon {
            let (s, o) = clstm_step(p, &cfg(), &state, preds.last().unwrap()).unwrap();
            state = s;
            preds.push(o);
        }
        preds
            .iter()
            .map(|m| generate(p, &cfg(), &content, &skips, m).unwrap())
            .collect()
    }

    #[test]
    fn rollout_matches_step_by_step_reference() {
        let p = init_params(&cfg(), 3).unwrap();
        for (k, horizon) in [(2, 1), (3, 4), (5, 2)] {
            let given = frames(k, k as u64);
            let req = PredictionRequest {
                given: given.clone(),
                horizon,
            };
            let got = predict_sequence(&p, &cfg(), &req).unwrap();
            let want = reference(&p, &given, horizon);
            assert_eq!(got.len(), horizon);
            for (a, b) in got.iter().zip(&want) {
                assert!(a.max_abs_diff(b) < 1e-5);
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn batched_requests_are_independent() {
        let p = init_params(&cfg(), 4).unwrap();
        let reqs: Vec<_> = (0..3)
            .map(|i| PredictionRequest {
                given: frames(3, 10 + i),
                horizon: 3,
            })
            .collect();
        let batch = predict_batch(&p, &cfg(), &reqs).unwrap();
        for (r, b) in reqs.iter().zip(&batch) {
            let single = predict_sequence(&p, &cfg(), r).unwrap();
            for (x, y) in single.iter().zip(b) {
                assert!(x.max_abs_diff(y) < 1e-5);
            }
        }
    }

    #[test]
    fn invalid_requests() {
        let p = init_params(&cfg(), 5).unwrap();
        let bad = |given, horizon| PredictionRequest { given, horizon };
        assert!(predict_sequence(&p, &cfg(), &bad(frames(1, 0), 3)).is_err());
        assert!(predict_sequence(&p, &cfg(), &bad(frames(3, 0), 0)).is_err());
        let reqs = [bad(frames(3, 0), 2), bad(frames(4, 0), 2)];
        assert!(predict_batch(&p, &cfg(), &reqs).is_err());
        let empty = ModelParams::new();
        let mut q = ModelParams::new();
        for (k, v) in p.iter() {
            if Net::of_param(k) != Some(Net::Predictor) {
                q.insert(k.clone(), v.clone());
            }
        }
        assert!(matches!(
            predict_sequence(&q, &cfg(), &bad(frames(3, 0), 2)),
            Err(MsnetError::MissingParam(_))
        ));
        assert!(predict_sequence(&empty, &cfg(), &bad(frames(3, 0), 2)).is_err());
    }

    #[test]
    fn writes_frames_gif_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let f = frames(3, 9);
        let side = PredictionSidecar {
            checkpoint: "model.ckpt".into(),
            given_frames: 4,
            horizon: 3,
            image_shape: [1, 16, 16],
            frames: vec![],
            gif: None,
            source: None,
        };
        let out = write_prediction(dir.path(), &f, side, true).unwrap();
        assert_eq!(
            out.frames,
            ["pred_0005.png", "pred_0006.png", "pred_0007.png"]
        );
        for name in &out.frames {
            assert!(dir.path().join(name).is_file());
        }
        assert!(dir.path().join("prediction.gif").is_file());
        let back: PredictionSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(SIDECAR_FILE)).unwrap())
                .unwrap();
        assert_eq!(back, out);
    }
}
