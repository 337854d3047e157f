//! Shared fixtures for integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msnet::autograd::{Graph, Var};
use msnet::dataset::VideoClip;
use msnet::networks::init_params;
use msnet::params::{Net, ParamStore};
use msnet::training::{
    motion_targets, predictor_loss, sample_predictor_batch, stage_one_terms, PredictorBatch,
    StepBatch,
};
use msnet::{Ablation, NetworkConfig, Tensor};

/// 8x8 frames, `base_channels = 4`.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        image_shape: [1, 8, 8],
        num_blocks: 2,
        base_channels: 4,
        motion_channels: 2,
        content_channels: 3,
        clstm_layers: 1,
        clstm_hidden_channels: 3,
    }
}

/// Clips of uniform noise in `[0.05, 0.95]`.
pub fn noise_clips(cfg: &NetworkConfig, clips: usize, frames: usize, seed: u64) -> Vec<VideoClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = cfg.image_shape;
    (0..clips)
        .map(|i| {
            let fs = (0..frames)
                .map(|_| {
                    let d = (0..c * h * w)
                        .map(|_| rng.random_range(0.05..0.95))
                        .collect();
                    Tensor::new(vec![c, h, w], d).unwrap()
                })
                .collect();
            VideoClip::new(format!("noise_{i}"), fs, None, None).unwrap()
        })
        .collect()
}

pub const TERMS: [&str; 9] = [
    "L_rec", "L_rev", "L_advF", "L_advC", "L_advM", "L_DF", "L_DC", "L_DM", "L_lstm",
];

/// Analytic versus central-difference gradients of `term` with respect to sampled
/// entries of every parameter of every network.
pub struct GradReport {
    pub term: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Networks with at least one non-negligible gradient entry.
    pub groups: Vec<Net>,
}

pub struct GradFixture {
    pub cfg: NetworkConfig,
    pub params: ParamStore<f64>,
    batch: StepBatch<f64>,
    /// Frozen motion targets, as in predictor training.
    lstm_targets: Vec<Tensor<f64>>,
    pub k: usize,
}

impl GradFixture {
    pub fn new(seed: u64) -> Self {
        let cfg = tiny_network();
        let clips = noise_clips(&cfg, 3, 8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = StepBatch::sample(&clips, 2, 3, &mut rng)
            .unwrap()
            .cast::<f64>();
        let refs: Vec<_> = clips.iter().collect();
        let pb = sample_predictor_batch(&refs, 2, 5, &mut rng).unwrap();
        let mut params = init_params(&cfg, seed).unwrap().cast::<f64>();
        // Nonzero biases so their gradients are exercised away from the origin.
        for (name, t) in params.iter_mut() {
            if name.ends_with(".b") {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let pb = PredictorBatch {
            frames: pb.frames.iter().map(|f| f.cast()).collect(),
        };
        let k = 2;
        let lstm_targets = motion_targets(&params, &cfg, &pb, k).unwrap();
        GradFixture {
            cfg,
            params,
            batch,
            lstm_targets,
            k,
        }
    }

    fn build(&self, g: &mut Graph<f64>, term: &str) -> Var {
        if term == "L_lstm" {
            let vars: Vec<Var> = self
                .lstm_targets
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            return predictor_loss(g, &self.cfg, &vars, self.k).unwrap();
        }
        let t = stage_one_terms(g, &self.cfg, &self.batch, Ablation::default()).unwrap();
        match term {
            "L_rec" => t.rec,
            "L_rev" => t.rev,
            "L_advF" => t.adv_f,
            "L_DF" => t.d_f,
            "L_advC" => t.adv_c.unwrap(),
            "L_DC" => t.d_c.unwrap(),
            "L_advM" => t.adv_m.unwrap(),
            "L_DM" => t.d_m.unwrap(),
            _ => panic!("unknown term {term}"),
        }
    }

    pub fn loss(&self, params: &ParamStore<f64>, term: &str) -> f64 {
        let mut g = Graph::with_params(params, &[]);
        let v = self.build(&mut g, term);
        g.scalar(v)
    }

    /// Checks `per_tensor` entries of every parameter tensor.
    pub fn check(&self, term: &'static str, per_tensor: usize, step: f64) -> GradReport {
        let mut g = Graph::with_params(&self.params, &Net::ALL);
        let v = self.build(&mut g, term);
        let grads = g.backward(v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut max_rel_err: f64 = 0.0;
        let mut checked = 0;
        let mut groups = Vec::new();
        let names: Vec<String> = self.params.names().cloned().collect();
        for name in names {
            let numel = self.params.get(&name).unwrap().numel();
            let analytic = grads.param(&name).cloned();
            let mut idx = vec![0, numel / 2, numel - 1];
            while idx.len() < per_tensor {
                idx.push(rng.random_range(0..numel));
            }
            idx.truncate(per_tensor.max(1));
            idx.dedup();
            for i in idx {
                let a = analytic.as_ref().map_or(0.0, |t| t.data()[i]);
                let mut p = self.params.clone();
                p.get_mut(&name).unwrap().data_mut()[i] += step;
                let up = self.loss(&p, term);
                p.get_mut(&name).unwrap().data_mut()[i] -= 2.0 * step;
                let down = self.loss(&p, term);
                let n = (up - down) / (2.0 * step);
                let scale = a.abs().max(n.abs());
                let err = if scale < 1e-8 {
                    0.0
                } else {
                    (a - n).abs() / scale
                };
                max_rel_err = max_rel_err.max(err);
                checked += 1;
                if scale >= 1e-8 {
                    let net = Net::of_param(&name).unwrap();
                    if !groups.contains(&net) {
                        groups.push(net);
                    }
                }
            }
        }
        GradReport {
            term,
            max_rel_err,
            checked,
            groups,
        }
    }
}

/// Networks each term depends on, in `Net::ALL` order.
pub fn expected_groups(term: &str) -> Vec<Net> {
    use Net::*;
    match term {
        "L_rec" => vec![ContentEncoder, MotionEncoder, Generator],
        "L_rev" => vec![ContentEncoder],
        "L_advF" | "L_DF" => vec![ContentEncoder, MotionEncoder, Generator, FrameDisc],
        "L_advC" | "L_DC" => vec![MotionEncoder, ContentDisc],
        "L_advM" | "L_DM" => vec![ContentEncoder, MotionDisc],
        "L_lstm" => vec![Predictor],
        _ => vec![],
    }
}
