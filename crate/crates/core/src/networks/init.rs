use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkConfig;
use crate::error::Result;
use crate::params::ModelParams;
use crate::tensor::Tensor;

/// Every parameter as `(name, shape)`, in a fixed order.
pub fn param_shapes(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut conv = |name: String, co: usize, ci: usize, k: usize, bias: bool| {
        out.push((format!("{name}.w"), vec![co, ci, k, k]));
        if bias {
            out.push((format!("{name}.b"), vec![co]));
        }
    };
    let c = cfg.image_shape[0];
    let n = cfg.num_blocks;
    let (cm, cc) = (cfg.motion_channels, cfg.content_channels);
    for (net, c_out) in [("E_c", cc), ("E_m", cm)] {
        let mut ci = 2 * c;
        for i in 0..n {
            // Instance norm follows, so the bias would be cancelled.
            conv(
                format!("{net}/block{i}"),
                cfg.block_channels(i),
                ci,
                3,
                false,
            );
            ci = cfg.block_channels(i);
        }
        conv(format!("{net}/out"), c_out, ci, 1, true);
    }

    conv("G/in".into(), cfg.block_channels(n - 1), cc + cm, 1, true);
    for i in (0..n).rev() {
        let ch = cfg.block_channels(i);
        conv(format!("G/mgc{i}"), ch, ch + cm, 1, true);
        let up_out = if i == 0 {
            cfg.base_channels
        } else {
            cfg.block_channels(i - 1)
        };
        conv(format!("G/up{i}"), up_out, 2 * ch, 3, false);
    }
    conv("G/out".into(), c, cfg.base_channels, 1, true);

    let mut ci = 2 * c;
    for i in 0..4 {
        conv(format!("D_f/block{i}"), cfg.block_channels(i), ci, 3, true);
        ci = cfg.block_channels(i);
    }
    let d_f_fc = ci;
    let hidden = 2 * cfg.base_channels;
    conv("D_c/conv0".into(), hidden, 2 * cm, 3, true);
    conv("D_c/conv1".into(), hidden, hidden, 3, true);
    conv("D_m/conv0".into(), hidden, cc, 3, true);
    conv("D_m/conv1".into(), hidden, hidden, 3, true);

    let hc = cfg.clstm_hidden_channels;
    for l in 0..cfg.clstm_layers {
        let ci = if l == 0 { cm } else { hc };
        conv(format!("cLSTM/layer{l}"), 4 * hc, ci + hc, 3, true);
    }
    conv("cLSTM/out".into(), cm, hc, 1, true);

    out.push(("D_f/fc.w".into(), vec![1, d_f_fc]));
    out.push(("D_f/fc.b".into(), vec![1]));
    for net in ["D_c", "D_m"] {
        out.push((format!("{net}/fc.w"), vec![1, hidden]));
        out.push((format!("{net}/fc.b"), vec![1]));
    }
    out
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero. Deterministic given `seed`.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, shape) in param_shapes(cfg) {
        let numel: usize = shape.iter().product();
        let t = if name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f32).sqrt();
            let data = (0..numel)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, t);
    }
    Ok(params)
}
