//! Content/motion encoders and the generator with motion-guided connections.

use super::{NetworkConfig, LEAK};
use crate::autograd::{Graph, Var};
use crate::error::{MsnetError, Result};
use crate::tensor::Real;

pub(crate) fn conv<F: Real>(
    g: &mut Graph<F>,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
    bias: bool,
) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let b = if bias {
        Some(g.param(&format!("{name}.b"))?)
    } else {
        None
    };
    g.conv2d(x, w, b, stride, pad)
}

/// Shared trunk: `num_blocks` x [3x3 stride-2 conv, instance norm, leaky ReLU], then a
/// 1x1 projection. Returns the projection and every block output.
fn encode<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    net: &str,
    a: Var,
    b: Var,
) -> Result<(Var, Vec<Var>)> {
    cfg.check_frames(g, a)?;
    cfg.check_frames(g, b)?;
    let mut h = g.concat(&[a, b], 1)?;
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for i in 0..cfg.num_blocks {
        h = conv(g, &format!("{net}/block{i}"), h, 2, 1, false)?;
        h = g.instance_norm(h)?;
        h = g.leaky_relu(h, LEAK);
        blocks.push(h);
    }
    let out = conv(g, &format!("{net}/out"), h, 1, 0, true)?;
    Ok((out, blocks))
}

/// `E_c(a, b)` over batched frames. The order of `a` and `b` matters.
pub fn content_encoder<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    a: Var,
    b: Var,
) -> Result<(Var, Vec<Var>)> {
    encode(g, cfg, "E_c", a, b)
}

/// `E_m(a, b)` over batched frames.
pub fn motion_encoder<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    a: Var,
    b: Var,
) -> Result<Var> {
    Ok(encode(g, cfg, "E_m", a, b)?.0)
}

/// `block + conv1x1(concat(block, bilinear_up(motion)))`.
pub fn motion_guided_connect<F: Real>(
    g: &mut Graph<F>,
    block: usize,
    feature: Var,
    motion: Var,
) -> Result<Var> {
    let fs = g.shape(feature).to_vec();
    let ms = g.shape(motion).to_vec();
    if fs.len() != 4 || ms.len() != 4 || fs[0] != ms[0] || ms[2] > fs[2] || ms[3] > fs[3] {
        return Err(MsnetError::Shape(format!(
            "motion-guided connection of {fs:?} with motion {ms:?}"
        )));
    }
    let up = g.resize_bilinear(motion, fs[2], fs[3])?;
    let cat = g.concat(&[feature, up], 1)?;
    let delta = conv(g, &format!("G/mgc{block}"), cat, 1, 0, true)?;
    g.add(feature, delta)
}

/// `G(content, skips, motion)` over a batch; output in `[0, 1]`.
pub fn generator<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    content: Var,
    skips: &[Var],
    motion: Var,
) -> Result<Var> {
    if skips.len() != cfg.num_blocks {
        return Err(MsnetError::Shape(format!(
            "generator needs {} skips, got {}",
            cfg.num_blocks,
            skips.len()
        )));
    }
    let h = g.concat(&[content, motion], 1)?;
    let h = conv(g, "G/in", h, 1, 0, true)?;
    let mut h = g.leaky_relu(h, LEAK);
    for i in (0..cfg.num_blocks).rev() {
        let guided = motion_guided_connect(g, i, skips[i], motion)?;
        h = g.concat(&[h, guided], 1)?;
        h = g.upsample_nearest2(h)?;
        h = conv(g, &format!("G/up{i}"), h, 1, 1, false)?;
        h = g.instance_norm(h)?;
        h = g.leaky_relu(h, LEAK);
    }
    let out = conv(g, "G/out", h, 1, 0, true)?;
    Ok(g.sigmoid(out))
}
