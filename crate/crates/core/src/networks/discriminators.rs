//! Frame, content and motion discriminators. Each returns probabilities of shape `[n]`.

use super::encoders::conv;
use super::{NetworkConfig, LEAK};
use crate::autograd::{Graph, Var};
use crate::error::{MsnetError, Result};
use crate::tensor::Real;

fn head<F: Real>(g: &mut Graph<F>, net: &str, h: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(h)?;
    let w = g.param(&format!("{net}/fc.w"))?;
    let b = g.param(&format!("{net}/fc.b"))?;
    let logit = g.linear(pooled, w, b)?;
    let p = g.sigmoid(logit);
    let n = g.shape(p)[0];
    g.reshape(p, &[n])
}

/// `D_f` on the channel-concatenated (conditioning, target) pair.
pub fn frame_disc<F: Real>(g: &mut Graph<F>, cfg: &NetworkConfig, a: Var, b: Var) -> Result<Var> {
    cfg.check_frames(g, a)?;
    cfg.check_frames(g, b)?;
    let mut h = g.concat(&[a, b], 1)?;
    for i in 0..4 {
        h = conv(g, &format!("D_f/block{i}"), h, 2, 1, true)?;
        h = g.leaky_relu(h, LEAK);
    }
    head(g, "D_f", h)
}

fn feature_head<F: Real>(g: &mut Graph<F>, net: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..2 {
        h = conv(g, &format!("{net}/conv{i}"), h, 1, 1, true)?;
        h = g.leaky_relu(h, LEAK);
    }
    head(g, net, h)
}

fn check_feature<F: Real>(g: &Graph<F>, x: Var, shape: [usize; 3], what: &str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 4 || s[1..] != shape {
        return Err(MsnetError::Shape(format!(
            "{what} feature batch {s:?}, expected [n, {}, {}, {}]",
            shape[0], shape[1], shape[2]
        )));
    }
    Ok(())
}

/// `D_c(m1, m2)`: do two motion features come from the same video?
pub fn content_disc<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    m1: Var,
    m2: Var,
) -> Result<Var> {
    check_feature(g, m1, cfg.motion_shape(), "motion")?;
    check_feature(g, m2, cfg.motion_shape(), "motion")?;
    let x = g.concat(&[m1, m2], 1)?;
    feature_head(g, "D_c", x)
}

/// `D_m(c)`: was a content feature computed from sequential frames?
pub fn motion_disc<F: Real>(g: &mut Graph<F>, cfg: &NetworkConfig, c: Var) -> Result<Var> {
    check_feature(g, c, cfg.content_shape(), "content")?;
    feature_head(g, "D_m", c)
}
