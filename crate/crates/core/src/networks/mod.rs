//! The six adversarial networks and the convolutional LSTM.
//!
//! Graph-level functions in the submodules operate on batched `[n, c, h, w]`
//! variables and are what training differentiates through. The functions at this
//! level wrap them for single frames and feature maps.

pub mod clstm;
pub mod discriminators;
pub mod encoders;
mod init;

pub use init::{init_params, param_shapes};

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::dataset::Frame;
use crate::error::{MsnetError, Result};
use crate::params::ModelParams;
use crate::tensor::{Real, Tensor};

pub(crate) const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[C, H, W]` of input frames.
    pub image_shape: [usize; 3],
    /// Downsampling blocks per encoder; the bottleneck is `H / 2^num_blocks`.
    pub num_blocks: usize,
    pub base_channels: usize,
    pub motion_channels: usize,
    pub content_channels: usize,
    pub clstm_layers: usize,
    pub clstm_hidden_channels: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MsnetError::InvalidConfig(m));
        let [c, h, w] = self.image_shape;
        if c != 1 && c != 3 {
            return bad(format!("image channels must be 1 or 3, got {c}"));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be >= 1".into());
        }
        let f = 1usize << self.num_blocks;
        if h % f != 0 || w % f != 0 || h < f || w < f {
            return bad(format!("image {h}x{w} not divisible by 2^num_blocks = {f}"));
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("motion_channels", self.motion_channels),
            ("content_channels", self.content_channels),
            ("clstm_layers", self.clstm_layers),
            ("clstm_hidden_channels", self.clstm_hidden_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    /// Spatial size `(h, w)` of content and motion features.
    pub fn bottleneck(&self) -> (usize, usize) {
        let f = 1 << self.num_blocks;
        (self.image_shape[1] / f, self.image_shape[2] / f)
    }

    pub fn motion_shape(&self) -> [usize; 3] {
        let (h, w) = self.bottleneck();
        [self.motion_channels, h, w]
    }

    pub fn content_shape(&self) -> [usize; 3] {
        let (h, w) = self.bottleneck();
        [self.content_channels, h, w]
    }

    /// Output channels of encoder block `i`.
    pub fn block_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub(crate) fn check_frames<F: Real>(
        &self,
        g: &Graph<F>,
        x: crate::autograd::Var,
    ) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1..] != self.image_shape {
            return Err(MsnetError::Shape(format!(
                "expected [n, {}, {}, {}] frames, got {s:?}",
                self.image_shape[0], self.image_shape[1], self.image_shape[2]
            )));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Content,
    Motion,
    PredictedMotion,
    Skip,
}

impl FeatureKind {
    pub fn is_motion(self) -> bool {
        matches!(self, FeatureKind::Motion | FeatureKind::PredictedMotion)
    }
}

/// A `c x h x w` feature map tagged with its origin.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor<f32>,
    pub kind: FeatureKind,
    /// Number of 2x downsamplings relative to the input frame.
    pub scale: usize,
}

impl FeatureMap {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.values.data().to_vec()
    }

    fn batched(&self) -> Result<Tensor<f32>> {
        Tensor::stack(&[&self.values])
    }
}

fn expect_kind(f: &FeatureMap, ok: bool, expected: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(MsnetError::KindMismatch {
            expected: expected.into(),
            got: format!("{:?}", f.kind).to_lowercase(),
        })
    }
}

fn check_feature(f: &FeatureMap, shape: [usize; 3]) -> Result<()> {
    if f.shape() != shape {
        return Err(MsnetError::Shape(format!(
            "{:?} feature {:?}, expected {shape:?}",
            f.kind,
            f.shape()
        )));
    }
    Ok(())
}

fn unbatch(g: &Graph<f32>, v: crate::autograd::Var, kind: FeatureKind, scale: usize) -> FeatureMap {
    FeatureMap {
        values: g.value(v).index(0),
        kind,
        scale,
    }
}

fn frame_input(g: &mut Graph<f32>, cfg: &NetworkConfig, f: &Frame) -> Result<crate::autograd::Var> {
    let v = g.constant(Tensor::stack(&[f])?);
    cfg.check_frames(g, v)?;
    Ok(v)
}

/// `E_c(a, b)` plus one skip feature per encoder block.
pub fn content_encode(
    params: &ModelParams,
    cfg: &NetworkConfig,
    frame_a: &Frame,
    frame_b: &Frame,
) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    let mut g = Graph::with_params(params, &[]);
    let a = frame_input(&mut g, cfg, frame_a)?;
    let b = frame_input(&mut g, cfg, frame_b)?;
    let (content, skips) = encoders::content_encoder(&mut g, cfg, a, b)?;
    let skips = skips
        .iter()
        .enumerate()
        .map(|(i, s)| unbatch(&g, *s, FeatureKind::Skip, i + 1))
        .collect();
    Ok((
        unbatch(&g, content, FeatureKind::Content, cfg.num_blocks),
        skips,
    ))
}

/// `E_m(a, b)`.
pub fn motion_encode(
    params: &ModelParams,
    cfg: &NetworkConfig,
    frame_a: &Frame,
    frame_b: &Frame,
) -> Result<FeatureMap> {
    let mut g = Graph::with_params(params, &[]);
    let a = frame_input(&mut g, cfg, frame_a)?;
    let b = frame_input(&mut g, cfg, frame_b)?;
    let m = encoders::motion_encoder(&mut g, cfg, a, b)?;
    Ok(unbatch(&g, m, FeatureKind::Motion, cfg.num_blocks))
}

/// Motion-guided connection of generator block `block` applied to one skip feature.
pub fn motion_guided_connect(
    params: &ModelParams,
    cfg: &NetworkConfig,
    block: usize,
    block_feature: &FeatureMap,
    motion: &FeatureMap,
) -> Result<FeatureMap> {
    expect_kind(motion, motion.kind.is_motion(), "motion")?;
    check_feature(motion, cfg.motion_shape())?;
    if motion.scale > block_feature.scale.max(cfg.num_blocks) {
        return Err(MsnetError::Shape("motion coarser than bottleneck".into()));
    }
    let mut g = Graph::with_params(params, &[]);
    let x = g.constant(block_feature.batched()?);
    let m = g.constant(motion.batched()?);
    let y = encoders::motion_guided_connect(&mut g, block, x, m)?;
    Ok(unbatch(&g, y, block_feature.kind, block_feature.scale))
}

/// `G(content, skips, motion)`: a frame with values in `[0, 1]`.
pub fn generate(
    params: &ModelParams,
    cfg: &NetworkConfig,
    content: &FeatureMap,
    skips: &[FeatureMap],
    motion: &FeatureMap,
) -> Result<Frame> {
    expect_kind(content, content.kind == FeatureKind::Content, "content")?;
    expect_kind(motion, motion.kind.is_motion(), "motion")?;
    check_feature(content, cfg.content_shape())?;
    check_feature(motion, cfg.motion_shape())?;
    if skips.len() != cfg.num_blocks {
        return Err(MsnetError::Shape(format!(
            "generator needs {} skips, got {}",
            cfg.num_blocks,
            skips.len()
        )));
    }
    let mut g = Graph::with_params(params, &[]);
    let c = g.constant(content.batched()?);
    let m = g.constant(motion.batched()?);
    let s = skips
        .iter()
        .map(|s| Ok(g.constant(s.batched()?)))
        .collect::<Result<Vec<_>>>()?;
    let out = encoders::generator(&mut g, cfg, c, &s, m)?;
    Ok(g.value(out).index(0))
}

/// `D_f(a, b)`: probability that `(a, b)` is a real (conditioning, target) pair.
pub fn frame_discriminate(
    params: &ModelParams,
    cfg: &NetworkConfig,
    frame_a: &Frame,
    frame_b: &Frame,
) -> Result<f32> {
    let mut g = Graph::with_params(params, &[]);
    let a = frame_input(&mut g, cfg, frame_a)?;
    let b = frame_input(&mut g, cfg, frame_b)?;
    let p = discriminators::frame_disc(&mut g, cfg, a, b)?;
    Ok(g.value(p).data()[0])
}

/// `D_c(m1, m2)`: probability that two motion features come from the same video.
pub fn content_discriminate(
    params: &ModelParams,
    cfg: &NetworkConfig,
    motion_1: &FeatureMap,
    motion_2: &FeatureMap,
) -> Result<f32> {
    for m in [motion_1, motion_2] {
        expect_kind(m, m.kind.is_motion(), "motion")?;
        check_feature(m, cfg.motion_shape())?;
    }
    let mut g = Graph::with_params(params, &[]);
    let a = g.constant(motion_1.batched()?);
    let b = g.constant(motion_2.batched()?);
    let p = discriminators::content_disc(&mut g, cfg, a, b)?;
    Ok(g.value(p).data()[0])
}

/// `D_m(c)`: probability that a content feature came from sequential frames.
pub fn motion_discriminate(
    params: &ModelParams,
    cfg: &NetworkConfig,
    content: &FeatureMap,
) -> Result<f32> {
    expect_kind(content, content.kind == FeatureKind::Content, "content")?;
    check_feature(content, cfg.content_shape())?;
    let mut g = Graph::with_params(params, &[]);
    let c = g.constant(content.batched()?);
    let p = discriminators::motion_disc(&mut g, cfg, c)?;
    Ok(g.value(p).data()[0])
}

/// Per-layer `(hidden, cell)` maps of the convolutional LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    pub layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl PredictorState {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (h, w) = cfg.bottleneck();
        let shape = [cfg.clstm_hidden_channels, h, w];
        PredictorState {
            layers: (0..cfg.clstm_layers)
                .map(|_| (Tensor::zeros(&shape), Tensor::zeros(&shape)))
                .collect(),
        }
    }
}

/// One recurrence of the convolutional LSTM.
pub fn clstm_step(
    params: &ModelParams,
    cfg: &NetworkConfig,
    state: &PredictorState,
    motion_in: &FeatureMap,
) -> Result<(PredictorState, FeatureMap)> {
    expect_kind(motion_in, motion_in.kind.is_motion(), "motion")?;
    check_feature(motion_in, cfg.motion_shape())?;
    let (h, w) = cfg.bottleneck();
    if state.layers.len() != cfg.clstm_layers
        || state
            .layers
            .iter()
            .any(|(a, b)| a.shape() != [cfg.clstm_hidden_channels, h, w] || a.shape() != b.shape())
    {
        return Err(MsnetError::Shape(
            "predictor state does not match config".into(),
        ));
    }
    let mut g = Graph::with_params(params, &[]);
    let x = g.constant(motion_in.batched()?);
    let st = state
        .layers
        .iter()
        .map(|(hh, cc)| {
            Ok((
                g.constant(Tensor::stack(&[hh])?),
                g.constant(Tensor::stack(&[cc])?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (next, out) = clstm::step(&mut g, cfg, &st, x)?;
    let layers = next
        .iter()
        .map(|(hh, cc)| (g.value(*hh).index(0), g.value(*cc).index(0)))
        .collect();
    Ok((
        PredictorState { layers },
        unbatch(&g, out, FeatureKind::PredictedMotion, cfg.num_blocks),
    ))
}

#[cfg(test)]
mod tests;
