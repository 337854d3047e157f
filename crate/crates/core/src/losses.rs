//! Objective terms of both training stages.
//!
//! Every squared-norm term is a mean over elements and over the batch; logs are
//! natural. Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
//! The scalar functions here evaluate single probabilities; [`terms`] builds the
//! same expressions on a graph over batches.

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::dataset::Frame;
use crate::error::{MsnetError, Result};
use crate::networks::{content_encode, NetworkConfig};
use crate::params::ModelParams;

pub const PROB_EPS: f64 = 1e-7;

/// Name recorded in checkpoints for the squared-norm reduction convention.
pub const LOSS_REDUCTION: &str = "mean";

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(MsnetError::InvalidConfig(format!(
                    "{k} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which disentangling discriminators take part.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub content_disc: bool,
    pub motion_disc: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            content_disc: true,
            motion_disc: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_rec", skip_serializing_if = "Option::is_none", default)]
    pub rec: Option<f64>,
    #[serde(rename = "L_rev", skip_serializing_if = "Option::is_none", default)]
    pub rev: Option<f64>,
    #[serde(rename = "L_advF", skip_serializing_if = "Option::is_none", default)]
    pub adv_f: Option<f64>,
    #[serde(rename = "L_advC", skip_serializing_if = "Option::is_none", default)]
    pub adv_c: Option<f64>,
    #[serde(rename = "L_advM", skip_serializing_if = "Option::is_none", default)]
    pub adv_m: Option<f64>,
    #[serde(rename = "L_DF", skip_serializing_if = "Option::is_none", default)]
    pub d_f: Option<f64>,
    #[serde(rename = "L_DC", skip_serializing_if = "Option::is_none", default)]
    pub d_c: Option<f64>,
    #[serde(rename = "L_DM", skip_serializing_if = "Option::is_none", default)]
    pub d_m: Option<f64>,
    #[serde(rename = "L_1", skip_serializing_if = "Option::is_none", default)]
    pub l1: Option<f64>,
    #[serde(rename = "L_2", skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    #[serde(rename = "L_lstm", skip_serializing_if = "Option::is_none", default)]
    pub lstm: Option<f64>,
}

impl LossReport {
    pub fn values(&self) -> impl Iterator<Item = f64> {
        [
            self.rec, self.rev, self.adv_f, self.adv_c, self.adv_m, self.d_f, self.d_c, self.d_m,
            self.l1, self.l2, self.lstm,
        ]
        .into_iter()
        .flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn nlog(p: f64) -> f64 {
    -clamp_prob(p).ln()
}

fn nlog1m(p: f64) -> f64 {
    -(1.0 - clamp_prob(p)).ln()
}

/// `(L_DF, L_advF)` from `D_f` on a real and a reproduced pair.
pub fn frame_gan_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    (nlog(d_real) + nlog1m(d_fake), nlog(d_fake))
}

/// `(L_DC, L_advC)`. The adversarial term scores the same-video output in both
/// logs, so it is minimized when `D_c` is maximally uncertain.
pub fn content_gan_losses(d_same: f64, d_diff: f64) -> (f64, f64) {
    (nlog(d_same) + nlog1m(d_diff), nlog(d_same) + nlog1m(d_same))
}

/// `(L_DM, L_advM)` from `D_m` on sequential and non-sequential content features.
pub fn motion_gan_losses(d_seq: f64, d_nonseq: f64) -> (f64, f64) {
    (nlog(d_seq) + nlog1m(d_nonseq), nlog(d_seq) + nlog1m(d_seq))
}

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MsnetError::Shape(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error between a reproduced and a true frame.
pub fn loss_rec(x_hat: &Frame, x: &Frame) -> Result<f64> {
    check_same(x_hat, x)?;
    let s: f64 = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(s / x.numel() as f64)
}

/// Mean squared difference between `E_c(a, b)` and `E_c(b, a)`.
pub fn loss_rev(
    params: &ModelParams,
    cfg: &NetworkConfig,
    frame_a: &Frame,
    frame_b: &Frame,
) -> Result<f64> {
    check_same(frame_a, frame_b)?;
    let (fwd, _) = content_encode(params, cfg, frame_a, frame_b)?;
    let (bwd, _) = content_encode(params, cfg, frame_b, frame_a)?;
    loss_rec(&fwd.values, &bwd.values)
}

/// `L_1 = L_rec + alpha L_rev + beta (L_advC + L_advM + L_advF)`, over the terms the
/// ablation keeps.
pub fn total_encoder_loss(
    report: &LossReport,
    weights: &LossWeights,
    ablation: Ablation,
) -> Result<f64> {
    let need = |v: Option<f64>, k| v.ok_or(MsnetError::MissingComponent(k));
    let mut adv = need(report.adv_f, "L_advF")?;
    if ablation.content_disc {
        adv += need(report.adv_c, "L_advC")?;
    }
    if ablation.motion_disc {
        adv += need(report.adv_m, "L_advM")?;
    }
    Ok(
        need(report.rec, "L_rec")?
            + weights.alpha * need(report.rev, "L_rev")?
            + weights.beta * adv,
    )
}

/// `L_2 = L_DF + L_DC + L_DM`, over the terms the ablation keeps.
pub fn total_discriminator_loss(report: &LossReport, ablation: Ablation) -> Result<f64> {
    let need = |v: Option<f64>, k| v.ok_or(MsnetError::MissingComponent(k));
    let mut total = need(report.d_f, "L_DF")?;
    if ablation.content_disc {
        total += need(report.d_c, "L_DC")?;
    }
    if ablation.motion_disc {
        total += need(report.d_m, "L_DM")?;
    }
    Ok(total)
}

/// Predictor objective: the teacher-forced step error plus every autoregressive error.
pub fn loss_lstm(teacher_step_error: f64, autoregressive_errors: &[f64]) -> f64 {
    teacher_step_error + autoregressive_errors.iter().sum::<f64>()
}

/// Graph-level versions of the objective terms over `[n]` probability batches.
pub mod terms {
    use super::PROB_EPS;
    use crate::autograd::{Graph, Var};
    use crate::tensor::Real;

    /// `mean(-log p)`.
    pub fn neg_log<F: Real>(g: &mut Graph<F>, p: Var) -> Var {
        let c = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
        let l = g.log(c);
        let m = g.mean_all(l);
        g.scale(m, -1.0)
    }

    /// `mean(-log(1 - p))`.
    pub fn neg_log1m<F: Real>(g: &mut Graph<F>, p: Var) -> Var {
        let c = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
        let q = g.affine(c, -1.0, 1.0);
        let l = g.log(q);
        let m = g.mean_all(l);
        g.scale(m, -1.0)
    }

    /// `mean(-log pos) + mean(-log(1 - neg))`: `L_DF`, `L_DC`, `L_DM`.
    pub fn discriminator<F: Real>(g: &mut Graph<F>, pos: Var, neg: Var) -> Var {
        let a = neg_log(g, pos);
        let b = neg_log1m(g, neg);
        g.add(a, b).expect("scalars")
    }

    /// `mean(-log p) + mean(-log(1 - p))`: `L_advC`, `L_advM`.
    pub fn max_entropy<F: Real>(g: &mut Graph<F>, p: Var) -> Var {
        discriminator(g, p, p)
    }

    /// `L_advF = mean(-log D_f(x_t, x_hat))`.
    pub fn frame_adversarial<F: Real>(g: &mut Graph<F>, d_fake: Var) -> Var {
        neg_log(g, d_fake)
    }

    /// Weighted sum `sum_i w_i * t_i` of scalar terms.
    pub fn weighted_sum<F: Real>(g: &mut Graph<F>, parts: &[(f64, Var)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(w, v) in parts {
            let s = g.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(a) => g.add(a, s).expect("scalars"),
            });
        }
        acc.expect("at least one term")
    }
}

/// Evaluates a graph-level term on single probabilities; used to cross-check the
/// two routes.
pub fn eval_term(
    f: impl Fn(&mut Graph<f64>, &[crate::autograd::Var]) -> crate::autograd::Var,
    probs: &[f64],
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<_> = probs
        .iter()
        .map(|p| g.constant(crate::tensor::Tensor::new(vec![1], vec![*p]).expect("one element")))
        .collect();
    let out = f(&mut g, &vars);
    g.scalar(out)
}
