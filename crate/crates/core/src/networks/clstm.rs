//! Convolutional LSTM over motion features.

use super::encoders::conv;
use super::NetworkConfig;
use crate::autograd::{Graph, Var};
use crate::error::{MsnetError, Result};
use crate::tensor::{Real, Tensor};

/// Zero `(hidden, cell)` state for a batch of `n`.
pub fn zero_state<F: Real>(g: &mut Graph<F>, cfg: &NetworkConfig, n: usize) -> Vec<(Var, Var)> {
    let (h, w) = cfg.bottleneck();
    let shape = [n, cfg.clstm_hidden_channels, h, w];
    (0..cfg.clstm_layers)
        .map(|_| {
            (
                g.constant(Tensor::zeros(&shape)),
                g.constant(Tensor::zeros(&shape)),
            )
        })
        .collect()
}

/// One step: per layer, 3x3 convolutional gates `(i, f, g, o)` over
/// `concat(input, hidden)`, then a 1x1 projection of the top hidden map to motion
/// channels.
pub fn step<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    state: &[(Var, Var)],
    input: Var,
) -> Result<(Vec<(Var, Var)>, Var)> {
    let ms = cfg.motion_shape();
    let s = g.shape(input).to_vec();
    if s.len() != 4 || s[1..] != ms {
        return Err(MsnetError::Shape(format!(
            "cLSTM input {s:?}, expected [n, {}, {}, {}]",
            ms[0], ms[1], ms[2]
        )));
    }
    if state.len() != cfg.clstm_layers {
        return Err(MsnetError::Shape(format!(
            "cLSTM state has {} layers, config {}",
            state.len(),
            cfg.clstm_layers
        )));
    }
    let hc = cfg.clstm_hidden_channels;
    let mut x = input;
    let mut next = Vec::with_capacity(state.len());
    for (l, (h, c)) in state.iter().enumerate() {
        if g.shape(*h)[1..] != [hc, ms[1], ms[2]] || g.shape(*h)[0] != s[0] {
            return Err(MsnetError::Shape(format!(
                "cLSTM layer {l} state {:?}",
                g.shape(*h)
            )));
        }
        let cat = g.concat(&[x, *h], 1)?;
        let gates = conv(g, &format!("cLSTM/layer{l}"), cat, 1, 1, true)?;
        let i = g.narrow(gates, 1, 0, hc)?;
        let f = g.narrow(gates, 1, hc, hc)?;
        let gg = g.narrow(gates, 1, 2 * hc, hc)?;
        let o = g.narrow(gates, 1, 3 * hc, hc)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let gg = g.tanh(gg);
        let o = g.sigmoid(o);
        let keep = g.mul(f, *c)?;
        let write = g.mul(i, gg)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        next.push((h_next, c_next));
        x = h_next;
    }
    let out = conv(g, "cLSTM/out", x, 1, 0, true)?;
    Ok((next, out))
}
