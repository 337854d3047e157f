//! Adaptive moment estimation over a subset of named parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MsnetError, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MsnetError::InvalidConfig(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: ModelParams::new(),
            v: ModelParams::new(),
        }
    }

    /// Applies one update to every parameter present in `grads`.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor<f32>>,
    ) -> Result<()> {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        let step = (c.lr / bc1) as f32;
        let sqrt_bc2 = bc2.sqrt() as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(MsnetError::Shape(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Tensor::zeros(g.shape()));
                self.v.insert(name.clone(), Tensor::zeros(g.shape()));
            }
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() / sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::new();
        p.insert("G/a.w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert(
            "G/a.w".to_string(),
            Tensor::new(vec![3], vec![0.3, -4.0, 1e-3]).unwrap(),
        );
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads).unwrap();
        let got = p.get("G/a.w").unwrap().data();
        for (g, want) in got.iter().zip([1.0 - 2e-4, -2.0 + 2e-4, 0.5 - 2e-4]) {
            assert!((g - want).abs() < 1e-6, "{g} vs {want}");
        }
    }

    #[test]
    fn matches_reference_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        };
        let mut p = ModelParams::new();
        p.insert("D_f/x.w", Tensor::scalar(2.0));
        let mut opt = Adam::new(cfg);
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.99f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            let cur = p.get("D_f/x.w").unwrap().item() as f64;
            let mut grads = BTreeMap::new();
            grads.insert("D_f/x.w".to_string(), Tensor::scalar((2.0 * cur) as f32));
            opt.step(&mut p, &grads).unwrap();
        }
        assert!((p.get("D_f/x.w").unwrap().item() as f64 - x).abs() < 1e-4);
        assert_eq!(opt.t, 20);
    }

    #[test]
    fn untouched_params_stay_fixed() {
        let mut p = ModelParams::new();
        p.insert("G/a.w", Tensor::scalar(1.0));
        p.insert("D_f/a.w", Tensor::scalar(1.0));
        let mut grads = BTreeMap::new();
        grads.insert("G/a.w".to_string(), Tensor::scalar(1.0));
        Adam::new(AdamConfig::default())
            .step(&mut p, &grads)
            .unwrap();
        assert_eq!(p.get("D_f/a.w").unwrap().item(), 1.0);
        assert!(p.get("G/a.w").unwrap().item() < 1.0);
    }
}
