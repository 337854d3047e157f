//! Named parameter collections for the seven networks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MsnetError, Result};
use crate::tensor::{Real, Tensor};

/// The parameterized networks of the model.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Net {
    #[serde(rename = "E_c")]
    ContentEncoder,
    #[serde(rename = "E_m")]
    MotionEncoder,
    #[serde(rename = "G")]
    Generator,
    #[serde(rename = "D_f")]
    FrameDisc,
    #[serde(rename = "D_c")]
    ContentDisc,
    #[serde(rename = "D_m")]
    MotionDisc,
    #[serde(rename = "cLSTM")]
    Predictor,
}

impl Net {
    pub const ALL: [Net; 7] = [
        Net::ContentEncoder,
        Net::MotionEncoder,
        Net::Generator,
        Net::FrameDisc,
        Net::ContentDisc,
        Net::MotionDisc,
        Net::Predictor,
    ];

    /// Encoders and generator: the networks minimizing the encoder objective.
    pub const GENERATIVE: [Net; 3] = [Net::ContentEncoder, Net::MotionEncoder, Net::Generator];
    pub const DISCRIMINATORS: [Net; 3] = [Net::FrameDisc, Net::ContentDisc, Net::MotionDisc];

    pub fn key(self) -> &'static str {
        match self {
            Net::ContentEncoder => "E_c",
            Net::MotionEncoder => "E_m",
            Net::Generator => "G",
            Net::FrameDisc => "D_f",
            Net::ContentDisc => "D_c",
            Net::MotionDisc => "D_m",
            Net::Predictor => "cLSTM",
        }
    }

    pub fn from_key(key: &str) -> Option<Net> {
        Net::ALL.into_iter().find(|n| n.key() == key)
    }

    /// Network owning a parameter, from its `<net>/...` name.
    pub fn of_param(name: &str) -> Option<Net> {
        Net::from_key(name.split('/').next()?)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Parameters keyed by `<net>/<layer>.<w|b>`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

/// Model parameters as trained and checkpointed.
pub type ModelParams = ParamStore<f32>;

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| MsnetError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| MsnetError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Parameters belonging to one network.
    pub fn network(&self, net: Net) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors
            .iter()
            .filter(move |(k, _)| Net::of_param(k) == Some(net))
    }

    pub fn has_network(&self, net: Net) -> bool {
        self.network(net).next().is_some()
    }

    /// Copies every tensor of `net` from `other`, replacing what is here.
    pub fn take_network(&mut self, other: &ParamStore<F>, net: Net) {
        self.tensors.retain(|k, _| Net::of_param(k) != Some(net));
        for (k, v) in other.network(net) {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Bit-level equality of the tensors of one network.
    pub fn network_eq(&self, other: &ParamStore<F>, net: Net) -> bool {
        let a: Vec<_> = self.network(net).collect();
        let b: Vec<_> = other.network(net).collect();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((ka, ta), (kb, tb))| {
                ka == kb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
