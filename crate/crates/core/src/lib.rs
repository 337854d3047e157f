//! Mutually-suppressed motion/content disentangling of video and motion-guided frame
//! prediction with a convolutional LSTM.
//!
//! Stage one trains content and motion encoders, a generator and three discriminators
//! on frame reproduction. Stage two freezes them and trains a convolutional LSTM to
//! extrapolate motion features, which the generator decodes into future frames.

pub mod autograd;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod params;
pub mod prediction;
pub mod tensor;
pub mod training;

pub use config::{parse_config, Preset, RunConfig};
pub use dataset::{Frame, VideoClip};
pub use error::{MsnetError, Result};
pub use losses::{Ablation, LossReport, LossWeights};
pub use networks::{FeatureKind, FeatureMap, NetworkConfig};
pub use params::ModelParams;
pub use tensor::Tensor;
pub use training::{Checkpoint, TrainConfig};
