//! Video clips, synthetic bouncing sprites, on-disk datasets and training samplers.

mod io;
mod sampling;
mod sprites;

pub(crate) use io::to_byte;
pub use io::{
    load_dataset, read_frame, write_dataset, write_frame, Dataset, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use sampling::{
    sample_discriminator_batches, sample_reproduction_triple, DiscriminatorBatch, PairRef,
    TripleSample,
};
pub use sprites::{generate_bouncing_sprites, reflect_step, simulate_positions, Glyph, SpriteSpec};

use serde::{Deserialize, Serialize};

use crate::error::{MsnetError, Result};
use crate::tensor::Tensor;

/// A single `C x H x W` frame with intensities in `[0, 1]`.
pub type Frame = Tensor<f32>;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
    pub motion_label: Option<String>,
    pub content_label: Option<String>,
}

impl VideoClip {
    /// Builds a clip, checking equal frame shapes, the `[0, 1]` range and `T >= 3`.
    pub fn new(
        clip_id: impl Into<String>,
        frames: Vec<Frame>,
        motion_label: Option<String>,
        content_label: Option<String>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if frames.len() < 3 {
            return Err(MsnetError::ClipTooShort {
                clip_id,
                len: frames.len(),
                needed: 3,
            });
        }
        let shape = frame_shape(&frames[0])?;
        for f in &frames {
            let s = frame_shape(f)?;
            if s != shape {
                return Err(MsnetError::HeterogeneousShapes {
                    clip_id,
                    expected: shape,
                    got: s,
                });
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(MsnetError::InvalidDataset(format!(
                    "clip {clip_id}: intensity outside [0, 1]"
                )));
            }
        }
        Ok(VideoClip {
            clip_id,
            frames,
            motion_label,
            content_label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.frames[0].shape();
        [s[0], s[1], s[2]]
    }
}

fn frame_shape(f: &Frame) -> Result<[usize; 3]> {
    match f.shape() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(MsnetError::Shape(format!(
            "frame must be C x H x W, got {s:?}"
        ))),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Deterministic assignment: the last `round(n * test_fraction)` clips are test clips.
    pub fn assign(n: usize, test_fraction: f64) -> Vec<Split> {
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(n);
        (0..n)
            .map(|i| {
                if i >= n - n_test {
                    Split::Test
                } else {
                    Split::Train
                }
            })
            .collect()
    }
}

impl std::str::FromStr for Split {
    type Err = MsnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(MsnetError::InvalidConfig(format!(
                "split must be train or test, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub path: String,
    pub num_frames: usize,
    #[serde(default)]
    pub motion_label: Option<String>,
    #[serde(default)]
    pub content_label: Option<String>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub version: u32,
    pub image_shape: [usize; 3],
    #[serde(default)]
    pub seed: Option<u64>,
    pub clips: Vec<ClipEntry>,
}

impl ClipManifest {
    /// `(train, test)` clip counts.
    pub fn split_sizes(&self) -> (usize, usize) {
        let train = self
            .clips
            .iter()
            .filter(|c| c.split == Split::Train)
            .count();
        (train, self.clips.len() - train)
    }
}
