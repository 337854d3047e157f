//! Run configuration: presets, JSON files and command-line overrides.
//!
//! Resolution order is preset defaults, then the file, then overrides. The merged
//! document is decoded strictly, so unknown keys and type mismatches are rejected
//! with the offending key path.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::{Glyph, SpriteSpec};
use crate::error::{MsnetError, Result};
use crate::losses::{Ablation, LossWeights};
use crate::networks::NetworkConfig;
use crate::optim::AdamConfig;
use crate::training::TrainConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mnist64,
    Kth128,
    Desk,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Mnist64, Preset::Kth128, Preset::Desk];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mnist64 => "mnist64",
            Preset::Kth128 => "kth128",
            Preset::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = MsnetError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                MsnetError::InvalidConfig(format!(
                    "unknown preset {s:?}; expected mnist64, kth128 or desk"
                ))
            })
    }
}

/// Synthetic bouncing-sprite data settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub sprites_per_clip: usize,
    /// Integer upscaling of the built-in 3x5 digit glyphs.
    pub glyph_scale: usize,
    pub speed_set: Vec<u32>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl DataConfig {
    pub fn sprite_spec(&self, image_shape: [usize; 3]) -> SpriteSpec {
        SpriteSpec {
            canvas: (image_shape[1], image_shape[2]),
            glyphs: Glyph::digits(self.glyph_scale),
            sprites_per_clip: self.sprites_per_clip,
            speed_set: self.speed_set.clone(),
            frames_per_clip: self.frames_per_clip,
        }
    }

    pub fn validate(&self, image_shape: [usize; 3]) -> Result<()> {
        if self.num_clips == 0 {
            return Err(MsnetError::InvalidConfig(
                "data.num_clips must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(MsnetError::InvalidConfig(
                "data.test_fraction must be in [0, 1)".into(),
            ));
        }
        if self.glyph_scale == 0 {
            return Err(MsnetError::InvalidConfig(
                "data.glyph_scale must be >= 1".into(),
            ));
        }
        self.sprite_spec(image_shape).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Frames predicted per test clip.
    pub horizon: usize,
    /// Evaluate at most this many test clips.
    pub max_clips: Option<usize>,
    /// Also write an animated GIF for `predict`.
    pub gif: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Command-line overrides applied on top of preset and file, by key path.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let opt = AdamConfig::default();
        let train = |weights, k_max, given_frames, horizon| TrainConfig {
            weights,
            k_max,
            batch_size: 16,
            steps: 50_000,
            generative_optim: opt,
            discriminative_optim: opt,
            predictor_optim: opt,
            seed: 0,
            log_every: 100,
            checkpoint_every: 5_000,
            given_frames,
            horizon,
            predictor_steps: 50_000,
            predictor_batch_size: 16,
            ablation: Ablation::default(),
        };
        match preset {
            Preset::Mnist64 => RunConfig {
                preset,
                data: DataConfig {
                    num_clips: 10_000,
                    frames_per_clip: 20,
                    sprites_per_clip: 2,
                    glyph_scale: 4,
                    speed_set: vec![1, 2, 3],
                    test_fraction: 0.2,
                    seed: 0,
                },
                network: NetworkConfig {
                    image_shape: [1, 64, 64],
                    num_blocks: 4,
                    base_channels: 32,
                    motion_channels: 4,
                    content_channels: 8,
                    clstm_layers: 2,
                    clstm_hidden_channels: 32,
                },
                train: train(
                    LossWeights {
                        alpha: 1.0,
                        beta: 3.3e-5,
                    },
                    5,
                    10,
                    20,
                ),
                eval: EvalConfig {
                    horizon: 10,
                    max_clips: None,
                    gif: false,
                },
                overrides: BTreeMap::new(),
            },
            Preset::Kth128 => RunConfig {
                preset,
                data: DataConfig {
                    num_clips: 2_000,
                    frames_per_clip: 30,
                    sprites_per_clip: 2,
                    glyph_scale: 8,
                    speed_set: vec![1, 2, 4],
                    test_fraction: 0.2,
                    seed: 0,
                },
                network: NetworkConfig {
                    image_shape: [1, 128, 128],
                    num_blocks: 4,
                    base_channels: 32,
                    motion_channels: 8,
                    content_channels: 8,
                    clstm_layers: 2,
                    clstm_hidden_channels: 32,
                },
                train: train(
                    LossWeights {
                        alpha: 1.0,
                        beta: 4e-5,
                    },
                    10,
                    10,
                    20,
                ),
                eval: EvalConfig {
                    horizon: 20,
                    max_clips: None,
                    gif: false,
                },
                overrides: BTreeMap::new(),
            },
            Preset::Desk => {
                let mut t = train(
                    LossWeights {
                        alpha: 1.0,
                        beta: 3.3e-5,
                    },
                    10,
                    5,
                    15,
                );
                t.steps = 2_000;
                t.predictor_steps = 2_000;
                t.checkpoint_every = 0;
                // Sigmoid outputs approach the empty background slowly under a squared
                // error, so the short desk schedule needs a faster generator.
                t.generative_optim.lr = 4e-3;
                t.predictor_optim.lr = 3e-3;
                RunConfig {
                    preset,
                    data: DataConfig {
                        num_clips: 500,
                        frames_per_clip: 20,
                        sprites_per_clip: 2,
                        glyph_scale: 2,
                        speed_set: vec![1, 3],
                        test_fraction: 0.1,
                        seed: 0,
                    },
                    network: NetworkConfig {
                        image_shape: [1, 32, 32],
                        num_blocks: 3,
                        base_channels: 16,
                        motion_channels: 4,
                        content_channels: 8,
                        clstm_layers: 1,
                        clstm_hidden_channels: 16,
                    },
                    train: t,
                    eval: EvalConfig {
                        horizon: 10,
                        max_clips: None,
                        gif: true,
                    },
                    overrides: BTreeMap::new(),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.data.validate(self.network.image_shape)?;
        if self.eval.horizon == 0 {
            return Err(MsnetError::InvalidConfig(
                "eval.horizon must be >= 1".into(),
            ));
        }
        if self.data.frames_per_clip < self.train.k_max.max(2) + 1 {
            return Err(MsnetError::InvalidConfig(format!(
                "data.frames_per_clip {} too short for train.k_max {}",
                self.data.frames_per_clip, self.train.k_max
            )));
        }
        Ok(())
    }
}

/// Recursively merges `patch` into `base`; objects merge key by key, anything else
/// replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `value` at the dotted `path`, creating objects along the way.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(MsnetError::InvalidConfig(format!(
            "bad override key {path:?}"
        )));
    }
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| {
            MsnetError::InvalidConfig(format!("override {path}: {p} is not an object"))
        })?;
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| {
        MsnetError::InvalidConfig(format!("override {path}: parent is not an object"))
    })?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| MsnetError::InvalidConfig(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn decode(doc: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        MsnetError::InvalidConfig(format!("at {path}: {}", e.into_inner()))
    })
}

/// Resolves the effective configuration. The preset is `preset` when given, else the
/// file's `preset` key, else `desk`.
pub fn parse_config(
    preset: Option<Preset>,
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<RunConfig> {
    let file_doc = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| MsnetError::io(p, e))?;
            if text.trim().is_empty() {
                Value::Object(Map::new())
            } else {
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| MsnetError::InvalidConfig(format!("{}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(MsnetError::InvalidConfig(format!(
                        "{}: top level must be an object",
                        p.display()
                    )));
                }
                v
            }
        }
        None => Value::Object(Map::new()),
    };
    let preset = match preset {
        Some(p) => p,
        None => match file_doc.get("preset") {
            Some(Value::String(s)) => s.parse()?,
            Some(_) => {
                return Err(MsnetError::InvalidConfig(
                    "at preset: expected a string".into(),
                ))
            }
            None => Preset::Desk,
        },
    };
    let mut doc = serde_json::to_value(RunConfig::preset(preset))?;
    let mut file_doc = file_doc;
    if let Value::Object(m) = &mut file_doc {
        m.remove("preset");
    }
    merge(&mut doc, file_doc);
    let mut applied = BTreeMap::new();
    for (k, v) in overrides {
        set_path(&mut doc, k, v.clone())?;
        applied.insert(k.clone(), v.clone());
    }
    set_path(&mut doc, "preset", serde_json::to_value(preset)?)?;
    let mut cfg = decode(doc)?;
    cfg.overrides.extend(applied);
    cfg.validate()?;
    Ok(cfg)
}
