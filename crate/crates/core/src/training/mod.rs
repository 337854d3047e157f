//! Alternating adversarial training of the reproduction stage, predictor training,
//! checkpoints and metric logs.

mod checkpoint;
mod predictor;
mod reproduction;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use predictor::{
    motion_targets, predictor_loss, sample_predictor_batch, train_predictor, train_predictor_step,
    PredictorBatch,
};
pub use reproduction::{
    fresh_checkpoint, stage_one_terms, train_reproduction, train_reproduction_step, StageOneTerms,
    StepBatch,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MsnetError, Result};
use crate::losses::{Ablation, LossReport, LossWeights};
use crate::optim::AdamConfig;

/// Optimizer groups stored in checkpoints.
pub const GENERATIVE_GROUP: &str = "generative";
pub const DISCRIMINATIVE_GROUP: &str = "discriminative";
pub const PREDICTOR_GROUP: &str = "predictor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Largest reproduction distance `k` drawn for triples.
    pub k_max: usize,
    pub batch_size: usize,
    /// Reproduction-stage steps.
    pub steps: u64,
    pub generative_optim: AdamConfig,
    pub discriminative_optim: AdamConfig,
    pub predictor_optim: AdamConfig,
    pub seed: u64,
    pub log_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Number of given frames `k` for prediction.
    pub given_frames: usize,
    /// Sequence length `T` used by the predictor objective.
    pub horizon: usize,
    pub predictor_steps: u64,
    pub predictor_batch_size: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MsnetError::InvalidConfig(m.into()));
        self.weights.validate()?;
        for o in [
            &self.generative_optim,
            &self.discriminative_optim,
            &self.predictor_optim,
        ] {
            o.validate()?;
        }
        if self.steps == 0 || self.predictor_steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.batch_size == 0 || self.predictor_batch_size == 0 {
            return bad("batch sizes must be >= 1");
        }
        if self.given_frames < 2 {
            return bad("given_frames must be >= 2");
        }
        if self.horizon <= self.given_frames {
            return bad("horizon must exceed given_frames");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        Ok(())
    }

    /// Generator for step `step`: independent of every other step, so a resumed run
    /// draws the same samples.
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Assemble batches on the training thread instead of a prefetch thread.
    pub deterministic: bool,
}

pub const STAGE_ONE_LOG: &str = "metrics_repro.jsonl";
pub const STAGE_TWO_LOG: &str = "metrics_predict.jsonl";

pub(crate) struct MetricLog {
    path: Option<PathBuf>,
    out: Option<BufWriter<File>>,
    pub lines: Vec<LogLine>,
}

impl MetricLog {
    /// Appends to `dir/name` when a directory is given, starting the file fresh unless
    /// `append`.
    pub fn open(dir: Option<&Path>, name: &str, append: bool) -> Result<Self> {
        let (path, out) = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| MsnetError::io(d, e))?;
                let p = d.join(name);
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(append)
                    .write(true)
                    .truncate(!append)
                    .open(&p)
                    .map_err(|e| MsnetError::io(&p, e))?;
                (Some(p), Some(BufWriter::new(f)))
            }
            None => (None, None),
        };
        Ok(MetricLog {
            path,
            out,
            lines: Vec::new(),
        })
    }

    pub fn push(&mut self, line: LogLine) -> Result<()> {
        if let (Some(out), Some(p)) = (self.out.as_mut(), self.path.as_ref()) {
            let s = serde_json::to_string(&line)?;
            writeln!(out, "{s}").map_err(|e| MsnetError::io(p, e))?;
            out.flush().map_err(|e| MsnetError::io(p, e))?;
        }
        self.lines.push(line);
        Ok(())
    }
}

pub(crate) fn check_finite(step: u64, report: &LossReport) -> Result<()> {
    if report.is_finite() {
        Ok(())
    } else {
        Err(MsnetError::NonFiniteLoss {
            step,
            report: serde_json::to_string(report).unwrap_or_default(),
        })
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogLine>,
}
