//! `msnet`: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::Value;

use msnet::config::{parse_config, parse_override, Preset, RunConfig};
use msnet::dataset::{generate_bouncing_sprites, load_dataset, write_dataset, Split, VideoClip};
use msnet::evaluation::{
    evaluate_prediction, export_features, retrieve_nearest, save_features_csv, silhouette_probe,
    LabelField, RecordKind,
};
use msnet::prediction::{predict_sequence, write_prediction, PredictionRequest, PredictionSidecar};
use msnet::training::{
    load_checkpoint, train_predictor, train_reproduction, Checkpoint, RunOptions,
};
use msnet::MsnetError;

const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Parser)]
#[command(
    name = "msnet",
    version,
    about = "Motion/content disentangling and video frame prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bouncing-sprite dataset.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train encoders, generator and discriminators on frame reproduction.
    TrainRepro {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Disable the content discriminator.
        #[arg(long)]
        no_cd: bool,
        /// Disable the motion discriminator.
        #[arg(long)]
        no_md: bool,
    },
    /// Train the motion predictor on top of a frozen reproduction checkpoint.
    TrainPredict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Predict future frames of one clip.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clip id; defaults to the first test clip.
        #[arg(long)]
        clip: Option<String>,
    },
    /// Score predictions and the copy-last-frame baseline on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Rank test-set frame pairs by feature distance to a query pair.
    Retrieve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "motion")]
        kind: RecordKind,
        #[arg(long)]
        query_clip: String,
        /// Query pair is `(frame, frame + 1)`.
        #[arg(long, default_value_t = 0)]
        query_frame: usize,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Write motion or content features of every adjacent pair to CSV.
    ExportFeatures {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "motion")]
        kind: RecordKind,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Silhouette separability of exported features under clip labels.
    Probe {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "motion")]
        labels: LabelField,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Output directory; receives resolved_config.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    preset: Option<Preset>,
    /// JSON file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `key.path=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Assemble batches on the training thread; also set by MSNET_DETERMINISTIC=1.
    #[arg(long)]
    deterministic: bool,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<MsnetError> for Failure {
    fn from(e: MsnetError) -> Self {
        let code = match &e {
            MsnetError::InvalidConfig(_)
            | MsnetError::InvalidSpriteSpec(_)
            | MsnetError::MissingManifest(_)
            | MsnetError::KindMismatch { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl ConfigArgs {
    fn overrides(&self, extra: &[(&str, Value)]) -> CliResult<Vec<(String, Value)>> {
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut push = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("train.weights.alpha", self.alpha.map(Value::from));
        push("train.weights.beta", self.beta.map(Value::from));
        push("train.k_max", self.k_max.map(Value::from));
        push("train.steps", self.steps.map(Value::from));
        push("train.batch_size", self.batch_size.map(Value::from));
        push("train.seed", self.seed.map(Value::from));
        for (k, v) in extra {
            o.push((k.to_string(), v.clone()));
        }
        for s in &self.set {
            o.push(parse_override(s)?);
        }
        Ok(o)
    }

    fn resolve(&self, extra: &[(&str, Value)]) -> CliResult<RunConfig> {
        if let Some(p) = &self.config {
            if !p.is_file() {
                return Err(usage(format!("config file {} not found", p.display())));
            }
        }
        Ok(parse_config(
            self.preset,
            self.config.as_deref(),
            &self.overrides(extra)?,
        )?)
    }

    fn run_options(&self) -> RunOptions {
        let env = std::env::var("MSNET_DETERMINISTIC").is_ok_and(|v| v == "1");
        RunOptions {
            out_dir: Some(self.out.clone()),
            deterministic: self.deterministic || env,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| MsnetError::io(d, e))?;
    }
    let s = serde_json::to_string_pretty(value).map_err(MsnetError::from)?;
    std::fs::write(path, s + "\n").map_err(|e| MsnetError::io(path, e))?;
    Ok(())
}

fn write_resolved(args: &ConfigArgs, cfg: &RunConfig) -> CliResult<()> {
    write_json(&args.out.join(RESOLVED_CONFIG), cfg)
}

fn open_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// Uses the checkpoint's network, which is what the parameters were built for.
fn adopt_network(cfg: &mut RunConfig, ckpt: &Checkpoint) {
    if cfg.network != ckpt.network {
        warn!("network settings taken from the checkpoint, not the configuration");
        cfg.network = ckpt.network.clone();
    }
}

fn load_split(data: &Path, cfg: &RunConfig, split: Split) -> CliResult<Vec<VideoClip>> {
    let ds = load_dataset(data)?;
    if ds.image_shape() != cfg.network.image_shape {
        return Err(usage(format!(
            "dataset frames are {:?} but the network expects {:?}",
            ds.image_shape(),
            cfg.network.image_shape
        )));
    }
    let clips = ds.load_split(split)?;
    if clips.is_empty() {
        return Err(usage(format!("dataset has no {split:?} clips")));
    }
    Ok(clips)
}

fn gen_data(args: &ConfigArgs) -> CliResult<()> {
    let cfg = args.resolve(&[])?;
    let spec = cfg.data.sprite_spec(cfg.network.image_shape);
    let clips = generate_bouncing_sprites(&spec, cfg.data.num_clips, cfg.data.seed)?;
    let splits = Split::assign(clips.len(), cfg.data.test_fraction);
    write_dataset(&args.out, &clips, &splits, Some(cfg.data.seed))?;
    write_resolved(args, &cfg)?;
    println!("wrote {} clips to {}", clips.len(), args.out.display());
    Ok(())
}

fn train_repro(
    args: &ConfigArgs,
    data: &Path,
    resume: Option<&Path>,
    no_cd: bool,
    no_md: bool,
) -> CliResult<()> {
    let mut extra = Vec::new();
    if no_cd {
        extra.push(("train.ablation.content_disc", Value::Bool(false)));
    }
    if no_md {
        extra.push(("train.ablation.motion_disc", Value::Bool(false)));
    }
    let mut cfg = args.resolve(&extra)?;
    let resume = resume.map(open_checkpoint).transpose()?;
    if let Some(c) = &resume {
        adopt_network(&mut cfg, c);
    }
    let clips = load_split(data, &cfg, Split::Train)?;
    write_resolved(args, &cfg)?;
    let out = train_reproduction(
        &clips,
        &cfg.network,
        &cfg.train,
        resume,
        &args.run_options(),
    )?;
    if let Some(last) = out.log.last() {
        println!("{}", serde_json::to_string(last).map_err(MsnetError::from)?);
    }
    info!("finished after {} steps", out.checkpoint.step);
    Ok(())
}

fn train_predict(args: &ConfigArgs, data: &Path, checkpoint: &Path) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let clips = load_split(data, &cfg, Split::Train)?;
    write_resolved(args, &cfg)?;
    let out = train_predictor(&clips, ckpt, &cfg.train, &args.run_options())?;
    if let Some(last) = out.log.last() {
        println!("{}", serde_json::to_string(last).map_err(MsnetError::from)?);
    }
    Ok(())
}

fn predict(args: &ConfigArgs, data: &Path, checkpoint: &Path, clip: Option<&str>) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let ds = load_dataset(data)?;
    let index = match clip {
        Some(id) => ds
            .manifest()
            .clips
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| usage(format!("clip {id:?} not in dataset")))?,
        None => ds
            .entries(Split::Test)
            .next()
            .or_else(|| ds.entries(Split::Train).next())
            .map(|(i, _)| i)
            .ok_or_else(|| usage("dataset is empty"))?,
    };
    let source = ds.load_clip(index)?;
    let k = cfg.train.given_frames;
    if source.len() < k {
        return Err(usage(format!(
            "clip {} has {} frames, fewer than the {k} given frames",
            source.clip_id,
            source.len()
        )));
    }
    write_resolved(args, &cfg)?;
    let request = PredictionRequest {
        given: source.frames[..k].to_vec(),
        horizon: cfg.eval.horizon,
    };
    let frames = predict_sequence(&ckpt.params, &cfg.network, &request)?;
    let sidecar = PredictionSidecar {
        checkpoint: checkpoint.to_path_buf(),
        given_frames: k,
        horizon: cfg.eval.horizon,
        image_shape: cfg.network.image_shape,
        frames: Vec::new(),
        gif: None,
        source: Some(source.clip_id.clone()),
    };
    let sidecar = write_prediction(&args.out, &frames, sidecar, cfg.eval.gif)?;
    println!(
        "predicted {} frames of {} into {}",
        sidecar.frames.len(),
        source.clip_id,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    num_sequences: usize,
    ssim: f64,
    baseline_ssim: f64,
    psnr: f64,
    baseline_psnr: f64,
}

fn eval(args: &ConfigArgs, data: &Path, checkpoint: &Path) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let mut clips = load_split(data, &cfg, Split::Test)?;
    if let Some(n) = cfg.eval.max_clips {
        clips.truncate(n);
    }
    write_resolved(args, &cfg)?;
    let ev = evaluate_prediction(
        &ckpt.params,
        &cfg.network,
        &clips,
        cfg.train.given_frames,
        cfg.eval.horizon,
    )?;
    write_json(&args.out.join("evaluation.json"), &ev)?;
    for (name, curve) in [
        ("ssim", &ev.ssim),
        ("psnr", &ev.psnr),
        ("baseline_ssim", &ev.baseline_ssim),
        ("baseline_psnr", &ev.baseline_psnr),
    ] {
        let p = args.out.join(format!("{name}.csv"));
        std::fs::write(&p, curve.to_csv()).map_err(|e| MsnetError::io(&p, e))?;
    }
    let summary = EvalSummary {
        num_sequences: ev.ssim.num_sequences,
        ssim: ev.ssim.overall(),
        baseline_ssim: ev.baseline_ssim.overall(),
        psnr: ev.psnr.overall(),
        baseline_psnr: ev.baseline_psnr.overall(),
    };
    println!(
        "{}",
        serde_json::to_string(&summary).map_err(MsnetError::from)?
    );
    Ok(())
}

#[derive(Serialize)]
struct Hit {
    rank: usize,
    clip_id: String,
    frame_a: usize,
    frame_b: usize,
    distance: f64,
}

#[allow(clippy::too_many_arguments)]
fn retrieve(
    args: &ConfigArgs,
    data: &Path,
    checkpoint: &Path,
    kind: RecordKind,
    query_clip: &str,
    query_frame: usize,
    top: usize,
) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let ds = load_dataset(data)?;
    let qi = ds
        .manifest()
        .clips
        .iter()
        .position(|c| c.id == query_clip)
        .ok_or_else(|| usage(format!("clip {query_clip:?} not in dataset")))?;
    let qclip = ds.load_clip(qi)?;
    if query_frame + 1 >= qclip.len() {
        return Err(usage(format!(
            "query frame {query_frame} has no successor in {query_clip}"
        )));
    }
    let pool = load_split(data, &cfg, Split::Test)?;
    write_resolved(args, &cfg)?;
    let query = export_features(
        &ckpt.params,
        &cfg.network,
        std::slice::from_ref(&qclip),
        kind,
    )?
    .swap_remove(query_frame);
    let candidates: Vec<_> = export_features(&ckpt.params, &cfg.network, &pool, kind)?
        .into_iter()
        .filter(|r| !(r.clip_id == query.clip_id && r.frame_a == query.frame_a))
        .collect();
    let ranked = retrieve_nearest(&query, &candidates, kind)?;
    let hits: Vec<Hit> = ranked
        .iter()
        .take(top)
        .enumerate()
        .map(|(rank, r)| {
            let c = &candidates[r.index];
            Hit {
                rank: rank + 1,
                clip_id: c.clip_id.clone(),
                frame_a: c.frame_a,
                frame_b: c.frame_b,
                distance: r.distance,
            }
        })
        .collect();
    write_json(&args.out.join("retrieval.json"), &hits)?;
    for h in &hits {
        println!(
            "{}\t{}\t{}-{}\t{:.6}",
            h.rank, h.clip_id, h.frame_a, h.frame_b, h.distance
        );
    }
    Ok(())
}

fn export(
    args: &ConfigArgs,
    data: &Path,
    checkpoint: &Path,
    kind: RecordKind,
    split: Split,
) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let clips = load_split(data, &cfg, split)?;
    write_resolved(args, &cfg)?;
    let records = export_features(&ckpt.params, &cfg.network, &clips, kind)?;
    let path = args.out.join(format!("features_{}.csv", kind.as_str()));
    save_features_csv(&path, &records)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    labels: LabelField,
    motion_features: f64,
    content_features: f64,
    gap: f64,
}

fn probe(args: &ConfigArgs, data: &Path, checkpoint: &Path, labels: LabelField) -> CliResult<()> {
    let mut cfg = args.resolve(&[])?;
    let ckpt = open_checkpoint(checkpoint)?;
    adopt_network(&mut cfg, &ckpt);
    let clips = load_split(data, &cfg, Split::Test)?;
    write_resolved(args, &cfg)?;
    let score = |kind| -> CliResult<f64> {
        let records = export_features(&ckpt.params, &cfg.network, &clips, kind)?;
        Ok(silhouette_probe(&records, labels)?)
    };
    let motion = score(RecordKind::Motion)?;
    let content = score(RecordKind::Content)?;
    let report = ProbeReport {
        labels,
        motion_features: motion,
        content_features: content,
        gap: motion - content,
    };
    write_json(&args.out.join("probe.json"), &report)?;
    println!(
        "{}",
        serde_json::to_string(&report).map_err(MsnetError::from)?
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData { config } => gen_data(config),
        Command::TrainRepro {
            config,
            data,
            resume,
            no_cd,
            no_md,
        } => train_repro(config, data, resume.as_deref(), *no_cd, *no_md),
        Command::TrainPredict {
            config,
            data,
            checkpoint,
        } => train_predict(config, data, checkpoint),
        Command::Predict {
            config,
            data,
            checkpoint,
            clip,
        } => predict(config, data, checkpoint, clip.as_deref()),
        Command::Eval {
            config,
            data,
            checkpoint,
        } => eval(config, data, checkpoint),
        Command::Retrieve {
            config,
            data,
            checkpoint,
            kind,
            query_clip,
            query_frame,
            top,
        } => retrieve(
            config,
            data,
            checkpoint,
            *kind,
            query_clip,
            *query_frame,
            *top,
        ),
        Command::ExportFeatures {
            config,
            data,
            checkpoint,
            kind,
            split,
        } => export(config, data, checkpoint, *kind, *split),
        Command::Probe {
            config,
            data,
            checkpoint,
            labels,
        } => probe(config, data, checkpoint, *labels),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
