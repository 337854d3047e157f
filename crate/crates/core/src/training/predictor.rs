use rand::Rng;

use super::reproduction::value;
use super::{
    check_finite, Checkpoint, LogLine, MetricLog, RunOptions, TrainConfig, TrainOutcome,
    PREDICTOR_GROUP, STAGE_TWO_LOG,
};
use crate::autograd::{Graph, Var};
use crate::dataset::VideoClip;
use crate::error::{MsnetError, Result};
use crate::losses::LossReport;
use crate::networks::{clstm, encoders::motion_encoder, NetworkConfig};
use crate::params::{Net, ParamStore};
use crate::tensor::{Real, Tensor};

/// Predictor streams start here so they never collide with reproduction steps.
const STREAM_OFFSET: u64 = 1 << 62;

/// `T` consecutive frames of `n` sequences: `frames[t]` is `[n, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorBatch<F> {
    pub frames: Vec<Tensor<F>>,
}

/// Draws `batch_size` windows of `horizon` consecutive frames.
pub fn sample_predictor_batch<R: Rng + ?Sized>(
    clips: &[&VideoClip],
    batch_size: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<PredictorBatch<f32>> {
    if clips.is_empty() {
        return Err(MsnetError::Empty(format!(
            "no clips with at least {horizon} frames"
        )));
    }
    let picks: Vec<(usize, usize)> = (0..batch_size)
        .map(|_| {
            let c = rng.random_range(0..clips.len());
            (c, rng.random_range(0..=clips[c].len() - horizon))
        })
        .collect();
    let frames = (0..horizon)
        .map(|t| {
            let f: Vec<_> = picks
                .iter()
                .map(|&(c, s)| &clips[c].frames[s + t])
                .collect();
            Tensor::stack(&f)
        })
        .collect::<Result<_>>()?;
    Ok(PredictorBatch { frames })
}

/// `E_m(x_k, x_t)` for `t = 1..=T` (1-based, `x_k = frames[k - 1]`).
pub fn motion_targets<F: Real>(
    params: &ParamStore<F>,
    cfg: &NetworkConfig,
    batch: &PredictorBatch<F>,
    k: usize,
) -> Result<Vec<Tensor<F>>> {
    let horizon = batch.frames.len();
    if k == 0 || k > horizon {
        return Err(MsnetError::InvalidConfig(format!(
            "given frames {k} outside 1..={horizon}"
        )));
    }
    let x_k = &batch.frames[k - 1];
    let n = x_k.shape()[0];
    let mut a = Vec::with_capacity(x_k.numel() * horizon);
    let mut b = Vec::with_capacity(x_k.numel() * horizon);
    for f in &batch.frames {
        a.extend_from_slice(x_k.data());
        b.extend_from_slice(f.data());
    }
    let mut shape = x_k.shape().to_vec();
    shape[0] = n * horizon;
    let mut g = Graph::with_params(params, &[]);
    let av = g.constant(Tensor::new(shape.clone(), a)?);
    let bv = g.constant(Tensor::new(shape, b)?);
    let m = motion_encoder(&mut g, cfg, av, bv)?;
    let out = g.value(m);
    let per = out.numel() / horizon;
    let mut fshape = out.shape().to_vec();
    fshape[0] = n;
    (0..horizon)
        .map(|t| Tensor::new(fshape.clone(), out.data()[t * per..(t + 1) * per].to_vec()))
        .collect()
}

/// Warm-up over `targets[..k]`, then autoregressive feedback; sums the mean squared
/// error of every prediction after the `k`-th input against the next target.
pub fn predictor_loss<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    targets: &[Var],
    k: usize,
) -> Result<Var> {
    let horizon = targets.len();
    if k == 0 || horizon <= k {
        return Err(MsnetError::InvalidConfig(format!(
            "need more than {k} targets, got {horizon}"
        )));
    }
    let n = g.shape(targets[0])[0];
    let mut state = clstm::zero_state(g, cfg, n);
    let mut out = None;
    for &x in &targets[..k] {
        let (s, o) = clstm::step(g, cfg, &state, x)?;
        state = s;
        out = Some(o);
    }
    let mut pred = out.expect("k >= 1");
    let mut loss = g.mse(pred, targets[k])?;
    for &target in &targets[k + 1..] {
        let (s, o) = clstm::step(g, cfg, &state, pred)?;
        state = s;
        pred = o;
        let e = g.mse(pred, target)?;
        loss = g.add(loss, e)?;
    }
    Ok(loss)
}

/// One predictor update. Only cLSTM parameters change.
pub fn train_predictor_step(
    ckpt: &mut Checkpoint,
    batch: &PredictorBatch<f32>,
) -> Result<LossReport> {
    let cfg = ckpt.network.clone();
    let k = ckpt.train.given_frames;
    let step = ckpt.predictor_step + 1;
    let targets = motion_targets(&ckpt.params, &cfg, batch, k)?;
    let (report, grads) = {
        let mut g = Graph::with_params(&ckpt.params, &[Net::Predictor]);
        let vars: Vec<Var> = targets.into_iter().map(|t| g.constant(t)).collect();
        let loss = predictor_loss(&mut g, &cfg, &vars, k)?;
        let report = LossReport {
            lstm: Some(value(&g, loss)),
            ..Default::default()
        };
        check_finite(step, &report)?;
        (report, g.backward(loss)?.into_params())
    };
    ckpt.optimizers
        .get_mut(PREDICTOR_GROUP)
        .ok_or_else(|| MsnetError::CorruptCheckpoint("missing predictor optimizer".into()))?
        .step(&mut ckpt.params, &grads)?;
    ckpt.predictor_step = step;
    Ok(report)
}

/// Trains the cLSTM on top of a reproduction-stage checkpoint up to
/// `train.predictor_steps`. Clips shorter than `train.horizon` are skipped.
pub fn train_predictor(
    clips: &[VideoClip],
    stage_one: Checkpoint,
    train: &TrainConfig,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    train.validate()?;
    let mut ckpt = stage_one;
    super::reproduction::adopt_train_config(&mut ckpt, train)?;
    let usable: Vec<&VideoClip> = clips.iter().filter(|c| c.len() >= train.horizon).collect();
    if usable.len() < clips.len() {
        log::warn!(
            "skipping {} clips shorter than {} frames",
            clips.len() - usable.len(),
            train.horizon
        );
    }
    if let Some(c) = usable
        .iter()
        .find(|c| c.image_shape() != ckpt.network.image_shape)
    {
        return Err(MsnetError::InvalidDataset(format!(
            "clip {} has frames {:?}, network expects {:?}",
            c.clip_id,
            c.image_shape(),
            ckpt.network.image_shape
        )));
    }
    let dir = opts.out_dir.as_deref();
    let mut log = MetricLog::open(dir, STAGE_TWO_LOG, ckpt.predictor_step > 0)?;
    for step in ckpt.predictor_step + 1..=train.predictor_steps {
        let mut rng = train.step_rng(STREAM_OFFSET + step);
        let batch =
            sample_predictor_batch(&usable, train.predictor_batch_size, train.horizon, &mut rng)?;
        let report = train_predictor_step(&mut ckpt, &batch)?;
        if step % train.log_every == 0 || step == train.predictor_steps {
            log::info!(
                "predict step {step}: L_lstm {:.6}",
                report.lstm.unwrap_or(f64::NAN)
            );
            log.push(LogLine { step, report })?;
        }
        if let Some(d) = dir {
            if train.checkpoint_every > 0 && step % train.checkpoint_every == 0 {
                super::save_checkpoint(&ckpt, &d.join(format!("predict_step{step:06}.ckpt")))?;
            }
        }
    }
    if let Some(d) = dir {
        super::save_checkpoint(&ckpt, &d.join("predict.ckpt"))?;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log: log.lines,
    })
}
