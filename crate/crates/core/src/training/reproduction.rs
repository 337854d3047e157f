use std::collections::BTreeMap;
use std::sync::mpsc;

use rand::Rng;

use super::{
    check_finite, Checkpoint, LogLine, MetricLog, RunOptions, TrainConfig, TrainOutcome,
    DISCRIMINATIVE_GROUP, GENERATIVE_GROUP, PREDICTOR_GROUP, STAGE_ONE_LOG,
};
use crate::autograd::{Graph, Var};
use crate::dataset::{
    sample_discriminator_batches, sample_reproduction_triple, PairRef, VideoClip,
};
use crate::error::{MsnetError, Result};
use crate::losses::{terms, Ablation, LossReport};
use crate::networks::{
    discriminators::{content_disc, frame_disc, motion_disc},
    encoders::{content_encoder, generator, motion_encoder},
    init_params, NetworkConfig,
};
use crate::optim::Adam;
use crate::params::Net;
use crate::tensor::{Real, Tensor};

/// Batched inputs of one reproduction step, all `[n, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch<F> {
    pub x_t: Tensor<F>,
    pub x_t1: Tensor<F>,
    pub x_tk: Tensor<F>,
    /// `(x_a, x_{a+1}, x_b, x_{b+1})` with both pairs from one clip.
    pub same_video: [Tensor<F>; 4],
    /// Same layout with the pairs from two different clips.
    pub cross_video: [Tensor<F>; 4],
    /// `(x_a, x_{a+1})`.
    pub sequential: [Tensor<F>; 2],
    /// `(x_a, x_b)` with `|a - b| >= 2`.
    pub non_sequential: [Tensor<F>; 2],
}

fn stack_frames(
    clips: &[VideoClip],
    picks: impl Iterator<Item = (usize, usize)>,
) -> Result<Tensor<f32>> {
    let frames: Vec<_> = picks.map(|(c, i)| &clips[c].frames[i]).collect();
    Tensor::stack(&frames)
}

fn pair_legs(clips: &[VideoClip], pairs: &[PairRef]) -> Result<[Tensor<f32>; 2]> {
    Ok([
        stack_frames(clips, pairs.iter().map(|p| (p.clip, p.a)))?,
        stack_frames(clips, pairs.iter().map(|p| (p.clip, p.b)))?,
    ])
}

fn quad(clips: &[VideoClip], pairs: &[(PairRef, PairRef)]) -> Result<[Tensor<f32>; 4]> {
    let first: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let second: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let [a0, a1] = pair_legs(clips, &first)?;
    let [b0, b1] = pair_legs(clips, &second)?;
    Ok([a0, a1, b0, b1])
}

impl StepBatch<f32> {
    /// Draws `batch_size` triples (clip uniform, then `k` and `t`) and the
    /// discriminator samples.
    pub fn sample<R: Rng + ?Sized>(
        clips: &[VideoClip],
        batch_size: usize,
        k_max: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(MsnetError::Empty("no training clips".into()));
        }
        let mut triples = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let c = rng.random_range(0..clips.len());
            triples.push(sample_reproduction_triple(&clips[c], k_max, rng)?);
        }
        let x_t = Tensor::stack(&triples.iter().map(|s| &s.x_t).collect::<Vec<_>>())?;
        let x_t1 = Tensor::stack(&triples.iter().map(|s| &s.x_t1).collect::<Vec<_>>())?;
        let x_tk = Tensor::stack(&triples.iter().map(|s| &s.x_tk).collect::<Vec<_>>())?;
        let d = sample_discriminator_batches(clips, batch_size, rng)?;
        Ok(StepBatch {
            x_t,
            x_t1,
            x_tk,
            same_video: quad(clips, &d.same_video)?,
            cross_video: quad(clips, &d.cross_video)?,
            sequential: pair_legs(clips, &d.sequential)?,
            non_sequential: pair_legs(clips, &d.non_sequential)?,
        })
    }
}

impl<F: Real> StepBatch<F> {
    pub fn cast<G: Real>(&self) -> StepBatch<G> {
        let c4 = |t: &[Tensor<F>; 4]| [t[0].cast(), t[1].cast(), t[2].cast(), t[3].cast()];
        let c2 = |t: &[Tensor<F>; 2]| [t[0].cast(), t[1].cast()];
        StepBatch {
            x_t: self.x_t.cast(),
            x_t1: self.x_t1.cast(),
            x_tk: self.x_tk.cast(),
            same_video: c4(&self.same_video),
            cross_video: c4(&self.cross_video),
            sequential: c2(&self.sequential),
            non_sequential: c2(&self.non_sequential),
        }
    }

    pub fn len(&self) -> usize {
        self.x_t.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Concatenation along the batch axis.
fn cat<F: Real>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts[0].shape();
    let mut data = Vec::new();
    let mut n = 0;
    for p in parts {
        if p.shape()[1..] != first[1..] {
            return Err(MsnetError::Shape(format!("{:?} vs {:?}", p.shape(), first)));
        }
        n += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.to_vec();
    shape[0] = n;
    Tensor::new(shape, data)
}

/// Every objective term of one reproduction step, as graph scalars. Terms of a
/// disabled discriminator are `None`.
#[derive(Copy, Clone, Debug)]
pub struct StageOneTerms {
    pub rec: Var,
    pub rev: Var,
    pub adv_f: Var,
    pub d_f: Var,
    pub adv_c: Option<Var>,
    pub d_c: Option<Var>,
    pub adv_m: Option<Var>,
    pub d_m: Option<Var>,
}

/// Builds all reproduction-stage terms on `g`. Which parameters receive gradients is
/// decided by how `g` was created.
pub fn stage_one_terms<F: Real>(
    g: &mut Graph<F>,
    cfg: &NetworkConfig,
    batch: &StepBatch<F>,
    ablation: Ablation,
) -> Result<StageOneTerms> {
    let n = batch.len();
    let b = batch;

    // One content-encoder pass covers the forward pair, its reversal and the
    // motion-discriminator samples.
    let mut ca = vec![&b.x_t, &b.x_t1];
    let mut cb = vec![&b.x_t1, &b.x_t];
    if ablation.motion_disc {
        ca.extend([&b.sequential[0], &b.non_sequential[0]]);
        cb.extend([&b.sequential[1], &b.non_sequential[1]]);
    }
    let ca = g.constant(cat(&ca)?);
    let cb = g.constant(cat(&cb)?);
    let (content, skips) = content_encoder(g, cfg, ca, cb)?;
    let c_fwd = g.narrow(content, 0, 0, n)?;
    let c_rev = g.narrow(content, 0, n, n)?;
    let skips = skips
        .iter()
        .map(|s| g.narrow(*s, 0, 0, n))
        .collect::<Result<Vec<_>>>()?;

    let mut ma = vec![&b.x_t1];
    let mut mb = vec![&b.x_tk];
    if ablation.content_disc {
        let (s, c) = (&b.same_video, &b.cross_video);
        ma.extend([&s[0], &s[2], &c[0], &c[2]]);
        mb.extend([&s[1], &s[3], &c[1], &c[3]]);
    }
    let ma = g.constant(cat(&ma)?);
    let mb = g.constant(cat(&mb)?);
    let motion = motion_encoder(g, cfg, ma, mb)?;
    let m_gen = g.narrow(motion, 0, 0, n)?;

    let x_hat = generator(g, cfg, c_fwd, &skips, m_gen)?;
    let x_t = g.constant(b.x_t.clone());
    let x_tk = g.constant(b.x_tk.clone());
    let rec = g.mse(x_hat, x_tk)?;
    let rev = g.mse(c_fwd, c_rev)?;

    let real = frame_disc(g, cfg, x_t, x_tk)?;
    let fake = frame_disc(g, cfg, x_t, x_hat)?;
    let d_f = terms::discriminator(g, real, fake);
    let adv_f = terms::frame_adversarial(g, fake);

    let (adv_c, d_c) = if ablation.content_disc {
        let leg = |g: &mut Graph<F>, i: usize| g.narrow(motion, 0, n * (1 + i), n);
        let (s0, s1, c0, c1) = (leg(g, 0)?, leg(g, 1)?, leg(g, 2)?, leg(g, 3)?);
        let same = content_disc(g, cfg, s0, s1)?;
        let cross = content_disc(g, cfg, c0, c1)?;
        (
            Some(terms::max_entropy(g, same)),
            Some(terms::discriminator(g, same, cross)),
        )
    } else {
        (None, None)
    };

    let (adv_m, d_m) = if ablation.motion_disc {
        let seq = g.narrow(content, 0, 2 * n, n)?;
        let non = g.narrow(content, 0, 3 * n, n)?;
        let p_seq = motion_disc(g, cfg, seq)?;
        let p_non = motion_disc(g, cfg, non)?;
        (
            Some(terms::max_entropy(g, p_seq)),
            Some(terms::discriminator(g, p_seq, p_non)),
        )
    } else {
        (None, None)
    };

    Ok(StageOneTerms {
        rec,
        rev,
        adv_f,
        d_f,
        adv_c,
        d_c,
        adv_m,
        d_m,
    })
}

pub(crate) fn value(g: &Graph<f32>, v: Var) -> f64 {
    g.scalar(v) as f64
}

/// Optimizer state of the reproduction stage.
fn optimizer<'a>(opts: &'a mut BTreeMap<String, Adam>, group: &str) -> Result<&'a mut Adam> {
    opts.get_mut(group)
        .ok_or_else(|| MsnetError::CorruptCheckpoint(format!("missing optimizer group {group}")))
}

/// One discriminator update on `L_2` followed by one encoder/generator update on
/// `L_1`, in that order. Advances `ckpt.step`.
pub fn train_reproduction_step(
    ckpt: &mut Checkpoint,
    batch: &StepBatch<f32>,
) -> Result<LossReport> {
    let cfg = ckpt.network.clone();
    let tc = ckpt.train.clone();
    let ab = tc.ablation;
    let step = ckpt.step + 1;
    let mut report = LossReport::default();

    let grads = {
        let mut g = Graph::with_params(&ckpt.params, &Net::DISCRIMINATORS);
        let t = stage_one_terms(&mut g, &cfg, batch, ab)?;
        let mut parts = vec![(1.0, t.d_f)];
        parts.extend(t.d_c.map(|v| (1.0, v)));
        parts.extend(t.d_m.map(|v| (1.0, v)));
        let l2 = terms::weighted_sum(&mut g, &parts);
        report.d_f = Some(value(&g, t.d_f));
        report.d_c = t.d_c.map(|v| value(&g, v));
        report.d_m = t.d_m.map(|v| value(&g, v));
        report.l2 = Some(value(&g, l2));
        check_finite(step, &report)?;
        g.backward(l2)?.into_params()
    };
    optimizer(&mut ckpt.optimizers, DISCRIMINATIVE_GROUP)?.step(&mut ckpt.params, &grads)?;

    let grads = {
        let mut g = Graph::with_params(&ckpt.params, &Net::GENERATIVE);
        let t = stage_one_terms(&mut g, &cfg, batch, ab)?;
        let w = tc.weights;
        let mut parts = vec![(1.0, t.rec), (w.alpha, t.rev), (w.beta, t.adv_f)];
        parts.extend(t.adv_c.map(|v| (w.beta, v)));
        parts.extend(t.adv_m.map(|v| (w.beta, v)));
        let l1 = terms::weighted_sum(&mut g, &parts);
        report.rec = Some(value(&g, t.rec));
        report.rev = Some(value(&g, t.rev));
        report.adv_f = Some(value(&g, t.adv_f));
        report.adv_c = t.adv_c.map(|v| value(&g, v));
        report.adv_m = t.adv_m.map(|v| value(&g, v));
        report.l1 = Some(value(&g, l1));
        check_finite(step, &report)?;
        g.backward(l1)?.into_params()
    };
    optimizer(&mut ckpt.optimizers, GENERATIVE_GROUP)?.step(&mut ckpt.params, &grads)?;
    ckpt.step = step;
    Ok(report)
}

pub(crate) fn check_clips(clips: &[VideoClip], cfg: &NetworkConfig, needed: usize) -> Result<()> {
    if clips.len() < 2 {
        return Err(MsnetError::NotEnoughClips(clips.len()));
    }
    for c in clips {
        if c.image_shape() != cfg.image_shape {
            return Err(MsnetError::InvalidDataset(format!(
                "clip {} has frames {:?}, network expects {:?}",
                c.clip_id,
                c.image_shape(),
                cfg.image_shape
            )));
        }
        if c.len() < needed {
            return Err(MsnetError::ClipTooShort {
                clip_id: c.clip_id.clone(),
                len: c.len(),
                needed,
            });
        }
    }
    Ok(())
}

/// A fresh checkpoint with initialized parameters and empty optimizer state.
pub fn fresh_checkpoint(network: &NetworkConfig, train: &TrainConfig) -> Result<Checkpoint> {
    network.validate()?;
    train.validate()?;
    let mut optimizers = BTreeMap::new();
    optimizers.insert(
        GENERATIVE_GROUP.to_string(),
        Adam::new(train.generative_optim),
    );
    optimizers.insert(
        DISCRIMINATIVE_GROUP.to_string(),
        Adam::new(train.discriminative_optim),
    );
    optimizers.insert(
        PREDICTOR_GROUP.to_string(),
        Adam::new(train.predictor_optim),
    );
    Ok(Checkpoint {
        network: network.clone(),
        train: train.clone(),
        params: init_params(network, train.seed)?,
        step: 0,
        predictor_step: 0,
        optimizers,
    })
}

/// Installs `train` on a loaded checkpoint. Optimizer moments are kept and their
/// hyperparameters are taken from `train`.
pub(crate) fn adopt_train_config(ckpt: &mut Checkpoint, train: &TrainConfig) -> Result<()> {
    for (group, config) in [
        (GENERATIVE_GROUP, train.generative_optim),
        (DISCRIMINATIVE_GROUP, train.discriminative_optim),
        (PREDICTOR_GROUP, train.predictor_optim),
    ] {
        optimizer(&mut ckpt.optimizers, group)?.config = config;
    }
    ckpt.train = train.clone();
    Ok(())
}

/// Runs the reproduction stage up to `train.steps`, starting from `resume` when
/// given. Writes the metric log and periodic checkpoints into `opts.out_dir`.
pub fn train_reproduction(
    clips: &[VideoClip],
    network: &NetworkConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint>,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    let mut ckpt = match resume {
        Some(c) => {
            if &c.network != network {
                return Err(MsnetError::InvalidConfig(
                    "resume checkpoint has a different network config".into(),
                ));
            }
            let mut c = c;
            adopt_train_config(&mut c, train)?;
            c
        }
        None => fresh_checkpoint(network, train)?,
    };
    train.validate()?;
    check_clips(clips, network, train.k_max.max(2) + 1)?;
    let dir = opts.out_dir.as_deref();
    let mut log = MetricLog::open(dir, STAGE_ONE_LOG, ckpt.step > 0)?;
    let first = ckpt.step + 1;
    let batch_for = |step: u64| {
        StepBatch::sample(
            clips,
            train.batch_size,
            train.k_max,
            &mut train.step_rng(step),
        )
    };

    let mut run = |next: &mut dyn FnMut(u64) -> Result<StepBatch<f32>>| -> Result<()> {
        for step in first..=train.steps {
            let batch = next(step)?;
            let report = train_reproduction_step(&mut ckpt, &batch)?;
            if step % train.log_every == 0 || step == train.steps {
                log::info!(
                    "repro step {step}: L_rec {:.5} L_1 {:.5} L_2 {:.5}",
                    report.rec.unwrap_or(f64::NAN),
                    report.l1.unwrap_or(f64::NAN),
                    report.l2.unwrap_or(f64::NAN)
                );
                log.push(LogLine { step, report })?;
            }
            if let Some(d) = dir {
                if train.checkpoint_every > 0 && step % train.checkpoint_every == 0 {
                    super::save_checkpoint(&ckpt, &d.join(format!("repro_step{step:06}.ckpt")))?;
                }
            }
        }
        Ok(())
    };

    if opts.deterministic || first > train.steps {
        run(&mut |s| batch_for(s))?;
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel(2);
            let producer = scope.spawn(move || {
                for step in first..=train.steps {
                    if tx.send(batch_for(step)).is_err() {
                        break;
                    }
                }
            });
            let out = run(&mut |_| {
                rx.recv()
                    .map_err(|_| MsnetError::Empty("batch producer stopped".into()))?
            });
            drop(rx);
            producer.join().expect("batch producer panicked");
            out
        })?;
    }
    if let Some(d) = dir {
        super::save_checkpoint(&ckpt, &d.join("repro.ckpt"))?;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log: log.lines,
    })
}
