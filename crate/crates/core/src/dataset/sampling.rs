use rand::Rng;

use super::{Frame, VideoClip};
use crate::error::{MsnetError, Result};

/// `(x_t, x_{t+1}, x_{t+k})` drawn from one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleSample {
    pub clip: usize,
    pub t: usize,
    pub k: usize,
    pub x_t: Frame,
    pub x_t1: Frame,
    pub x_tk: Frame,
}

/// Draws `k` uniformly from `0..=k_max`, then `t` uniformly among indices where both
/// `t + 1` and `t + k` exist.
pub fn sample_reproduction_triple<R: Rng + ?Sized>(
    clip: &VideoClip,
    k_max: usize,
    rng: &mut R,
) -> Result<TripleSample> {
    let len = clip.len();
    let reach = k_max.max(1);
    if len < reach + 1 {
        return Err(MsnetError::ClipTooShort {
            clip_id: clip.clip_id.clone(),
            len,
            needed: reach + 1,
        });
    }
    let k = rng.random_range(0..=k_max);
    let t = rng.random_range(0..len - k.max(1));
    Ok(TripleSample {
        clip: 0,
        t,
        k,
        x_t: clip.frames[t].clone(),
        x_t1: clip.frames[t + 1].clone(),
        x_tk: clip.frames[t + k].clone(),
    })
}

/// Frames `a` and `b` of clip `clip`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PairRef {
    pub clip: usize,
    pub a: usize,
    pub b: usize,
}

/// Index-level draws for the three discriminators.
///
/// Motion-pair items are `((x_a, x_{a+1}), (x_b, x_{b+1}))` with `a != b`; positives take
/// both legs from one clip, negatives from two distinct clips.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DiscriminatorBatch {
    pub same_video: Vec<(PairRef, PairRef)>,
    pub cross_video: Vec<(PairRef, PairRef)>,
    /// `(x_a, x_{a+1})`.
    pub sequential: Vec<PairRef>,
    /// `(x_a, x_b)` with `|a - b| >= 2`.
    pub non_sequential: Vec<PairRef>,
}

fn adjacent(clip: usize, a: usize) -> PairRef {
    PairRef { clip, a, b: a + 1 }
}

/// Two distinct adjacent-pair starts, uniform over ordered pairs.
fn distinct_starts<R: Rng + ?Sized>(len_a: usize, len_b: usize, rng: &mut R) -> (usize, usize) {
    loop {
        let a = rng.random_range(0..len_a - 1);
        let b = rng.random_range(0..len_b - 1);
        if a != b {
            return (a, b);
        }
    }
}

pub fn sample_discriminator_batches<R: Rng + ?Sized>(
    clips: &[VideoClip],
    batch: usize,
    rng: &mut R,
) -> Result<DiscriminatorBatch> {
    if clips.len() < 2 {
        return Err(MsnetError::NotEnoughClips(clips.len()));
    }
    if let Some(c) = clips.iter().find(|c| c.len() < 3) {
        return Err(MsnetError::ClipTooShort {
            clip_id: c.clip_id.clone(),
            len: c.len(),
            needed: 3,
        });
    }
    let n = clips.len();
    let mut out = DiscriminatorBatch::default();
    for _ in 0..batch {
        let c = rng.random_range(0..n);
        let len = clips[c].len();
        let (a, b) = distinct_starts(len, len, rng);
        out.same_video.push((adjacent(c, a), adjacent(c, b)));

        let x = rng.random_range(0..n);
        let y = loop {
            let y = rng.random_range(0..n);
            if y != x {
                break y;
            }
        };
        let (a, b) = distinct_starts(clips[x].len(), clips[y].len(), rng);
        out.cross_video.push((adjacent(x, a), adjacent(y, b)));

        let c = rng.random_range(0..n);
        let a = rng.random_range(0..clips[c].len() - 1);
        out.sequential.push(adjacent(c, a));

        let c = rng.random_range(0..n);
        let len = clips[c].len();
        let (a, b) = loop {
            let a = rng.random_range(0..len);
            let b = rng.random_range(0..len);
            if a.abs_diff(b) >= 2 {
                break (a, b);
            }
        };
        out.non_sequential.push(PairRef { clip: c, a, b });
    }
    Ok(out)
}
