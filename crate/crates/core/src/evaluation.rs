//! Image metrics, prediction curves, feature export, retrieval and cluster probes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::dataset::{Frame, VideoClip};
use crate::error::{MsnetError, Result};
use crate::networks::{encoders, NetworkConfig};
use crate::params::ModelParams;
use crate::prediction::{predict_batch, PredictionRequest};
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(x: &Frame, y: &Frame) -> Result<()> {
    if x.shape() != y.shape() || x.shape().len() != 3 {
        return Err(MsnetError::Shape(format!(
            "metric inputs {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` for intensities in `[0, 1]`, capped at 100 dB.
pub fn psnr(x: &Frame, y: &Frame) -> Result<f64> {
    check_pair(x, y)?;
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum::<f64>()
        / x.numel() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Channel mean as an `h x w` plane in f64.
fn gray(f: &Frame) -> (usize, usize, Vec<f64>) {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&f.data()[ch * h * w..(ch + 1) * h * w]) {
            *o += *v as f64 / c as f64;
        }
    }
    (h, w, out)
}

/// Valid-mode separable filtering.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * img[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * wo + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all positions where the 11x11 Gaussian window fits. RGB frames are
/// averaged to gray first.
pub fn ssim(x: &Frame, y: &Frame) -> Result<f64> {
    check_pair(x, y)?;
    let (h, w, a) = gray(x);
    let (_, _, b) = gray(y);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MsnetError::Shape(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, h, w, &taps);
    let mu_b = filter_valid(&b, h, w, &taps);
    let aa = filter_valid(&prod(&a, &a), h, w, &taps);
    let bb = filter_valid(&prod(&b, &b), h, w, &taps);
    let ab = filter_valid(&prod(&a, &b), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-offset mean and population standard deviation of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub metric: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub num_sequences: usize,
}

impl MetricCurve {
    /// `values[s][t]` is the metric of sequence `s` at offset `t + 1`.
    pub fn from_values(metric: &str, values: &[Vec<f64>]) -> Result<Self> {
        let len = values
            .first()
            .ok_or_else(|| MsnetError::Empty("no sequences to evaluate".into()))?
            .len();
        let n = values.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        for t in 0..len {
            let m = values.iter().map(|v| v[t]).sum::<f64>() / n;
            let var = values.iter().map(|v| (v[t] - m).powi(2)).sum::<f64>() / n;
            mean[t] = m;
            std[t] = var.sqrt();
        }
        Ok(MetricCurve {
            metric: metric.into(),
            mean,
            std,
            num_sequences: values.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean over offsets.
    pub fn overall(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("offset,mean,std\n");
        for (i, (m, d)) in self.mean.iter().zip(&self.std).enumerate() {
            s.push_str(&format!("{},{m},{d}\n", i + 1));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvaluation {
    pub given_frames: usize,
    pub horizon: usize,
    pub ssim: MetricCurve,
    pub psnr: MetricCurve,
    pub baseline_ssim: MetricCurve,
    pub baseline_psnr: MetricCurve,
}

/// Clips predicted per batch during evaluation.
const EVAL_BATCH: usize = 16;

/// Predicts `horizon` frames after the first `k` of every clip and scores them and the
/// copy-last-frame baseline against the truth.
pub fn evaluate_prediction(
    params: &ModelParams,
    cfg: &NetworkConfig,
    clips: &[VideoClip],
    k: usize,
    horizon: usize,
) -> Result<PredictionEvaluation> {
    if clips.is_empty() {
        return Err(MsnetError::Empty("empty test set".into()));
    }
    if let Some(c) = clips.iter().find(|c| c.len() < k + horizon) {
        return Err(MsnetError::ClipTooShort {
            clip_id: c.clip_id.clone(),
            len: c.len(),
            needed: k + horizon,
        });
    }
    let (mut s, mut p, mut bs, mut bp) = (vec![], vec![], vec![], vec![]);
    for chunk in clips.chunks(EVAL_BATCH) {
        let reqs: Vec<_> = chunk
            .iter()
            .map(|c| PredictionRequest {
                given: c.frames[..k].to_vec(),
                horizon,
            })
            .collect();
        let preds = predict_batch(params, cfg, &reqs)?;
        for (clip, pred) in chunk.iter().zip(&preds) {
            let truth = &clip.frames[k..k + horizon];
            let last = &clip.frames[k - 1];
            s.push(
                truth
                    .iter()
                    .zip(pred)
                    .map(|(t, x)| ssim(x, t))
                    .collect::<Result<Vec<_>>>()?,
            );
            p.push(
                truth
                    .iter()
                    .zip(pred)
                    .map(|(t, x)| psnr(x, t))
                    .collect::<Result<Vec<_>>>()?,
            );
            bs.push(
                truth
                    .iter()
                    .map(|t| ssim(last, t))
                    .collect::<Result<Vec<_>>>()?,
            );
            bp.push(
                truth
                    .iter()
                    .map(|t| psnr(last, t))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    Ok(PredictionEvaluation {
        given_frames: k,
        horizon,
        ssim: MetricCurve::from_values("ssim", &s)?,
        psnr: MetricCurve::from_values("psnr", &p)?,
        baseline_ssim: MetricCurve::from_values("ssim", &bs)?,
        baseline_psnr: MetricCurve::from_values("psnr", &bp)?,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Motion,
    Content,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Motion => "motion",
            RecordKind::Content => "content",
        }
    }
}

impl std::str::FromStr for RecordKind {
    type Err = MsnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(RecordKind::Motion),
            "content" => Ok(RecordKind::Content),
            _ => Err(MsnetError::InvalidConfig(format!(
                "feature kind must be motion or content, got {s:?}"
            ))),
        }
    }
}

/// A flattened feature of the frame pair `(frame_a, frame_b)` of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub clip_id: String,
    pub frame_a: usize,
    pub frame_b: usize,
    pub kind: RecordKind,
    pub vector: Vec<f32>,
    pub motion_label: String,
    pub content_label: String,
}

/// `E_m(x_a, x_{a+1})` or `E_c(x_a, x_{a+1})` for every adjacent pair of every clip.
pub fn export_features(
    params: &ModelParams,
    cfg: &NetworkConfig,
    clips: &[VideoClip],
    kind: RecordKind,
) -> Result<Vec<FeatureRecord>> {
    if clips
        .iter()
        .any(|c| c.motion_label.is_none() || c.content_label.is_none())
    {
        log::warn!("dataset has unlabeled clips; labels exported as empty strings");
    }
    let mut out = Vec::new();
    for clip in clips {
        let n = clip.len() - 1;
        let a: Vec<&Frame> = clip.frames[..n].iter().collect();
        let b: Vec<&Frame> = clip.frames[1..].iter().collect();
        let mut g = Graph::with_params(params, &[]);
        let av = g.constant(Tensor::stack(&a)?);
        let bv = g.constant(Tensor::stack(&b)?);
        let f = match kind {
            RecordKind::Motion => encoders::motion_encoder(&mut g, cfg, av, bv)?,
            RecordKind::Content => encoders::content_encoder(&mut g, cfg, av, bv)?.0,
        };
        let values = g.value(f);
        for i in 0..n {
            out.push(FeatureRecord {
                clip_id: clip.clip_id.clone(),
                frame_a: i,
                frame_b: i + 1,
                kind,
                vector: values.index(i).into_data(),
                motion_label: clip.motion_label.clone().unwrap_or_default(),
                content_label: clip.content_label.clone().unwrap_or_default(),
            });
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_features_csv<W: Write>(out: &mut W, records: &[FeatureRecord]) -> std::io::Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    write!(
        out,
        "clip_id,frame_a,frame_b,kind,motion_label,content_label"
    )?;
    for i in 0..dim {
        write!(out, ",v{i}")?;
    }
    writeln!(out)?;
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.clip_id),
            r.frame_a,
            r.frame_b,
            r.kind.as_str(),
            csv_field(&r.motion_label),
            csv_field(&r.content_label)
        )?;
        for v in &r.vector {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_features_csv(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| MsnetError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_features_csv(&mut w, records)
        .and_then(|_| w.flush())
        .map_err(|e| MsnetError::io(path, e))
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// A ranked candidate: its index in the input list and its distance to the query.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub distance: f64,
}

/// Candidates by ascending Euclidean distance; ties by clip id, then frame indices.
pub fn retrieve_nearest(
    query: &FeatureRecord,
    candidates: &[FeatureRecord],
    kind: RecordKind,
) -> Result<Vec<Ranked>> {
    if candidates.is_empty() {
        return Err(MsnetError::Empty("no retrieval candidates".into()));
    }
    if let Some(r) = std::iter::once(query)
        .chain(candidates)
        .find(|r| r.kind != kind)
    {
        return Err(MsnetError::KindMismatch {
            expected: kind.as_str().into(),
            got: r.kind.as_str().into(),
        });
    }
    let mut ranked: Vec<Ranked> = candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            if c.vector.len() != query.vector.len() {
                return Err(MsnetError::Shape(format!(
                    "feature length {} vs query {}",
                    c.vector.len(),
                    query.vector.len()
                )));
            }
            Ok(Ranked {
                index,
                distance: euclidean(&query.vector, &c.vector),
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|x, y| {
        let (a, b) = (&candidates[x.index], &candidates[y.index]);
        x.distance
            .total_cmp(&y.distance)
            .then_with(|| a.clip_id.cmp(&b.clip_id))
            .then(a.frame_a.cmp(&b.frame_a))
            .then(a.frame_b.cmp(&b.frame_b))
    });
    Ok(ranked)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    Motion,
    Content,
}

impl std::str::FromStr for LabelField {
    type Err = MsnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" | "motion_label" => Ok(LabelField::Motion),
            "content" | "content_label" => Ok(LabelField::Content),
            _ => Err(MsnetError::InvalidConfig(format!(
                "label field must be motion or content, got {s:?}"
            ))),
        }
    }
}

/// Mean silhouette coefficient of vectors under labels, with Euclidean distance.
/// Members of singleton labels score 0, as does any point with `a = b`.
pub fn silhouette(points: &[&[f32]], labels: &[&str]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(MsnetError::Shape("one label per point required".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(*l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(MsnetError::InvalidDataset(format!(
            "silhouette needs at least 2 labels, got {}",
            groups.len()
        )));
    }
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(points[i], points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = &groups[labels[i]];
        if own.len() < 2 {
            continue;
        }
        let mean_to = |members: &[usize]| members.iter().map(|&j| dist[i * n + j]).sum::<f64>();
        let a = mean_to(own) / (own.len() - 1) as f64;
        let b = groups
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, m)| mean_to(m) / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Silhouette of feature records under one of their label fields.
pub fn silhouette_probe(records: &[FeatureRecord], field: LabelField) -> Result<f64> {
    let points: Vec<&[f32]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let labels: Vec<&str> = records
        .iter()
        .map(|r| match field {
            LabelField::Motion => r.motion_label.as_str(),
            LabelField::Content => r.content_label.as_str(),
        })
        .collect();
    silhouette(&points, &labels)
}

#[cfg(test)]
mod tests;
