use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::{ClipEntry, ClipManifest, Frame, Split, VideoClip};
use crate::error::{MsnetError, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.png")
}

/// Byte `b` maps to `b / 255`.
pub(crate) fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_frame(path: &Path, f: &Frame) -> Result<()> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let d = f.data();
    match c {
        1 => {
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([to_byte(d[y as usize * w + x as usize])])
            });
            img.save(path)?;
        }
        3 => {
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                image::Rgb([
                    to_byte(d[i]),
                    to_byte(d[h * w + i]),
                    to_byte(d[2 * h * w + i]),
                ])
            });
            img.save(path)?;
        }
        _ => {
            return Err(MsnetError::Shape(format!(
                "frames must have 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

pub fn read_frame(path: &Path, channels: usize) -> Result<Frame> {
    if !path.is_file() {
        return Err(MsnetError::MissingFrameFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| MsnetError::CorruptFrame {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match channels {
        1 => img
            .to_luma8()
            .into_raw()
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect(),
        3 => {
            let raw = img.to_rgb8().into_raw();
            let mut planar = vec![0f32; 3 * h * w];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planar[c * h * w + i] = px[c] as f32 / 255.0;
                }
            }
            planar
        }
        c => {
            return Err(MsnetError::Shape(format!(
                "frames must have 1 or 3 channels, got {c}"
            )))
        }
    };
    Tensor::new(vec![channels, h, w], data)
}

/// Writes clips as `<dir>/<clip_id>/frame_%04d.png` plus `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    clips: &[VideoClip],
    splits: &[Split],
    seed: Option<u64>,
) -> Result<ClipManifest> {
    let first = clips
        .first()
        .ok_or_else(|| MsnetError::Empty("dataset without clips".into()))?;
    if splits.len() != clips.len() {
        return Err(MsnetError::InvalidDataset(format!(
            "{} clips but {} split assignments",
            clips.len(),
            splits.len()
        )));
    }
    let image_shape = first.image_shape();
    fs::create_dir_all(dir).map_err(|e| MsnetError::io(dir, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for (clip, split) in clips.iter().zip(splits) {
        if clip.image_shape() != image_shape {
            return Err(MsnetError::HeterogeneousShapes {
                clip_id: clip.clip_id.clone(),
                expected: image_shape,
                got: clip.image_shape(),
            });
        }
        let cdir = dir.join(&clip.clip_id);
        fs::create_dir_all(&cdir).map_err(|e| MsnetError::io(&cdir, e))?;
        for (i, f) in clip.frames.iter().enumerate() {
            write_frame(&cdir.join(frame_file(i)), f)?;
        }
        entries.push(ClipEntry {
            id: clip.clip_id.clone(),
            path: clip.clip_id.clone(),
            num_frames: clip.len(),
            motion_label: clip.motion_label.clone(),
            content_label: clip.content_label.clone(),
            split: *split,
        });
    }
    let manifest = ClipManifest {
        version: MANIFEST_VERSION,
        image_shape,
        seed,
        clips: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| MsnetError::io(&path, e))?;
    Ok(manifest)
}

/// A dataset directory whose clips are decoded on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: ClipManifest,
}

/// Parses and validates `<dir>/manifest.json` and checks every referenced frame exists.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(MsnetError::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| MsnetError::io(&path, e))?;
    let corrupt = |reason: String| MsnetError::CorruptManifest {
        path: path.clone(),
        reason,
    };
    let manifest: ClipManifest = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(corrupt(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let c = manifest.image_shape[0];
    if c != 1 && c != 3 {
        return Err(corrupt(format!(
            "image_shape channels must be 1 or 3, got {c}"
        )));
    }
    let mut seen = HashSet::new();
    for entry in &manifest.clips {
        if !seen.insert(entry.id.as_str()) {
            return Err(corrupt(format!("duplicate clip id {}", entry.id)));
        }
        let cdir = dir.join(&entry.path);
        for i in 0..entry.num_frames {
            let f = cdir.join(frame_file(i));
            if !f.is_file() {
                return Err(MsnetError::MissingFrameFile(f));
            }
        }
        let found = fs::read_dir(&cdir)
            .map_err(|e| MsnetError::io(&cdir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| {
                let n = e.file_name();
                let n = n.to_string_lossy();
                n.starts_with("frame_") && n.ends_with(".png")
            })
            .count();
        if found != entry.num_frames {
            return Err(MsnetError::FrameCountMismatch {
                clip_id: entry.id.clone(),
                expected: entry.num_frames,
                found,
            });
        }
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
    })
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ClipManifest {
        &self.manifest
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.manifest.image_shape
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        self.manifest.split_sizes()
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = (usize, &ClipEntry)> {
        self.manifest
            .clips
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Decodes clip `index` of the manifest.
    pub fn load_clip(&self, index: usize) -> Result<VideoClip> {
        let entry = self.manifest.clips.get(index).ok_or_else(|| {
            MsnetError::InvalidDataset(format!("clip index {index} out of range"))
        })?;
        let shape = self.manifest.image_shape;
        let cdir = self.root.join(&entry.path);
        let mut frames = Vec::with_capacity(entry.num_frames);
        for i in 0..entry.num_frames {
            let f = read_frame(&cdir.join(frame_file(i)), shape[0])?;
            if f.shape() != shape {
                return Err(MsnetError::HeterogeneousShapes {
                    clip_id: entry.id.clone(),
                    expected: shape,
                    got: [f.shape()[0], f.shape()[1], f.shape()[2]],
                });
            }
            frames.push(f);
        }
        VideoClip::new(
            entry.id.clone(),
            frames,
            entry.motion_label.clone(),
            entry.content_label.clone(),
        )
    }

    /// Decodes every clip of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<VideoClip>> {
        self.entries(split)
            .map(|(i, _)| self.load_clip(i))
            .collect()
    }
}
