use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, VideoClip};
use crate::error::{MsnetError, Result};
use crate::tensor::Tensor;

/// Binary bitmap drawn at full intensity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glyph {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

const DIGITS_3X5: [[&str; 5]; 10] = [
    ["###", "#.#", "#.#", "#.#", "###"],
    [".#.", "##.", ".#.", ".#.", "###"],
    ["###", "..#", "###", "#..", "###"],
    ["###", "..#", ".##", "..#", "###"],
    ["#.#", "#.#", "###", "..#", "..#"],
    ["###", "#..", "###", "..#", "###"],
    ["###", "#..", "###", "#.#", "###"],
    ["###", "..#", ".#.", ".#.", ".#."],
    ["###", "#.#", "###", "#.#", "###"],
    ["###", "#.#", "###", "..#", "###"],
];

impl Glyph {
    pub fn from_rows(rows: &[&str]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        Glyph {
            rows: rows.len(),
            cols,
            bits,
        }
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn scaled(&self, factor: usize) -> Self {
        let (rows, cols) = (self.rows * factor, self.cols * factor);
        let bits = (0..rows * cols)
            .map(|i| self.bits[(i / cols / factor) * self.cols + (i % cols) / factor])
            .collect();
        Glyph { rows, cols, bits }
    }

    /// The ten digits of a 3x5 pixel font enlarged by `scale`.
    pub fn digits(scale: usize) -> Vec<Glyph> {
        DIGITS_3X5
            .iter()
            .map(|d| Glyph::from_rows(d).scaled(scale))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    /// `(H, W)` in pixels.
    pub canvas: (usize, usize),
    pub glyphs: Vec<Glyph>,
    pub sprites_per_clip: usize,
    /// Admissible per-axis speeds in pixels/frame. Each clip draws one speed; every
    /// sprite in it moves with that speed on both axes, signs drawn per sprite and axis.
    pub speed_set: Vec<u32>,
    pub frames_per_clip: usize,
}

impl SpriteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MsnetError::InvalidSpriteSpec(m));
        let (h, w) = self.canvas;
        if self.glyphs.is_empty() {
            return bad("no glyphs".into());
        }
        for (i, g) in self.glyphs.iter().enumerate() {
            if g.rows > h || g.cols > w {
                return bad(format!(
                    "glyph {i} is {}x{}, larger than the {h}x{w} canvas",
                    g.rows, g.cols
                ));
            }
            if g.bits.len() != g.rows * g.cols {
                return bad(format!("glyph {i} has malformed bitmap"));
            }
        }
        if self.sprites_per_clip == 0 {
            return bad("sprites_per_clip must be >= 1".into());
        }
        if self.speed_set.is_empty() || self.speed_set.contains(&0) {
            return bad("speed_set must be non-empty and exclude 0".into());
        }
        if self.frames_per_clip < 3 {
            return bad(format!(
                "frames_per_clip must be >= 3, got {}",
                self.frames_per_clip
            ));
        }
        Ok(())
    }
}

/// One step of reflected motion inside `[lo, hi]`.
///
/// The position advances by `v`; a position leaving the interval is mirrored about the
/// violated bound and the velocity negated.
pub fn reflect_step(p: i64, v: i64, lo: i64, hi: i64) -> (i64, i64) {
    if hi <= lo {
        return (lo, v);
    }
    let (mut p, mut v) = (p + v, v);
    loop {
        if p > hi {
            p = 2 * hi - p;
            v = -v;
        } else if p < lo {
            p = 2 * lo - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

struct Sprite {
    glyph: usize,
    pos: (i64, i64),
    vel: (i64, i64),
}

/// Deterministic bouncing-sprite clips. Clip `i` is named `clip_%05d`.
pub fn generate_bouncing_sprites(
    spec: &SpriteSpec,
    num_clips: usize,
    seed: u64,
) -> Result<Vec<VideoClip>> {
    spec.validate()?;
    if num_clips == 0 {
        return Err(MsnetError::InvalidConfig("num_clips must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_clips)
        .map(|i| generate_clip(spec, format!("clip_{i:05}"), &mut rng))
        .collect()
}

fn init_sprites(spec: &SpriteSpec, rng: &mut ChaCha8Rng) -> (i64, Vec<Sprite>) {
    let (h, w) = spec.canvas;
    let speed = spec.speed_set[rng.random_range(0..spec.speed_set.len())] as i64;
    let sprites = (0..spec.sprites_per_clip)
        .map(|_| {
            let glyph = rng.random_range(0..spec.glyphs.len());
            let g = &spec.glyphs[glyph];
            let y = rng.random_range(0..=(h - g.rows)) as i64;
            let x = rng.random_range(0..=(w - g.cols)) as i64;
            let sy = if rng.random_bool(0.5) { 1 } else { -1 };
            let sx = if rng.random_bool(0.5) { 1 } else { -1 };
            Sprite {
                glyph,
                pos: (y, x),
                vel: (sy * speed, sx * speed),
            }
        })
        .collect();
    (speed, sprites)
}

fn advance(spec: &SpriteSpec, sprites: &mut [Sprite]) {
    let (h, w) = spec.canvas;
    for s in sprites {
        let g = &spec.glyphs[s.glyph];
        let (py, vy) = reflect_step(s.pos.0, s.vel.0, 0, (h - g.rows) as i64);
        let (px, vx) = reflect_step(s.pos.1, s.vel.1, 0, (w - g.cols) as i64);
        s.pos = (py, px);
        s.vel = (vy, vx);
    }
}

fn generate_clip(spec: &SpriteSpec, id: String, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    let (speed, mut sprites) = init_sprites(spec, rng);
    let mut frames = Vec::with_capacity(spec.frames_per_clip);
    for _ in 0..spec.frames_per_clip {
        frames.push(render(spec, &sprites));
        advance(spec, &mut sprites);
    }
    let mut ids: Vec<usize> = sprites.iter().map(|s| s.glyph).collect();
    ids.sort_unstable();
    let content = ids
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("-");
    VideoClip::new(id, frames, Some(format!("speed{speed}")), Some(content))
}

fn render(spec: &SpriteSpec, sprites: &[Sprite]) -> Frame {
    let (h, w) = spec.canvas;
    let mut data = vec![0f32; h * w];
    for s in sprites {
        let g = &spec.glyphs[s.glyph];
        let (y0, x0) = (s.pos.0 as usize, s.pos.1 as usize);
        for r in 0..g.rows {
            for c in 0..g.cols {
                if g.bits[r * g.cols + c] {
                    // Composite by per-pixel maximum.
                    let px = &mut data[(y0 + r) * w + x0 + c];
                    *px = px.max(1.0);
                }
            }
        }
    }
    Tensor::new(vec![1, h, w], data).expect("canvas-sized buffer")
}

/// Glyph index and `(y, x)` per frame of one sprite.
pub type Track = (usize, Vec<(i64, i64)>);

/// Sprite trajectories per clip, without rendering.
pub fn simulate_positions(spec: &SpriteSpec, num_clips: usize, seed: u64) -> Vec<Vec<Track>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_clips)
        .map(|_| {
            let (_, mut sprites) = init_sprites(spec, &mut rng);
            let mut tracks: Vec<Track> = sprites.iter().map(|s| (s.glyph, Vec::new())).collect();
            for _ in 0..spec.frames_per_clip {
                for (s, t) in sprites.iter().zip(&mut tracks) {
                    t.1.push(s.pos);
                }
                advance(spec, &mut sprites);
            }
            tracks
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(canvas: usize, sprites: usize, frames: usize) -> SpriteSpec {
        SpriteSpec {
            canvas: (canvas, canvas),
            glyphs: Glyph::digits(2),
            sprites_per_clip: sprites,
            speed_set: vec![1, 3],
            frames_per_clip: frames,
        }
    }

    #[test]
    fn reflection_hand_simulated() {
        assert_eq!(reflect_step(50, 3, 0, 52), (51, -3));
        assert_eq!(reflect_step(1, -3, 0, 52), (2, 3));
        assert_eq!(reflect_step(10, 3, 0, 52), (13, 3));
        assert_eq!(reflect_step(52, 0, 0, 52), (52, 0));
    }

    #[test]
    fn sixty_four_pixel_clips() {
        let clips = generate_bouncing_sprites(&spec(64, 2, 20), 3, 11).unwrap();
        assert_eq!(clips.len(), 3);
        for c in &clips {
            assert_eq!(c.len(), 20);
            for f in &c.frames {
                assert_eq!(f.shape(), &[1, 64, 64]);
                assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert!(c.motion_label.as_deref().unwrap().starts_with("speed"));
            assert_eq!(c.content_label.as_deref().unwrap().split('-').count(), 2);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let s = spec(32, 2, 10);
        assert_eq!(
            generate_bouncing_sprites(&s, 4, 5).unwrap(),
            generate_bouncing_sprites(&s, 4, 5).unwrap()
        );
        assert_ne!(
            generate_bouncing_sprites(&s, 4, 5).unwrap(),
            generate_bouncing_sprites(&s, 4, 6).unwrap()
        );
    }

    #[test]
    fn sprites_stay_inside_canvas() {
        let s = spec(32, 2, 40);
        for clip in simulate_positions(&s, 20, 3) {
            for (glyph, track) in clip {
                let g = &s.glyphs[glyph];
                for (y, x) in track {
                    assert!((0..=(32 - g.rows) as i64).contains(&y));
                    assert!((0..=(32 - g.cols) as i64).contains(&x));
                }
            }
        }
    }

    #[test]
    fn simulation_matches_rendered_frames() {
        let s = spec(32, 1, 12);
        let clips = generate_bouncing_sprites(&s, 5, 9).unwrap();
        let tracks = simulate_positions(&s, 5, 9);
        for (clip, track) in clips.iter().zip(&tracks) {
            let (glyph, pos) = &track[0];
            let g = &s.glyphs[*glyph];
            for (f, (y, x)) in clip.frames.iter().zip(pos) {
                // Top-left lit pixel of the glyph must match the simulated position.
                let first = g.bits.iter().position(|b| *b).unwrap();
                let (r, c) = (first / g.cols, first % g.cols);
                let idx = (*y as usize + r) * 32 + *x as usize + c;
                assert_eq!(f.data()[idx], 1.0);
            }
        }
    }

    #[test]
    fn oversized_glyph_rejected() {
        let mut s = spec(8, 1, 5);
        s.glyphs = Glyph::digits(3);
        let err = generate_bouncing_sprites(&s, 1, 0).unwrap_err();
        assert!(matches!(err, MsnetError::InvalidSpriteSpec(_)), "{err}");
        assert!(err.to_string().contains("larger than"));
    }

    #[test]
    fn zero_speed_rejected() {
        let mut s = spec(32, 1, 5);
        s.speed_set = vec![0];
        assert!(generate_bouncing_sprites(&s, 1, 0).is_err());
    }
}
