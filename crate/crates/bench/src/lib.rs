//! Shared fixtures for the benchmarks.

use msnet::config::{Preset, RunConfig};
use msnet::dataset::{generate_bouncing_sprites, VideoClip};
use msnet::{NetworkConfig, TrainConfig};

/// Desk-preset network and training settings with `clips` generated clips.
pub fn desk_fixture(clips: usize) -> (NetworkConfig, TrainConfig, Vec<VideoClip>) {
    let cfg = RunConfig::preset(Preset::Desk);
    let spec = cfg.data.sprite_spec(cfg.network.image_shape);
    let clips = generate_bouncing_sprites(&spec, clips, 0).expect("desk sprites");
    (cfg.network, cfg.train, clips)
}
