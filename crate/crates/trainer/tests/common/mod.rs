//! Small configurations shared by the trainer tests.

#![allow(dead_code)]

use dcrnet::data::SynthConfig;
use dcrnet_trainer::{DataSource, RunConfig};

/// 32×32 images, narrow stages and a handful of samples: seconds per epoch.
pub fn tiny(count: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.net.input_size = (32, 32);
    cfg.net.stage_channels = [4, 8, 16, 32];
    cfg.net.memory_capacity = 6;
    cfg.data = DataSource::Synth(SynthConfig { count, size: (32, 32), seed: 3, ..SynthConfig::default() });
    cfg.split = (0.5, 0.25, 0.25);
    cfg.epochs = epochs;
    cfg.weight_kernel = 5;
    cfg
}
