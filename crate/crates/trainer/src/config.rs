//! Run configuration and its plain-text `key=value` file format.
//!
//! Lines are `key = value`; `#` starts a comment. Keys are dotted, e.g.
//! `net.stage_channels = 16,32,64,128`.

use std::fmt::Write as _;
use std::path::PathBuf;

use dcrnet::data::SynthConfig;
use dcrnet::losses::DEFAULT_WEIGHT_KERNEL;
use dcrnet::network::{NetworkConfig, Variant};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth(SynthConfig),
    /// Directory with `images/`, `masks/` and a manifest.
    Dir(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub data: DataSource,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub split_seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds network init, batch order and augmentation.
    pub seed: u64,
    pub augment: bool,
    pub weight_kernel: usize,
    /// Boundary-F tolerance in pixels; `None` uses the diagonal rule.
    pub boundary_tolerance: Option<f64>,
    pub ablate_seeds: usize,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let synth = SynthConfig { size: net.input_size, ..SynthConfig::default() };
        Self {
            net,
            data: DataSource::Synth(synth),
            split: (0.6, 0.2, 0.2),
            split_seed: 0,
            batch_size: 4,
            learning_rate: 1e-4,
            epochs: 150,
            seed: 0,
            augment: true,
            weight_kernel: DEFAULT_WEIGHT_KERNEL,
            boundary_tolerance: None,
            ablate_seeds: 3,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    /// 64×64 synthetic images, 200/50/50 split, 15 epochs.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.net.input_size = (64, 64);
        cfg.data = DataSource::Synth(SynthConfig { count: 300, size: (64, 64), ..SynthConfig::default() });
        cfg.split = (200.0 / 300.0, 50.0 / 300.0, 50.0 / 300.0);
        cfg.epochs = 15;
        cfg
    }

    pub fn synth(&self) -> Option<&SynthConfig> {
        match &self.data {
            DataSource::Synth(s) => Some(s),
            DataSource::Dir(_) => None,
        }
    }

    pub fn synth_mut(&mut self) -> Option<&mut SynthConfig> {
        match &mut self.data {
            DataSource::Synth(s) => Some(s),
            DataSource::Dir(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.weight_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("loss weight kernel {} must be odd", self.weight_kernel)));
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
            if s.size != self.net.input_size {
                return Err(Error::Config(format!(
                    "synthetic size {:?} differs from network input {:?}",
                    s.size, self.net.input_size
                )));
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {:?}", n + 1, raw)))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "net.input_size" => {
                self.net.input_size = size(key, v)?;
                if let Some(s) = self.synth_mut() {
                    s.size = size(key, v)?;
                }
            }
            "net.stage_channels" => {
                let c: Vec<usize> = list(key, v)?;
                self.net.stage_channels =
                    c.try_into().map_err(|_| Error::Config(format!("{key} needs exactly 4 values")))?;
            }
            "net.memory_capacity" => self.net.memory_capacity = num(key, v)?,
            "net.variant" => {
                self.net.variant = Variant::parse(v).ok_or_else(|| Error::Config(format!("unknown variant {v:?}")))?
            }
            "data.path" => self.data = DataSource::Dir(PathBuf::from(v)),
            "data.split" => {
                let f: Vec<f64> = list(key, v)?;
                match f[..] {
                    [a, b, c] => self.split = (a, b, c),
                    _ => return Err(Error::Config(format!("{key} needs 3 fractions"))),
                }
            }
            "data.split_seed" => self.split_seed = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "train.learning_rate" => self.learning_rate = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.augment" => self.augment = flag(key, v)?,
            "loss.weight_kernel" => self.weight_kernel = num(key, v)?,
            "eval.boundary_tolerance" => self.boundary_tolerance = if v == "auto" { None } else { Some(num(key, v)?) },
            "ablate.seeds" => self.ablate_seeds = num(key, v)?,
            k if k.starts_with("synth.") => {
                let input = self.net.input_size;
                if !matches!(self.data, DataSource::Synth(_)) {
                    self.data = DataSource::Synth(SynthConfig { size: input, ..SynthConfig::default() });
                }
                let s = self.synth_mut().expect("synthetic source");
                match &k["synth.".len()..] {
                    "count" => s.count = num(key, v)?,
                    "prototypes" => s.prototypes = num(key, v)?,
                    "blobs_per_image" => s.blobs_per_image = pair(key, v)?,
                    "scale_range" => s.scale_range = pair(key, v)?,
                    "blur_sigma" => s.blur_sigma = num(key, v)?,
                    "brightness_range" => s.brightness_range = pair(key, v)?,
                    "color_jitter" => s.color_jitter = num(key, v)?,
                    "shape_jitter" => s.shape_jitter = num(key, v)?,
                    "co_occurrence" => s.co_occurrence = flag(key, v)?,
                    "seed" => s.seed = num(key, v)?,
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Network settings in the same `key=value` form, as stored in checkpoints.
    pub fn net_text(net: &NetworkConfig) -> String {
        let c = net.stage_channels;
        let mut s = String::new();
        let _ = writeln!(s, "net.input_size={},{}", net.input_size.0, net.input_size.1);
        let _ = writeln!(s, "net.stage_channels={},{},{},{}", c[0], c[1], c[2], c[3]);
        let _ = writeln!(s, "net.memory_capacity={}", net.memory_capacity);
        let _ = writeln!(s, "net.variant={}", net.variant.name());
        let _ = writeln!(s, "net.seed={}", net.seed);
        s
    }

    /// Inverse of [`RunConfig::net_text`].
    pub fn parse_net_text(text: &str) -> Result<NetworkConfig> {
        let mut cfg = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("bad network line {line:?}")))?;
            if k == "net.seed" {
                cfg.net.seed = num(k, v)?;
            } else {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg.net)
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| num(key, p)).collect()
}

fn pair<T: std::str::FromStr + Copy>(key: &str, v: &str) -> Result<(T, T)> {
    match list(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("{key} needs 2 values"))),
    }
}

/// `64` or `64,48` (height, width).
fn size(key: &str, v: &str) -> Result<(usize, usize)> {
    match list(key, v)?[..] {
        [s] => Ok((s, s)),
        [h, w] => Ok((h, w)),
        _ => Err(Error::Config(format!("{key} needs 1 or 2 values"))),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}
