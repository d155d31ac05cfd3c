//! Run configuration as `key=value` lines.
//!
//! Every key has a default; a file only lists overrides. Unknown keys,
//! repeated keys and keys without a value are rejected with the key named.
//! Blank lines and lines starting with `#` are ignored.

use std::path::Path;

use crate::data::AugmentSpec;
use crate::depth::{DepthMode, DepthRange};
use crate::diffusion::{LossMode, Schedule, ScheduleKind};
use crate::geometry::FrequencySpacing;
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Supervised local tokens per scene and step.
    pub local_tokens: usize,
    /// Global tokens kept per scene and step.
    pub global_tokens: usize,
    pub augment: bool,
    pub augmentation: AugmentSpec,
}

impl DataConfig {
    /// The augmentation to apply, if enabled.
    pub fn augment_spec(&self) -> Option<AugmentSpec> {
        self.augment.then_some(self.augmentation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub ema_beta: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub cap: f64,
    pub scale_align: bool,
    /// Fraction of global tokens kept at inference.
    pub global_keep: f64,
    pub raw_weights: bool,
    /// Local tokens per denoiser call at inference; 0 denoises every pixel
    /// in one call.
    pub chunk: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub loss: LossMode,
    pub depth: DepthRange,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            schedule: Schedule::default(),
            loss: LossMode::Sample,
            depth: DepthRange::default(),
            data: DataConfig {
                local_tokens: 256,
                global_tokens: 96,
                augment: false,
                augmentation: AugmentSpec {
                    scale: (0.75, 1.25),
                    crop: None,
                    flip_prob: 0.5,
                    brightness: 0.1,
                    contrast: 0.1,
                },
            },
            train: TrainConfig {
                steps: 5000,
                batch: 2,
                lr: 6e-4,
                warmup: 250,
                beta1: 0.9,
                beta2: 0.99,
                weight_decay: 1e-2,
                ema_beta: 0.999,
                checkpoint_every: 1000,
                seed: 0,
            },
            eval: EvalConfig {
                samples: 10,
                cap: 200.0,
                scale_align: false,
                global_keep: 1.0,
                raw_weights: false,
                chunk: 256,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn depth_mode_text(mode: DepthMode) -> String {
    match mode {
        DepthMode::Linear => "linear".into(),
        DepthMode::LogBase(b) if b == std::f64::consts::E => "loge".into(),
        DepthMode::LogBase(b) => format!("log{b}"),
    }
}

fn parse_depth_mode(key: &str, value: &str) -> Result<DepthMode> {
    match value {
        "linear" => Ok(DepthMode::Linear),
        "loge" => Ok(DepthMode::LogBase(std::f64::consts::E)),
        _ => match value.strip_prefix("log") {
            Some(b) => Ok(DepthMode::LogBase(parse(key, b)?)),
            None => Err(Error::Config(format!("{key}: expected linear, loge or log<base>, got {value:?}"))),
        },
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let aug = self.data.augmentation;
        let crop = aug.crop.map_or("none".to_string(), |(w, h)| format!("{w}x{h}"));
        let b = |v: bool| v.to_string();
        vec![
            ("model.latent_count", m.latent_count.to_string()),
            ("model.latent_width", m.latent_width.to_string()),
            ("model.token_width", m.token_width.to_string()),
            ("model.blocks", m.blocks.to_string()),
            ("model.block_depth", m.block_depth.to_string()),
            ("model.read_write_heads", m.read_write_heads.to_string()),
            ("model.latent_heads", m.latent_heads.to_string()),
            ("model.ff_mult", m.ff_mult.to_string()),
            ("model.local_kernel", m.local_kernel.to_string()),
            ("model.local_channels", m.local_channels.to_string()),
            ("model.global_scales", m.global_scales.to_string()),
            ("model.global_channels", m.global_channels.to_string()),
            ("model.global_downsample", m.global_downsample.to_string()),
            ("model.bands_origin", m.encoding.bands_origin.to_string()),
            ("model.bands_ray", m.encoding.bands_ray.to_string()),
            ("model.max_frequency", m.encoding.max_frequency.to_string()),
            (
                "model.frequency_spacing",
                match m.encoding.spacing {
                    FrequencySpacing::Linear => "linear".into(),
                    FrequencySpacing::Log => "log".into(),
                },
            ),
            ("model.normalize_rays", b(m.encoding.normalize_rays)),
            ("model.local_image", b(m.local_image)),
            ("model.local_geometry", b(m.local_geometry)),
            ("model.global", b(m.global)),
            ("model.self_condition", b(m.self_condition)),
            (
                "diffusion.schedule",
                match self.schedule.kind {
                    ScheduleKind::Cosine => "cosine".into(),
                    ScheduleKind::Linear => "linear".into(),
                },
            ),
            ("diffusion.train_steps", self.schedule.train_steps.to_string()),
            ("diffusion.eval_steps", self.schedule.eval_steps.to_string()),
            (
                "diffusion.loss",
                match self.loss {
                    LossMode::Epsilon => "epsilon".into(),
                    LossMode::ScaledNoise => "scaled".into(),
                    LossMode::Sample => "sample".into(),
                },
            ),
            ("depth.near", self.depth.near.to_string()),
            ("depth.far", self.depth.far.to_string()),
            ("depth.mode", depth_mode_text(self.depth.mode)),
            ("data.local_tokens", self.data.local_tokens.to_string()),
            ("data.global_tokens", self.data.global_tokens.to_string()),
            ("data.augment", b(self.data.augment)),
            ("data.scale_lo", aug.scale.0.to_string()),
            ("data.scale_hi", aug.scale.1.to_string()),
            ("data.crop", crop),
            ("data.flip_prob", aug.flip_prob.to_string()),
            ("data.brightness", aug.brightness.to_string()),
            ("data.contrast", aug.contrast.to_string()),
            ("train.steps", self.train.steps.to_string()),
            ("train.batch", self.train.batch.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.warmup", self.train.warmup.to_string()),
            ("train.beta1", self.train.beta1.to_string()),
            ("train.beta2", self.train.beta2.to_string()),
            ("train.weight_decay", self.train.weight_decay.to_string()),
            ("train.ema_beta", self.train.ema_beta.to_string()),
            ("train.checkpoint_every", self.train.checkpoint_every.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("eval.samples", self.eval.samples.to_string()),
            ("eval.cap", self.eval.cap.to_string()),
            ("eval.scale_align", b(self.eval.scale_align)),
            ("eval.global_keep", self.eval.global_keep.to_string()),
            ("eval.raw_weights", b(self.eval.raw_weights)),
            ("eval.chunk", self.eval.chunk.to_string()),
        ]
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::Config(format!("{key}: missing value")));
        }
        let m = &mut self.model;
        let aug = &mut self.data.augmentation;
        match key {
            "model.latent_count" => m.latent_count = parse(key, value)?,
            "model.latent_width" => m.latent_width = parse(key, value)?,
            "model.token_width" => m.token_width = parse(key, value)?,
            "model.blocks" => m.blocks = parse(key, value)?,
            "model.block_depth" => m.block_depth = parse(key, value)?,
            "model.read_write_heads" => m.read_write_heads = parse(key, value)?,
            "model.latent_heads" => m.latent_heads = parse(key, value)?,
            "model.ff_mult" => m.ff_mult = parse(key, value)?,
            "model.local_kernel" => m.local_kernel = parse(key, value)?,
            "model.local_channels" => m.local_channels = parse(key, value)?,
            "model.global_scales" => m.global_scales = parse(key, value)?,
            "model.global_channels" => m.global_channels = parse(key, value)?,
            "model.global_downsample" => m.global_downsample = parse(key, value)?,
            "model.bands_origin" => m.encoding.bands_origin = parse(key, value)?,
            "model.bands_ray" => m.encoding.bands_ray = parse(key, value)?,
            "model.max_frequency" => m.encoding.max_frequency = parse(key, value)?,
            "model.frequency_spacing" => {
                m.encoding.spacing = match value {
                    "linear" => FrequencySpacing::Linear,
                    "log" => FrequencySpacing::Log,
                    _ => return Err(Error::Config(format!("{key}: expected linear or log, got {value:?}"))),
                }
            }
            "model.normalize_rays" => m.encoding.normalize_rays = parse_bool(key, value)?,
            "model.local_image" => m.local_image = parse_bool(key, value)?,
            "model.local_geometry" => m.local_geometry = parse_bool(key, value)?,
            "model.global" => m.global = parse_bool(key, value)?,
            "model.self_condition" => m.self_condition = parse_bool(key, value)?,
            "diffusion.schedule" => {
                self.schedule.kind = match value {
                    "cosine" => ScheduleKind::Cosine,
                    "linear" => ScheduleKind::Linear,
                    _ => return Err(Error::Config(format!("{key}: expected cosine or linear, got {value:?}"))),
                }
            }
            "diffusion.train_steps" => self.schedule.train_steps = parse(key, value)?,
            "diffusion.eval_steps" => self.schedule.eval_steps = parse(key, value)?,
            "diffusion.loss" => {
                self.loss = match value {
                    "epsilon" => LossMode::Epsilon,
                    "scaled" => LossMode::ScaledNoise,
                    "sample" => LossMode::Sample,
                    _ => {
                        return Err(Error::Config(format!("{key}: expected epsilon, scaled or sample, got {value:?}")))
                    }
                }
            }
            "depth.near" => self.depth.near = parse(key, value)?,
            "depth.far" => self.depth.far = parse(key, value)?,
            "depth.mode" => self.depth.mode = parse_depth_mode(key, value)?,
            "data.local_tokens" => self.data.local_tokens = parse(key, value)?,
            "data.global_tokens" => self.data.global_tokens = parse(key, value)?,
            "data.augment" => self.data.augment = parse_bool(key, value)?,
            "data.scale_lo" => aug.scale.0 = parse(key, value)?,
            "data.scale_hi" => aug.scale.1 = parse(key, value)?,
            "data.crop" => {
                aug.crop = match value {
                    "none" => None,
                    _ => {
                        let (w, h) = value
                            .split_once('x')
                            .ok_or_else(|| Error::Config(format!("{key}: expected <w>x<h> or none, got {value:?}")))?;
                        Some((parse(key, w)?, parse(key, h)?))
                    }
                }
            }
            "data.flip_prob" => aug.flip_prob = parse(key, value)?,
            "data.brightness" => aug.brightness = parse(key, value)?,
            "data.contrast" => aug.contrast = parse(key, value)?,
            "train.steps" => self.train.steps = parse(key, value)?,
            "train.batch" => self.train.batch = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.warmup" => self.train.warmup = parse(key, value)?,
            "train.beta1" => self.train.beta1 = parse(key, value)?,
            "train.beta2" => self.train.beta2 = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.ema_beta" => self.train.ema_beta = parse(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "eval.samples" => self.eval.samples = parse(key, value)?,
            "eval.cap" => self.eval.cap = parse(key, value)?,
            "eval.scale_align" => self.eval.scale_align = parse_bool(key, value)?,
            "eval.global_keep" => self.eval.global_keep = parse(key, value)?,
            "eval.raw_weights" => self.eval.raw_weights = parse_bool(key, value)?,
            "eval.chunk" => self.eval.chunk = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.depth.validate()?;
        self.data.augmentation.validate()?;
        let t = &self.train;
        let checks = [
            ("data.local_tokens", self.data.local_tokens >= 1),
            ("train.steps", t.steps >= 1),
            ("train.batch", t.batch >= 1),
            ("train.lr", t.lr >= 0.0 && t.lr.is_finite()),
            ("train.warmup", t.warmup < t.steps),
            ("train.beta1", (0.0..=1.0).contains(&t.beta1)),
            ("train.beta2", (0.0..=1.0).contains(&t.beta2)),
            ("train.weight_decay", t.weight_decay >= 0.0 && t.weight_decay.is_finite()),
            ("train.ema_beta", (0.0..1.0).contains(&t.ema_beta)),
            ("eval.samples", self.eval.samples >= 1),
            ("eval.cap", self.eval.cap > 0.0),
            ("eval.global_keep", self.eval.global_keep > 0.0 && self.eval.global_keep <= 1.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((key, _)) => Err(Error::Config(format!("{key}: invalid value {}", self.value_of(key)))),
            None => Ok(()),
        }
    }

    fn value_of(&self, key: &str) -> String {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v).unwrap_or_default()
    }

    /// Defaults overridden by the lines of `text`, validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{key}: set more than once")));
            }
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// All keys as `key=value` lines.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_and_roundtrip() {
        let text = "# toy\nmodel.blocks = 3\ndepth.mode=loge\ndata.augment=true\ndata.crop=48x32\ntrain.seed=9\nmodel.global=false\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.model.blocks, 3);
        assert_eq!(cfg.depth.mode, DepthMode::LogBase(std::f64::consts::E));
        assert_eq!(cfg.data.augment_spec().unwrap().crop, Some((48, 32)));
        assert_eq!(cfg.train.seed, 9);
        assert!(!cfg.model.global);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let log2 = RunConfig::from_text("depth.mode=log2").unwrap();
        assert_eq!(log2.depth.mode, DepthMode::LogBase(2.0));
        assert_eq!(RunConfig::from_text(&log2.to_text()).unwrap(), log2);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("model.bloks=2", "model.bloks"),
            ("train.lr=", "train.lr"),
            ("train.steps=ten", "train.steps"),
            ("train.seed=1\ntrain.seed=2", "train.seed"),
            ("train.warmup=6000", "train.warmup"),
            ("eval.samples=0", "eval.samples"),
            ("model.latent_heads=3", "model.latent_width"),
        ];
        for (text, key) in cases {
            let err = RunConfig::from_text(text).unwrap_err().to_string();
            assert!(err.contains(key), "{text:?} gave {err}");
        }
        assert!(RunConfig::from_text("just words").is_err());
    }
}
