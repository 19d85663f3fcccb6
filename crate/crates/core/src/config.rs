//! Flat `key=value` run configuration with dotted namespaces.
//!
//! Lines are `key = value`; `#` starts a comment. A `preset` key (default,
//! desk, kitti) is applied first wherever it appears; every other key
//! overrides the preset in file order. [`RunConfig::to_text`] emits every key,
//! so its output reconstructs the run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetKind, SynthParams};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::model::ModelConfig;
use crate::optim::{OptimConfig, OptimizerKind};
use crate::profiler::BenchmarkProtocol;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Dataset root; `None` until given by file or command line.
    pub root: Option<PathBuf>,
    pub synth: SynthParams,
    /// Pairs written per split by `synth`.
    pub synth_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub device: String,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchmarkProtocol,
    pub bench_hw: (usize, usize),
    pub profile_hw: (usize, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "default".into(),
            seed: 0,
            device: "cpu".into(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig {
                kind: DatasetKind::SceneFlow,
                root: None,
                synth: SynthParams {
                    height: 256,
                    width: 512,
                    num_shapes: 6,
                    d_range: (1, 95),
                },
                synth_count: 20,
            },
            bench: BenchmarkProtocol::default(),
            bench_hw: (512, 960),
            profile_hw: (544, 960),
        }
    }
}

pub const PRESETS: [&str; 3] = ["default", "desk", "kitti"];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("invalid value '{}' for {}", v, key)))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!(
            "invalid value '{}' for {} (expected on/off)",
            v, key
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_array<T: FromStr + Copy + Default, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let items: Vec<T> = parse_list(key, v)?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("{} needs {} comma-separated values", key, N)))
}

fn parse_hw(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once('x')
        .ok_or_else(|| Error::config(format!("{} must look like HxW, got '{}'", key, v)))?;
    Ok((parse(key, h.trim())?, parse(key, w.trim())?))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        match name {
            "default" => {}
            "desk" => {
                c.model = ModelConfig::desk();
                c.train = TrainConfig {
                    iterations: 2000,
                    batch_size: 4,
                    lr: 1e-3,
                    lr_milestones: None,
                    lr_gamma: 0.5,
                    crop: (64, 128),
                    val_every: 250,
                };
                c.data.kind = DatasetKind::Synthetic;
                c.data.synth = SynthParams {
                    height: 64,
                    width: 128,
                    num_shapes: 6,
                    d_range: (1, 31),
                };
                c.bench_hw = (128, 256);
                c.profile_hw = (64, 128);
            }
            "kitti" => {
                c.train = TrainConfig {
                    iterations: 11_000,
                    batch_size: 16,
                    lr: 1e-3,
                    lr_milestones: Some(vec![7_000]),
                    lr_gamma: 0.1,
                    crop: (256, 512),
                    val_every: 1_000,
                };
                c.data.kind = DatasetKind::Kitti;
                c.profile_hw = (384, 1248);
            }
            other => {
                return Err(Error::config(format!(
                    "unknown preset '{}' (expected {})",
                    other,
                    PRESETS.join(", ")
                )))
            }
        }
        c.preset = name.to_string();
        Ok(c)
    }

    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let m = &mut self.model;
        match key {
            "preset" => *self = RunConfig::preset(v)?,
            "seed" => self.seed = parse(key, v)?,
            "device" => self.device = v.to_string(),
            "backbone.shallow_channels" => m.backbone.shallow_channels = parse_array(key, v)?,
            "backbone.deep_channels" => m.backbone.deep_channels = parse_array(key, v)?,
            "backbone.ge_expansion" => m.backbone.ge_expansion = parse(key, v)?,
            "backbone.out_channels" => m.backbone.out_channels = parse(key, v)?,
            "cost_volume.max_disparity" => m.cost_volume.max_disparity = parse(key, v)?,
            "cost_volume.num_groups" => m.cost_volume.num_groups = parse(key, v)?,
            "cost_volume.concat_channels" => m.cost_volume.concat_channels = parse(key, v)?,
            "cost_volume.num_subgroups" => m.cost_volume.num_subgroups = parse(key, v)?,
            "cost_volume.disp_stride" => m.cost_volume.disp_stride = parse(key, v)?,
            "cost_volume.attention" => m.cost_volume.attention = parse_bool(key, v)?,
            "cost_volume.attention_widths" => m.cost_volume.attention_widths = parse_array(key, v)?,
            "head.base_width" => m.head.base_width = parse(key, v)?,
            "head.separable" => m.head.separable = parse_bool(key, v)?,
            "loss.kind" => self.loss.kind = v.parse::<LossKind>()?,
            "loss.epsilon" => self.loss.epsilon = parse(key, v)?,
            "loss.output_weights" => self.loss.output_weights = parse_array(key, v)?,
            "optim.kind" => self.optim.kind = v.parse::<OptimizerKind>()?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "optim.momentum" => self.optim.momentum = parse(key, v)?,
            "train.iterations" => self.train.iterations = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.lr_milestones" => {
                self.train.lr_milestones = if v == "auto" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                }
            }
            "train.lr_gamma" => self.train.lr_gamma = parse(key, v)?,
            "train.crop" => self.train.crop = parse_hw(key, v)?,
            "train.val_every" => self.train.val_every = parse(key, v)?,
            "data.kind" => self.data.kind = v.parse()?,
            "data.root" => self.data.root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "synth.size" => (self.data.synth.height, self.data.synth.width) = parse_hw(key, v)?,
            "synth.num_shapes" => self.data.synth.num_shapes = parse(key, v)?,
            "synth.d_min" => self.data.synth.d_range.0 = parse(key, v)?,
            "synth.d_max" => self.data.synth.d_range.1 = parse(key, v)?,
            "synth.count" => self.data.synth_count = parse(key, v)?,
            "bench.warmup" => self.bench.warmup = parse(key, v)?,
            "bench.timed" => self.bench.timed = parse(key, v)?,
            "bench.runs" => self.bench.runs = parse(key, v)?,
            "bench.size" => self.bench_hw = parse_hw(key, v)?,
            "profile.size" => self.profile_hw = parse_hw(key, v)?,
            _ => {
                return Err(Error::config(format!(
                    "unknown configuration key '{}'",
                    key
                )))
            }
        }
        Ok(())
    }

    /// Every key with its current value, in emission order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let hw = |(h, w): (usize, usize)| format!("{}x{}", h, w);
        let mut v = vec![
            ("preset", self.preset.clone()),
            ("seed", self.seed.to_string()),
            ("device", self.device.clone()),
        ];
        v.extend(model_pairs(m));
        v.extend([
            ("loss.kind", self.loss.kind.to_string()),
            ("loss.epsilon", self.loss.epsilon.to_string()),
            ("loss.output_weights", join(&self.loss.output_weights)),
            ("optim.kind", self.optim.kind.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("optim.weight_decay", self.optim.weight_decay.to_string()),
            ("optim.momentum", self.optim.momentum.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            (
                "train.lr_milestones",
                t.lr_milestones
                    .as_ref()
                    .map_or("auto".to_string(), |m| join(m)),
            ),
            ("train.lr_gamma", t.lr_gamma.to_string()),
            ("train.crop", hw(t.crop)),
            ("train.val_every", t.val_every.to_string()),
            ("data.kind", self.data.kind.to_string()),
            (
                "data.root",
                self.data
                    .root
                    .as_ref()
                    .map_or(String::new(), |p| p.display().to_string()),
            ),
            (
                "synth.size",
                hw((self.data.synth.height, self.data.synth.width)),
            ),
            ("synth.num_shapes", self.data.synth.num_shapes.to_string()),
            ("synth.d_min", self.data.synth.d_range.0.to_string()),
            ("synth.d_max", self.data.synth.d_range.1.to_string()),
            ("synth.count", self.data.synth_count.to_string()),
            ("bench.warmup", self.bench.warmup.to_string()),
            ("bench.timed", self.bench.timed.to_string()),
            ("bench.runs", self.bench.runs.to_string()),
            ("bench.size", hw(self.bench_hw)),
            ("profile.size", hw(self.profile_hw)),
        ]);
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{}={}", k, v);
        }
        s
    }

    /// Parse file text, then apply `overrides` (`key=value` each).
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut assignments = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected key=value, got '{}'",
                    n + 1,
                    line
                ))
            })?;
            assignments.push((k.trim().to_string(), v.trim().to_string()));
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{}' must be key=value", o)))?;
            assignments.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = assignments
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map_or("default", |(_, v)| v.as_str());
        let mut c = RunConfig::preset(preset)?;
        for (k, v) in assignments.iter().filter(|(k, _)| k != "preset") {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::io(format!("reading {}", p.display()), e))?,
            None => String::new(),
        };
        Self::parse_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.train.validate()?;
        if self.bench.runs == 0 {
            return Err(Error::config("bench.runs must be at least 1"));
        }
        Ok(())
    }
}

/// The keys that determine the network structure.
pub fn model_pairs(m: &ModelConfig) -> Vec<(&'static str, String)> {
    let cv = &m.cost_volume;
    vec![
        (
            "backbone.shallow_channels",
            join(&m.backbone.shallow_channels),
        ),
        ("backbone.deep_channels", join(&m.backbone.deep_channels)),
        ("backbone.ge_expansion", m.backbone.ge_expansion.to_string()),
        ("backbone.out_channels", m.backbone.out_channels.to_string()),
        ("cost_volume.max_disparity", cv.max_disparity.to_string()),
        ("cost_volume.num_groups", cv.num_groups.to_string()),
        (
            "cost_volume.concat_channels",
            cv.concat_channels.to_string(),
        ),
        ("cost_volume.num_subgroups", cv.num_subgroups.to_string()),
        ("cost_volume.disp_stride", cv.disp_stride.to_string()),
        ("cost_volume.attention", on_off(cv.attention)),
        ("cost_volume.attention_widths", join(&cv.attention_widths)),
        ("head.base_width", m.head.base_width.to_string()),
        ("head.separable", on_off(m.head.separable)),
    ]
}

/// Rebuild a model config from [`model_pairs`] output.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let mut c = RunConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("bad model line '{}'", line)))?;
        let k = k.trim();
        if !["backbone.", "cost_volume.", "head."]
            .iter()
            .any(|p| k.starts_with(p))
        {
            return Err(Error::config(format!("'{}' is not a model key", k)));
        }
        c.set(k, v)?;
    }
    c.model.validate()?;
    Ok(c.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emitted_text_reconstructs_every_preset() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c, "{}", p);
        }
    }

    #[test]
    fn overrides_follow_file_and_preset_comes_first() {
        let text = "loss.kind = smooth_l1  # ablation\npreset=desk\n\n";
        let c = RunConfig::parse_with(
            text,
            &["train.iterations=7".into(), "head.separable=on".into()],
        )
        .unwrap();
        assert_eq!(c.model.backbone, ModelConfig::desk().backbone);
        assert_eq!(c.loss.kind, LossKind::SmoothL1);
        assert_eq!(c.train.iterations, 7);
        assert!(c.model.head.separable);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("nope=1").is_err());
        assert!(RunConfig::parse("loss.kind=huber").is_err());
        assert!(RunConfig::parse("train.lr_milestones=5,5").is_err());
        assert!(RunConfig::parse("cost_volume.attention=maybe").is_err());
    }

    #[test]
    fn kitti_schedule() {
        let c = RunConfig::preset("kitti").unwrap();
        let s = c.train.schedule();
        assert_eq!(s.lr_at(6_999), 1e-3);
        assert!((s.lr_at(7_000) - 1e-4).abs() < 1e-12);
    }
}
