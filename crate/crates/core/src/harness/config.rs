//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments; unknown keys are rejected. Every
//! key has a default, so an empty file is the full-size default experiment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::dataset::DatasetConfig;
use crate::baseline::{Modulation, SeparateConfig};
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::mtl::{MtlConfig, TaskSet};

/// Iteration budget with step decays of the learning rate by 10×.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub iterations: usize,
    pub lr: f64,
    pub decay_at: Vec<usize>,
}

impl Schedule {
    pub fn new(iterations: usize, lr: f64, decay_at: Vec<usize>) -> Self {
        Schedule {
            iterations,
            lr,
            decay_at,
        }
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        let passed = self.decay_at.iter().filter(|&&d| iteration >= d).count();
        self.lr * 0.1f64.powi(passed as i32)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.iterations == 0 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("{name}: iterations and lr must be positive")));
        }
        if self.decay_at.windows(2).any(|w| w[0] >= w[1]) || self.decay_at.last().is_some_and(|&d| d >= self.iterations) {
            return Err(Error::config(format!(
                "{name}: decay points {:?} must increase strictly and stay below {}",
                self.decay_at, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub data_path: Option<PathBuf>,
    pub model: MtlConfig,
    pub spatial_down: usize,
    pub channel_factor: usize,
    pub steps: [Schedule; 3],
    pub batch_size: usize,
    pub seed: u64,
    pub tasks: TaskSet,
    pub snr_train: Option<f64>,
    /// Test SNRs; `None` is the noiseless channel.
    pub snr_grid: Vec<Option<f64>>,
    pub separate_arms: Vec<SeparateConfig>,
    pub eval_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DatasetConfig::default(),
            data_path: None,
            model: MtlConfig::default(),
            spatial_down: 4,
            channel_factor: 32,
            steps: [
                Schedule::new(20_000, 1e-3, vec![10_000, 18_000]),
                Schedule::new(5_000, 1e-3, vec![2_500]),
                Schedule::new(10_000, 1e-4, vec![5_000, 7_500]),
            ],
            batch_size: 32,
            seed: 1,
            tasks: TaskSet::BOTH,
            snr_train: Some(5.0),
            snr_grid: parse_grid("0:20:2.5").expect("valid literal"),
            separate_arms: ["q75-conv-bpsk", "q75-conv-qpsk", "q30-conv-bpsk", "q75-uncoded-bpsk"]
                .iter()
                .map(|s| parse_separate(s).expect("valid literal"))
                .collect(),
            eval_seed: 1000,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// "a:b:step" (inclusive range) or a comma-separated list of dB values.
pub fn parse_grid(s: &str) -> Result<Vec<Option<f64>>> {
    let num = |t: &str| t.parse::<f64>().map_err(|_| Error::config(format!("bad number `{t}` in grid `{s}`")));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let bounds: Vec<&str> = part.split(':').map(str::trim).collect();
        match bounds[..] {
            [a, b, step] => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if !(step > 0.0) || b < a {
                    return Err(Error::config(format!("grid `{s}` needs step > 0 and end >= start")));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                out.extend((0..=n).map(|i| Some(a + i as f64 * step)));
            }
            [t] => out.push(parse_snr(t)?),
            _ => return Err(Error::config(format!("grid element `{part}` is not start:stop:step, a number or none"))),
        }
    }
    if out.is_empty() || out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(format!("empty or non-finite grid `{s}`")));
    }
    Ok(out)
}

fn format_grid(grid: &[Option<f64>]) -> String {
    grid.iter().map(|&g| format_snr(g)).collect::<Vec<_>>().join(",")
}

/// Optional SNR in dB; `none` is the noiseless channel.
pub fn parse_snr(s: &str) -> Result<Option<f64>> {
    match s.trim() {
        "none" | "inf" => Ok(None),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| Error::config(format!("bad SNR `{t}` (dB or `none`)"))),
    }
}

pub fn format_snr(snr: Option<f64>) -> String {
    snr.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// `q<quality>-<conv|uncoded>-<bpsk|qpsk>`.
pub fn parse_separate(s: &str) -> Result<SeparateConfig> {
    let bad = || Error::config(format!("separate arm `{s}` is not q<1-100>-<conv|uncoded>-<bpsk|qpsk>"));
    let parts: Vec<&str> = s.trim().split('-').collect();
    let [q, code, modulation] = parts[..] else {
        return Err(bad());
    };
    let quality: u8 = q.strip_prefix('q').and_then(|v| v.parse().ok()).filter(|v| (1..=100).contains(v)).ok_or_else(bad)?;
    let coded = match code {
        "conv" => true,
        "uncoded" => false,
        _ => return Err(bad()),
    };
    let modulation: Modulation = modulation.parse().map_err(|_| bad())?;
    Ok(SeparateConfig {
        quality,
        coded,
        modulation,
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| Error::config(format!("{key}: bad list item `{t}`"))))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn tasks_name(t: TaskSet) -> &'static str {
    match (t.detection, t.segmentation) {
        (true, false) => "detection",
        (false, true) => "segmentation",
        _ => "both",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(format!("{key}: cannot parse `{v}`")))
        }
        let step_idx = |k: &str| -> Option<(usize, String)> {
            let rest = k.strip_prefix("step")?;
            let (n, field) = rest.split_once('.')?;
            let i: usize = n.parse().ok()?;
            (1..=3).contains(&i).then(|| (i - 1, field.to_string()))
        };
        match key {
            "data.seed" => self.data.seed = num(key, v)?,
            "data.num_train" => self.data.num_train = num(key, v)?,
            "data.num_test" => self.data.num_test = num(key, v)?,
            "data.max_objects" => self.data.max_objects = num(key, v)?,
            "data.min_extent" => self.data.min_extent = num(key, v)?,
            "data.max_extent" => self.data.max_extent = num(key, v)?,
            "data.noise_level" => self.data.noise_level = num(key, v)?,
            "data.path" => self.data_path = Some(PathBuf::from(v)),
            "image_size" => {
                self.data.image_size = num(key, v)?;
                self.model.image_size = self.data.image_size;
            }
            "num_classes" => {
                self.data.num_classes = num(key, v)?;
                self.model.num_classes = self.data.num_classes;
            }
            "model.fused_channels" => self.model.fused_channels = num(key, v)?,
            "model.pyramid_depth" => self.model.pyramid_depth = num(key, v)?,
            "model.seg_channels" => self.model.seg_channels = num(key, v)?,
            "model.anchor_scales" => self.model.anchor_scales = parse_list(key, v)?,
            "model.backbone_widths" => {
                let w: Vec<usize> = parse_list(key, v)?;
                self.model.backbone_widths = w
                    .try_into()
                    .map_err(|_| Error::config("model.backbone_widths needs 5 entries"))?;
            }
            "codec.spatial_down" => self.spatial_down = num(key, v)?,
            "codec.channel_factor" => self.channel_factor = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "train.seed" => self.seed = num(key, v)?,
            "train.snr_db" => self.snr_train = parse_snr(v)?,
            "train.tasks" => {
                self.tasks = match v {
                    "both" => TaskSet::BOTH,
                    "detection" => TaskSet::DETECTION,
                    "segmentation" => TaskSet::SEGMENTATION,
                    _ => return Err(Error::config(format!("train.tasks: `{v}` is not both|detection|segmentation"))),
                }
            }
            "sweep.snr_grid" => self.snr_grid = parse_grid(v)?,
            "sweep.separate" => {
                self.separate_arms = v.split(',').filter(|t| !t.trim().is_empty()).map(parse_separate).collect::<Result<_>>()?
            }
            "sweep.seed" => self.eval_seed = num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => match step_idx(key) {
                Some((i, f)) if f == "iterations" => self.steps[i].iterations = num(key, v)?,
                Some((i, f)) if f == "lr" => self.steps[i].lr = num(key, v)?,
                Some((i, f)) if f == "decay" => self.steps[i].decay_at = parse_list(key, v)?,
                _ => return Err(Error::config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.codec()?;
        for (i, s) in self.steps.iter().enumerate() {
            s.validate(&format!("step{}", i + 1))?;
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if self.data.image_size != self.model.image_size || self.data.num_classes != self.model.num_classes {
            return Err(Error::config("dataset and model disagree on image size or classes"));
        }
        Ok(())
    }

    pub fn codec(&self) -> Result<CodecConfig> {
        CodecConfig::new(
            self.model.fused_channels,
            self.model.split_size(),
            self.spatial_down,
            self.channel_factor,
        )
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.data_path.clone().unwrap_or_else(|| self.output_dir.join("shapes.swdata"))
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let m = &self.model;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("image_size", d.image_size.to_string());
        kv("num_classes", d.num_classes.to_string());
        kv("data.seed", d.seed.to_string());
        kv("data.num_train", d.num_train.to_string());
        kv("data.num_test", d.num_test.to_string());
        kv("data.max_objects", d.max_objects.to_string());
        kv("data.min_extent", d.min_extent.to_string());
        kv("data.max_extent", d.max_extent.to_string());
        kv("data.noise_level", d.noise_level.to_string());
        if let Some(p) = &self.data_path {
            kv("data.path", p.display().to_string());
        }
        kv("model.fused_channels", m.fused_channels.to_string());
        kv("model.pyramid_depth", m.pyramid_depth.to_string());
        kv("model.seg_channels", m.seg_channels.to_string());
        kv("model.anchor_scales", join(&m.anchor_scales));
        kv("model.backbone_widths", join(&m.backbone_widths));
        kv("codec.spatial_down", self.spatial_down.to_string());
        kv("codec.channel_factor", self.channel_factor.to_string());
        for (i, st) in self.steps.iter().enumerate() {
            kv(&format!("step{}.iterations", i + 1), st.iterations.to_string());
            kv(&format!("step{}.lr", i + 1), st.lr.to_string());
            kv(&format!("step{}.decay", i + 1), join(&st.decay_at));
        }
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.tasks", tasks_name(self.tasks).to_string());
        kv("train.snr_db", format_snr(self.snr_train));
        kv("sweep.snr_grid", format_grid(&self.snr_grid));
        kv("sweep.separate", self.separate_arms.iter().map(|a| a.label()).collect::<Vec<_>>().join(","));
        kv("sweep.seed", self.eval_seed.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        s
    }

    /// SHA-256 of the canonical text, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}
