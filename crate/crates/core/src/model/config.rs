//! Flat `key=value` configuration shared by the command line, the
//! training loop and checkpoints.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::abem::Branches;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::geometry::DescriptorForm;

/// Network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub classes: usize,
    pub points: usize,
    pub k: usize,
    /// Output width of each module.
    pub scales: Vec<usize>,
    /// Compression of the point axis inside channel attention.
    pub ratio: usize,
    pub descriptor_form: DescriptorForm,
    pub fuse_width: usize,
    /// Hidden widths of the classifier head.
    pub head: Vec<usize>,
    pub dropout: f64,
    pub branches: Branches,
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            classes: 6,
            points: 256,
            k: 20,
            scales: vec![64, 64, 128, 256],
            ratio: 4,
            descriptor_form: DescriptorForm::DEFAULT,
            fuse_width: 1024,
            head: vec![512, 256],
            dropout: 0.5,
            branches: Branches::Full,
            attention: true,
        }
    }
}

impl ModelConfig {
    /// Small widths used by gradient checks.
    pub fn reduced() -> Self {
        ModelConfig {
            classes: 3,
            points: 12,
            k: 3,
            scales: vec![4, 4, 8, 16],
            ratio: 3,
            fuse_width: 16,
            head: vec![8, 6],
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Keep every attention residual weight at its initial value.
    pub freeze_alpha: bool,
    /// Stop once test accuracy reaches this fraction (0 disables).
    pub target_accuracy: f64,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr_max: 0.1,
            lr_min: 0.001,
            momentum: 0.9,
            seed: 1,
            augment: true,
            augmentation: AugmentConfig::default(),
            freeze_alpha: false,
            target_accuracy: 0.0,
            eval_batch: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic,
    /// Clouds read from `train_pack` and `test_pack`.
    Packs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DatasetSource,
    pub train_pack: String,
    pub test_pack: String,
    pub train_size: usize,
    pub test_size: usize,
    pub jitter: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DatasetSource::Synthetic,
            train_pack: String::new(),
            test_pack: String::new(),
            train_size: 600,
            test_size: 150,
            jitter: 0.01,
        }
    }
}

/// Everything a run is determined by.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Reject clouds that are not normalized to the unit sphere.
    pub strict: bool,
}

pub const KEYS: &[&str] = &[
    "dataset",
    "train_pack",
    "test_pack",
    "train_size",
    "test_size",
    "jitter",
    "classes",
    "points",
    "k",
    "scales",
    "ratio",
    "descriptor_form",
    "fuse_width",
    "head",
    "dropout",
    "branches",
    "attention",
    "epochs",
    "batch_size",
    "lr_max",
    "lr_min",
    "momentum",
    "seed",
    "augment",
    "scale_min",
    "scale_max",
    "translate_min",
    "translate_max",
    "freeze_alpha",
    "target_accuracy",
    "eval_batch",
    "strict",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|t| parse(key, t.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match key {
            "dataset" => {
                d.source = match value {
                    "synthetic" => DatasetSource::Synthetic,
                    "packs" => DatasetSource::Packs,
                    _ => return Err(Error::config(key, format!("expected synthetic or packs, got `{value}`"))),
                }
            }
            "train_pack" => d.train_pack = value.to_string(),
            "test_pack" => d.test_pack = value.to_string(),
            "train_size" => d.train_size = parse(key, value)?,
            "test_size" => d.test_size = parse(key, value)?,
            "jitter" => d.jitter = parse(key, value)?,
            "classes" => m.classes = parse(key, value)?,
            "points" => m.points = parse(key, value)?,
            "k" => m.k = parse(key, value)?,
            "scales" => m.scales = parse_list(key, value)?,
            "ratio" => m.ratio = parse(key, value)?,
            "descriptor_form" => {
                m.descriptor_form =
                    DescriptorForm::new(parse(key, value)?).map_err(|e| Error::config(key, e.to_string()))?
            }
            "fuse_width" => m.fuse_width = parse(key, value)?,
            "head" => m.head = parse_list(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "branches" => m.branches = value.parse().map_err(|e: String| Error::config(key, e))?,
            "attention" => m.attention = parse_bool(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr_max" => t.lr_max = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "scale_min" => t.augmentation.scale.0 = parse(key, value)?,
            "scale_max" => t.augmentation.scale.1 = parse(key, value)?,
            "translate_min" => t.augmentation.translate.0 = parse(key, value)?,
            "translate_max" => t.augmentation.translate.1 = parse(key, value)?,
            "freeze_alpha" => t.freeze_alpha = parse_bool(key, value)?,
            "target_accuracy" => t.target_accuracy = parse(key, value)?,
            "eval_batch" => t.eval_batch = parse(key, value)?,
            "strict" => self.strict = parse_bool(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Current value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let dataset = match d.source {
            DatasetSource::Synthetic => "synthetic",
            DatasetSource::Packs => "packs",
        };
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "dataset" => dataset.to_string(),
                    "train_pack" => d.train_pack.clone(),
                    "test_pack" => d.test_pack.clone(),
                    "train_size" => d.train_size.to_string(),
                    "test_size" => d.test_size.to_string(),
                    "jitter" => d.jitter.to_string(),
                    "classes" => m.classes.to_string(),
                    "points" => m.points.to_string(),
                    "k" => m.k.to_string(),
                    "scales" => join(&m.scales),
                    "ratio" => m.ratio.to_string(),
                    "descriptor_form" => m.descriptor_form.id().to_string(),
                    "fuse_width" => m.fuse_width.to_string(),
                    "head" => join(&m.head),
                    "dropout" => m.dropout.to_string(),
                    "branches" => m.branches.as_str().to_string(),
                    "attention" => m.attention.to_string(),
                    "epochs" => t.epochs.to_string(),
                    "batch_size" => t.batch_size.to_string(),
                    "lr_max" => t.lr_max.to_string(),
                    "lr_min" => t.lr_min.to_string(),
                    "momentum" => t.momentum.to_string(),
                    "seed" => t.seed.to_string(),
                    "augment" => t.augment.to_string(),
                    "scale_min" => t.augmentation.scale.0.to_string(),
                    "scale_max" => t.augmentation.scale.1.to_string(),
                    "translate_min" => t.augmentation.translate.0.to_string(),
                    "translate_max" => t.augmentation.translate.1.to_string(),
                    "freeze_alpha" => t.freeze_alpha.to_string(),
                    "target_accuracy" => t.target_accuracy.to_string(),
                    "eval_batch" => t.eval_batch.to_string(),
                    "strict" => self.strict.to_string(),
                    _ => unreachable!("every key has a value"),
                };
                (k, v)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies the assignments of a config text on top of `self`.
    /// Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv, "override must be key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, t) = (&self.model, &self.train);
        let fail = |k: &str, msg: String| Err(Error::config(k, msg));
        if m.classes < 2 {
            return fail("classes", format!("need at least 2 classes, got {}", m.classes));
        }
        if m.k < 1 || m.points <= m.k {
            return fail("k", format!("need 1 <= k < points, got k={} points={}", m.k, m.points));
        }
        if m.scales.is_empty() || m.scales.contains(&0) {
            return fail("scales", "module widths must be positive".into());
        }
        if m.head.contains(&0) || m.fuse_width == 0 {
            return fail("head", "layer widths must be positive".into());
        }
        if m.attention && (m.ratio < 2 || m.ratio > m.points) {
            return fail("ratio", format!("need 2 <= ratio <= points, got {}", m.ratio));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return fail("dropout", format!("must lie in [0, 1), got {}", m.dropout));
        }
        if t.batch_size < 1 || t.eval_batch < 1 {
            return fail("batch_size", "batch sizes must be at least 1".into());
        }
        if !t.lr_min.is_finite() || !t.lr_max.is_finite() || t.lr_min >= t.lr_max || t.lr_min < 0.0 {
            return fail("lr_min", format!("need 0 <= lr_min < lr_max, got {} and {}", t.lr_min, t.lr_max));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return fail("momentum", format!("must lie in [0, 1), got {}", t.momentum));
        }
        if t.epochs < 1 {
            return fail("epochs", "need at least one epoch".into());
        }
        AugmentConfig::new(t.augmentation.scale, t.augmentation.translate)
            .map_err(|e| Error::config("scale_min", e.to_string()))?;
        if self.data.source == DatasetSource::Packs
            && (self.data.train_pack.is_empty() || self.data.test_pack.is_empty()) {
                return fail("dataset", "packs need both train_pack and test_pack".into());
            }
        Ok(())
    }
}
