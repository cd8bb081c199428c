//! Flat `key=value` run configuration shared by every CLI command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{io_at, Error, Result};
use crate::metrics::Pooling;
use crate::model::{PmcnetConfig, Variant};
use crate::synth::{LesionSpec, SynthSpec};
use crate::train::TrainConfig;

/// Everything a command needs. `seed` drives data generation, parameter
/// initialisation, sample order and augmentation (each under its own key
/// domain).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: PmcnetConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    /// `(train, val, test)` image counts; they sum to `synth.n_images`.
    pub splits: (usize, usize, usize),
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub pooling: Pooling,
    pub variants: Vec<Variant>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PmcnetConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            splits: (48, 8, 8),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            pooling: Pooling::Micro,
            variants: vec![Variant::Baseline, Variant::PffDab],
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

fn cfg_err(key: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        detail: detail.into(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(key, format!("cannot parse {v:?} as a number")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| cfg_err(key, format!("bad list item {:?}", s.trim())))
        })
        .collect()
}

fn keyword<T: FromStr<Err = Error>>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: Error| cfg_err(key, e.to_string()))
}

fn pair<T: FromStr>(key: &str, v: &str, sep: char) -> Result<(T, T)> {
    let (a, b) = v
        .split_once(sep)
        .ok_or_else(|| cfg_err(key, format!("expected `a{sep}b`, got {v:?}")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

const LESIONS: [&str; 4] = ["ex", "he", "ma", "se"];

impl RunConfig {
    fn lesion(&self, name: &str) -> &LesionSpec {
        match name {
            "ex" => &self.synth.ex,
            "he" => &self.synth.he,
            "ma" => &self.synth.ma,
            _ => &self.synth.se,
        }
    }

    fn lesion_mut(&mut self, name: &str) -> Option<&mut LesionSpec> {
        match name {
            "ex" => Some(&mut self.synth.ex),
            "he" => Some(&mut self.synth.he),
            "ma" => Some(&mut self.synth.ma),
            "se" => Some(&mut self.synth.se),
            _ => None,
        }
    }

    /// Every key with its serialised value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let t = &self.train;
        let c = &m.stage_channels;
        let mut e: Vec<(String, String)> = vec![
            ("hw".into(), format!("{}x{}", m.input_hw.0, m.input_hw.1)),
            ("seed".into(), t.seed.to_string()),
            ("stage_channels".into(), join(c)),
            ("fusion".into(), m.fusion.to_string()),
            ("downsample".into(), m.downsample.to_string()),
            ("attention".into(), m.attention.to_string()),
            ("num_classes".into(), m.num_classes.to_string()),
            ("base_lr".into(), t.base_lr.to_string()),
            ("max_iters".into(), t.max_iters.to_string()),
            ("poly_power".into(), t.poly_power.to_string()),
            ("adam_beta1".into(), t.adam_beta1.to_string()),
            ("adam_beta2".into(), t.adam_beta2.to_string()),
            ("adam_eps".into(), t.adam_eps.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("flip_h_prob".into(), t.augment.flip_h_prob.to_string()),
            ("flip_v_prob".into(), t.augment.flip_v_prob.to_string()),
            ("rescale_min".into(), t.augment.rescale_min.to_string()),
            ("rescale_max".into(), t.augment.rescale_max.to_string()),
            ("eval_interval".into(), t.eval_interval.to_string()),
            ("n_images".into(), self.synth.n_images.to_string()),
            ("splits".into(), join(&[self.splits.0, self.splits.1, self.splits.2])),
        ];
        for name in LESIONS {
            let l = self.lesion(name);
            e.push((format!("{name}.radius"), format!("{}-{}", l.radius.0, l.radius.1)));
            e.push((format!("{name}.count"), format!("{}-{}", l.count.0, l.count.1)));
            e.push((format!("{name}.presence"), l.presence.to_string()));
        }
        e.extend([
            ("data_dir".into(), self.data_dir.display().to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("pooling".into(), self.pooling.to_string()),
            ("variants".into(), join(&self.variants)),
            ("ablation_seeds".into(), join(&self.ablation_seeds)),
        ]);
        e
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "hw" => {
                let hw = pair(key, v, 'x')?;
                self.model.input_hw = hw;
                self.synth.hw = hw;
            }
            "seed" => self.train.seed = num(key, v)?,
            "stage_channels" => {
                let c: Vec<usize> = list(key, v)?;
                self.model.stage_channels = c
                    .try_into()
                    .map_err(|c: Vec<usize>| cfg_err(key, format!("expected 4 stages, got {}", c.len())))?;
            }
            "fusion" => self.model.fusion = keyword(key, v)?,
            "downsample" => self.model.downsample = keyword(key, v)?,
            "attention" => self.model.attention = keyword(key, v)?,
            "num_classes" => self.model.num_classes = num(key, v)?,
            "base_lr" => self.train.base_lr = num(key, v)?,
            "max_iters" => self.train.max_iters = num(key, v)?,
            "poly_power" => self.train.poly_power = num(key, v)?,
            "adam_beta1" => self.train.adam_beta1 = num(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = num(key, v)?,
            "adam_eps" => self.train.adam_eps = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "flip_h_prob" => self.train.augment.flip_h_prob = num(key, v)?,
            "flip_v_prob" => self.train.augment.flip_v_prob = num(key, v)?,
            "rescale_min" => self.train.augment.rescale_min = num(key, v)?,
            "rescale_max" => self.train.augment.rescale_max = num(key, v)?,
            "eval_interval" => self.train.eval_interval = num(key, v)?,
            "n_images" => self.synth.n_images = num(key, v)?,
            "splits" => {
                let s: Vec<usize> = list(key, v)?;
                let [a, b, c] = s[..] else {
                    return Err(cfg_err(key, "expected train,val,test counts"));
                };
                self.splits = (a, b, c);
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "pooling" => self.pooling = keyword(key, v)?,
            "variants" => {
                self.variants = v
                    .split(',')
                    .map(|s| keyword(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "ablation_seeds" => self.ablation_seeds = list(key, v)?,
            _ => {
                let (class, field) = key
                    .split_once('.')
                    .ok_or_else(|| cfg_err(key, "unknown key"))?;
                let l = self.lesion_mut(class).ok_or_else(|| cfg_err(key, "unknown key"))?;
                match field {
                    "radius" => l.radius = pair(key, v, '-')?,
                    "count" => l.count = pair(key, v, '-')?,
                    "presence" => l.presence = num(key, v)?,
                    _ => return Err(cfg_err(key, "unknown key")),
                }
            }
        }
        Ok(())
    }

    /// Parses a config file body. Keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(&format!("line {}", n + 1), format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(cfg_err(k, "duplicate key"));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every component invariant, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.model.input_hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(cfg_err("hw", format!("{h}x{w}: height and width must be divisible by 16")));
        }
        let wrap = |key: &'static str| move |e: Error| cfg_err(key, e.to_string());
        self.model.validate().map_err(wrap("hw"))?;
        if self.model.num_classes != crate::synth::NUM_CLASSES {
            return Err(cfg_err(
                "num_classes",
                format!("synthetic data has {} classes", crate::synth::NUM_CLASSES),
            ));
        }
        self.train.validate().map_err(wrap("train"))?;
        self.synth.validate().map_err(wrap("synth"))?;
        let (a, b, c) = self.splits;
        if a + b + c != self.synth.n_images {
            return Err(cfg_err(
                "splits",
                format!("{a}+{b}+{c} does not equal n_images={}", self.synth.n_images),
            ));
        }
        if a == 0 {
            return Err(cfg_err("splits", "training split is empty"));
        }
        if self.variants.is_empty() {
            return Err(cfg_err("variants", "no variants listed"));
        }
        if self.ablation_seeds.is_empty() {
            return Err(cfg_err("ablation_seeds", "no seeds listed"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_at(path))?)
    }
}
