//! Run configuration as flat `key = value` text.
//!
//! Keys are dotted by section (`train.learning_rate`, `arch.channels`, ...).
//! Blank lines and `#` comments are ignored, lists are comma separated, and
//! unknown or repeated keys are rejected. Defaults are the full-size
//! training setup; `RunConfig::desk` is the reduced preset used for phantom
//! runs on a workstation.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::ThresholdMode;
use crate::heatmap::DEFAULT_KERNEL;
use crate::models::{ArchConfig, ModelKind};
use crate::phantom::{PhantomConfig, SplitCounts};
use crate::preprocess::{CropSize, CropSpec, Pipeline, RigidTransform, Step};
use crate::training::TrainConfig;

pub const STEP_NAMES: [&str; 6] = ["rigid", "resample", "crop", "flip", "resize", "normalize"];

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub steps: Vec<String>,
    pub rigid: RigidTransform,
    pub resample_dims: [usize; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            steps: ["flip", "resize", "normalize"].map(String::from).to_vec(),
            rigid: RigidTransform::identity(),
            resample_dims: [128; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Root seed; drives phantom generation, initialisation and training.
    pub seed: u64,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub phantom: PhantomConfig,
    pub crop: CropSpec,
    pub preprocess: PreprocessConfig,
    pub eval_mode: ThresholdMode,
    pub heatmap_kernel: usize,
    /// Render heat maps for every test volume, not only flagged ones.
    pub heatmap_all: bool,
    pub work_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::Cae,
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            phantom: PhantomConfig::default(),
            crop: CropSpec::default(),
            preprocess: PreprocessConfig::default(),
            eval_mode: ThresholdMode::Conjunction,
            heatmap_kernel: DEFAULT_KERNEL,
            heatmap_all: false,
            work_dir: PathBuf::from("work"),
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{}'", s.trim())))
        })
        .collect()
}

fn fixed<T: std::str::FromStr + Copy + Default, const N: usize>(
    key: &str,
    v: &str,
) -> Result<[T; N]> {
    let items = list::<T>(key, v)?;
    items.try_into().map_err(|got: Vec<T>| {
        Error::Config(format!("{key}: expected {N} values, got {}", got.len()))
    })
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// 16³ input, n_z = 32, channels [8, 16]; lr 2e-3, batch 8, 600 epochs.
    pub fn desk() -> Self {
        Self {
            arch: ArchConfig::desk(),
            train: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 8,
                epochs: 600,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    /// Replaces the root seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.phantom.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.arch.validate()?;
        self.phantom.validate()?;
        self.preprocess.rigid.validate()?;
        self.pipeline()?;
        if self.heatmap_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "heatmap.kernel {} must be odd",
                self.heatmap_kernel
            )));
        }
        Ok(())
    }

    /// The preprocessing chain named by `preprocess.steps`, resizing to the
    /// network input.
    pub fn pipeline(&self) -> Result<Pipeline> {
        let steps = self
            .preprocess
            .steps
            .iter()
            .map(|name| {
                Ok(match name.as_str() {
                    "rigid" => Step::Rigid(self.preprocess.rigid.clone()),
                    "resample" => Step::Resample(self.preprocess.resample_dims),
                    "crop" => Step::Crop(self.crop.clone()),
                    "flip" => Step::Flip,
                    "resize" => Step::Resize(self.arch.input_dims),
                    "normalize" => Step::Normalize,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown preprocessing step '{other}'"
                        )))
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Pipeline::new(steps)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("line {}: key '{k}' repeated", n + 1)));
            }
            pairs.push((k, v));
        }
        // Presets that expand into other keys apply first so explicit keys win.
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "phantom.scale") {
            cfg.phantom.counts = SplitCounts::scaled(one("phantom.scale", v)?);
        }
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "crop.size") {
            cfg.crop = CropSpec::new(CropSize::parse(v)?);
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg = cfg.clone().with_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let c = &mut self.phantom.counts;
        match k {
            "seed" => self.seed = one(k, v)?,
            "model" => self.model = ModelKind::parse(v)?,
            "train.learning_rate" => self.train.learning_rate = one(k, v)?,
            "train.batch_size" => self.train.batch_size = one(k, v)?,
            "train.epochs" => self.train.epochs = one(k, v)?,
            "train.lambda_kl" => self.train.lambda_kl = one(k, v)?,
            "train.beta1" => self.train.beta1 = one(k, v)?,
            "train.beta2" => self.train.beta2 = one(k, v)?,
            "train.epsilon" => self.train.epsilon = one(k, v)?,
            "arch.input_dims" => self.arch.input_dims = fixed(k, v)?,
            "arch.latent_dim" => self.arch.latent_dim = one(k, v)?,
            "arch.channels" => self.arch.channels = list(k, v)?,
            "phantom.scale" | "crop.size" => {}
            "phantom.dims" => self.phantom.dims = fixed(k, v)?,
            "phantom.train_normal" => c.train_normal = one(k, v)?,
            "phantom.val_normal" => c.val_normal = one(k, v)?,
            "phantom.val_anomaly" => c.val_anomaly = one(k, v)?,
            "phantom.test_normal" => c.test_normal = one(k, v)?,
            "phantom.test_anomaly" => c.test_anomaly = one(k, v)?,
            "phantom.anomaly_mix" => self.phantom.anomaly_mix = fixed(k, v)?,
            "phantom.noise_sigma" => self.phantom.noise_sigma = one(k, v)?,
            "phantom.intensity_jitter" => self.phantom.intensity_jitter = one(k, v)?,
            "phantom.wall_thickness" => self.phantom.wall_thickness = fixed::<f64, 2>(k, v)?.into(),
            "phantom.lesion_radius" => self.phantom.lesion_radius = fixed::<f64, 2>(k, v)?.into(),
            "phantom.thickening_extra" => {
                self.phantom.thickening_extra = fixed::<f64, 2>(k, v)?.into()
            }
            "crop.extent" => self.crop.extent = fixed(k, v)?,
            "crop.center_left" => self.crop.center_left = fixed(k, v)?,
            "crop.center_right" => self.crop.center_right = fixed(k, v)?,
            "preprocess.steps" => {
                let steps: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                if let Some(bad) = steps.iter().find(|s| !STEP_NAMES.contains(&s.as_str())) {
                    return Err(Error::Config(format!("unknown preprocessing step '{bad}'")));
                }
                self.preprocess.steps = steps;
            }
            "preprocess.rotation" => {
                let r: [f64; 9] = fixed(k, v)?;
                self.preprocess.rigid.rotation =
                    [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
            }
            "preprocess.translation" => self.preprocess.rigid.translation = fixed(k, v)?,
            "preprocess.resample_dims" => self.preprocess.resample_dims = fixed(k, v)?,
            "eval.mode" => self.eval_mode = ThresholdMode::parse(v)?,
            "heatmap.kernel" => self.heatmap_kernel = one(k, v)?,
            "heatmap.all" => self.heatmap_all = one(k, v)?,
            "paths.work_dir" => self.work_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Every key, in a fixed order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let p = &self.phantom;
        let c = &p.counts;
        let r = &self.preprocess.rigid.rotation;
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("model", self.model.as_str().into()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lambda_kl", t.lambda_kl.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("arch.input_dims", join(&self.arch.input_dims)),
            ("arch.latent_dim", self.arch.latent_dim.to_string()),
            ("arch.channels", join(&self.arch.channels)),
            ("phantom.dims", join(&p.dims)),
            ("phantom.train_normal", c.train_normal.to_string()),
            ("phantom.val_normal", c.val_normal.to_string()),
            ("phantom.val_anomaly", c.val_anomaly.to_string()),
            ("phantom.test_normal", c.test_normal.to_string()),
            ("phantom.test_anomaly", c.test_anomaly.to_string()),
            ("phantom.anomaly_mix", join(&p.anomaly_mix)),
            ("phantom.noise_sigma", p.noise_sigma.to_string()),
            ("phantom.intensity_jitter", p.intensity_jitter.to_string()),
            (
                "phantom.wall_thickness",
                join(&[p.wall_thickness.0, p.wall_thickness.1]),
            ),
            (
                "phantom.lesion_radius",
                join(&[p.lesion_radius.0, p.lesion_radius.1]),
            ),
            (
                "phantom.thickening_extra",
                join(&[p.thickening_extra.0, p.thickening_extra.1]),
            ),
            ("crop.size", self.crop.name.as_str().into()),
            ("crop.extent", join(&self.crop.extent)),
            ("crop.center_left", join(&self.crop.center_left)),
            ("crop.center_right", join(&self.crop.center_right)),
            ("preprocess.steps", self.preprocess.steps.join(",")),
            ("preprocess.rotation", join(&r.concat())),
            (
                "preprocess.translation",
                join(&self.preprocess.rigid.translation),
            ),
            (
                "preprocess.resample_dims",
                join(&self.preprocess.resample_dims),
            ),
            ("eval.mode", self.eval_mode.as_str().into()),
            ("heatmap.kernel", self.heatmap_kernel.to_string()),
            ("heatmap.all", self.heatmap_all.to_string()),
            ("paths.work_dir", self.work_dir.display().to_string()),
        ];
        rows.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
