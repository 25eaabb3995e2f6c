//! `key=value` configuration files. Blank lines and `#` comments are
//! ignored; every key must be in the schema below.

use anyhow::{anyhow, bail, Context, Result};
use spectrapipe_core::camera::{CameraMode, CameraParams};
use spectrapipe_core::filters::DEFAULT_FILTERS;
use spectrapipe_core::recovery::{LrSchedule, TrainConfig};
use spectrapipe_core::segmentation::SegTrainConfig;
use spectrapipe_core::table::fmt_exact;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "sigma",
    "nu",
    "mu",
    "jpeg_quality",
    "camera_mode",
    "normalize",
    "w_band",
    "w_rgb",
    "w_spectral",
    "w_domain",
    "lr",
    "lr_schedule",
    "momentum",
    "steps",
    "batch_size",
    "hidden",
    "mrae_epsilon",
    "n_filters",
    "seg_hidden",
    "seg_lr",
    "seg_momentum",
    "seg_steps",
    "seg_batch",
    "classes",
    "curves",
    "curves_material",
    "db",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub camera: CameraParams,
    pub train: TrainConfig,
    pub seg: SegTrainConfig,
    pub n_filters: usize,
    /// Material classes produced by the synthetic generator.
    pub classes: usize,
    pub curves: Option<PathBuf>,
    pub curves_material: Option<PathBuf>,
    pub db: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            camera: CameraParams::default(),
            train: TrainConfig::default(),
            seg: SegTrainConfig::default(),
            n_filters: DEFAULT_FILTERS,
            classes: 4,
            curves: None,
            curves_material: None,
            db: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("config key `{key}`: cannot parse `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("config key `{key}`: expected true or false, found `{value}`"),
    }
}

impl Config {
    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key=value, found `{line}`", n + 1))?;
            cfg.set(key.trim(), value.trim(), base)
                .with_context(|| format!("config line {}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Loads `path` if given, else the defaults; `seed` overrides the file.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.seg.seed = cfg.seed;
        cfg.train.camera = cfg.camera;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        match key {
            "seed" => self.seed = parse(key, value)?,
            "sigma" => self.camera.sigma = parse(key, value)?,
            "nu" => self.camera.nu = parse(key, value)?,
            "mu" => self.camera.mu = parse(key, value)?,
            "jpeg_quality" => self.camera.jpeg_quality = parse(key, value)?,
            "camera_mode" => {
                self.camera.mode = match value {
                    "sample" => CameraMode::Sample,
                    "differentiable" => CameraMode::Differentiable,
                    _ => bail!("config key `camera_mode`: expected sample or differentiable, found `{value}`"),
                }
            }
            "normalize" => self.camera.normalize = parse_bool(key, value)?,
            "w_band" => self.train.weights.band = parse(key, value)?,
            "w_rgb" => self.train.weights.rgb = parse(key, value)?,
            "w_spectral" => self.train.weights.spectral = parse(key, value)?,
            "w_domain" => self.train.weights.domain = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "lr_schedule" => {
                self.train.schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => bail!("config key `lr_schedule`: expected constant or cosine, found `{value}`"),
                }
            }
            "momentum" => self.train.momentum = parse(key, value)?,
            "steps" => self.train.steps = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "hidden" => self.train.hidden = parse(key, value)?,
            "mrae_epsilon" => self.train.mrae_epsilon = parse(key, value)?,
            "n_filters" => self.n_filters = parse(key, value)?,
            "seg_hidden" => self.seg.hidden = parse(key, value)?,
            "seg_lr" => self.seg.lr = parse(key, value)?,
            "seg_momentum" => self.seg.momentum = parse(key, value)?,
            "seg_steps" => self.seg.steps = parse(key, value)?,
            "seg_batch" => {
                self.seg.batch_pixels = match value {
                    "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "classes" => self.classes = parse(key, value)?,
            "curves" => self.curves = Some(path()),
            "curves_material" => self.curves_material = Some(path()),
            "db" => self.db = Some(path()),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        TrainConfig {
            camera: self.camera,
            ..self.train
        }
        .validate()?;
        self.seg.validate()?;
        if self.n_filters == 0 {
            bail!("config key `n_filters`: must be at least 1");
        }
        if !(1..=spectrapipe_core::LabelMap::MAX_CLASSES).contains(&self.classes) {
            bail!("config key `classes`: must be in 1..=254");
        }
        Ok(())
    }
}

/// Config text holding only camera settings, in the schema's format.
pub fn camera_config_text(p: &CameraParams) -> String {
    let mode = match p.mode {
        CameraMode::Sample => "sample",
        CameraMode::Differentiable => "differentiable",
    };
    format!(
        "sigma={}\nnu={}\nmu={}\njpeg_quality={}\ncamera_mode={mode}\nnormalize={}\n",
        fmt_exact(p.sigma),
        fmt_exact(p.nu),
        fmt_exact(p.mu),
        p.jpeg_quality,
        p.normalize
    )
}
