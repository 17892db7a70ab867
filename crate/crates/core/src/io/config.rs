use std::path::{Path, PathBuf};

use super::{parse_error, read_text};
use crate::error::{NspError, Result};
use crate::eval::CollisionSpec;
use crate::nets::ModelDims;
use crate::training::TrainConfig;
use crate::types::{Dataset, NspConfig};

pub const DEFAULT_STRIDE: usize = 20;

/// Everything a run needs besides data: model, training and split settings.
///
/// The file format is one `key = value` per line with `#` comments. A
/// `dataset` key selects the preset the other keys override, wherever it
/// appears. `train` and `test` take comma-separated paths relative to the
/// config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<Dataset>,
    pub nsp: NspConfig,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub stride: usize,
    pub collision_radius: f64,
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(None)
    }
}

impl RunConfig {
    pub fn preset(dataset: Option<Dataset>) -> Self {
        let nsp = dataset.map_or_else(NspConfig::default, NspConfig::preset);
        let collision_radius = match dataset {
            Some(Dataset::Sdd) | None => CollisionSpec::PIXEL_RADIUS,
            Some(_) => CollisionSpec::METRIC_RADIUS,
        };
        Self {
            dataset,
            nsp,
            train: TrainConfig::default(),
            dims: ModelDims::default(),
            stride: DEFAULT_STRIDE,
            collision_radius,
            train_files: Vec::new(),
            test_files: Vec::new(),
        }
    }

    pub fn parse(text: &str, source: &str, base_dir: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| parse_error(source, n + 1, "expected `key = value`"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let dataset = match pairs.iter().rev().find(|(k, _)| k == "dataset") {
            Some((_, v)) => Some(v.parse()?),
            None => None,
        };
        let mut cfg = Self::preset(dataset);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "dataset") {
            match k.as_str() {
                "train" => cfg.train_files = split_paths(v, base_dir),
                "test" => cfg.test_files = split_paths(v, base_dir),
                _ => cfg.set(k, v)?,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_text(path)?, &path.display().to_string(), base)
    }

    /// Applies one override; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |reason: &str| NspError::config(key, reason);
        let int = || value.parse::<usize>().map_err(|_| bad("expected a positive integer")).and_then(|x| if x == 0 { Err(bad("must be positive")) } else { Ok(x) });
        let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        match key {
            "dataset" => *self = Self::preset(Some(value.parse()?)),
            "stride" => self.stride = int()?,
            "collision_r" => self.collision_radius = float()?,
            "embed" => self.dims.embed = int()?,
            "lstm_hidden" => self.dims.lstm_hidden = int()?,
            "mlp_hidden" => self.dims.mlp_hidden = int()?,
            "latent" => self.dims.latent = int()?,
            "cvae_feature" => self.dims.cvae_feature = int()?,
            "feature_scale" => self.dims.feature_scale = float()?,
            _ if self.nsp.entries().iter().any(|(k, _)| *k == key) => self.nsp.set(key, value)?,
            _ if self.train.entries().iter().any(|(k, _)| *k == key) => self.train.set(key, value)?,
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.nsp.validate()?;
        self.train.validate()?;
        if !(self.collision_radius > 0.0) {
            return Err(NspError::config("collision_r", "must be positive"));
        }
        if !(self.dims.feature_scale > 0.0 && self.dims.feature_scale.is_finite()) {
            return Err(NspError::config("feature_scale", "must be positive"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = self.dataset {
            out += &format!("dataset = {d}\n");
        }
        for (k, v) in self.nsp.entries() {
            out += &format!("{k} = {v:?}\n");
        }
        for (k, v) in self.train.entries() {
            out += &format!("{k} = {v}\n");
        }
        let d = &self.dims;
        out += &format!(
            "embed = {}\nlstm_hidden = {}\nmlp_hidden = {}\nlatent = {}\ncvae_feature = {}\nfeature_scale = {:?}\n",
            d.embed, d.lstm_hidden, d.mlp_hidden, d.latent, d.cvae_feature, d.feature_scale
        );
        out += &format!("stride = {}\ncollision_r = {:?}\n", self.stride, self.collision_radius);
        out
    }
}

fn split_paths(value: &str, base: &Path) -> Vec<PathBuf> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| base.join(s)).collect()
}
