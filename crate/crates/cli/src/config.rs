//! Run configuration (TOML). Every field can also be given as a flag; flags
//! win.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mri_forge_core::losses::LossConfig;
use mri_forge_core::perceptual::SsimConfig;
use serde::Deserialize;

use crate::Invalid;

/// Environment variable naming a run configuration file.
pub const CONFIG_ENV: &str = "MRI_FORGE_CONFIG";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: Option<u64>,
    pub paths: Paths,
    pub ssim: Option<SsimConfig>,
    pub losses: Option<LossConfig>,
    /// Dataset build policy file (augmentation/distraction knobs included).
    pub policy: Option<PathBuf>,
    pub grid: Grid,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub sources: Option<PathBuf>,
    pub boxes: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub thresholds: Option<Vec<f64>>,
    pub fractions: Option<Vec<f64>>,
}

impl RunConfig {
    /// Loads `explicit`, else the file named by `MRI_FORGE_CONFIG`, else an
    /// empty config. Relative paths are resolved against the file's
    /// directory.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let Some(path) = explicit.map(Path::to_path_buf).or(from_env) else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.sources);
        fix(&mut cfg.paths.boxes);
        fix(&mut cfg.paths.out_dir);
        fix(&mut cfg.policy);
        Ok(cfg)
    }

    pub fn seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        flag.or(self.master_seed).ok_or_else(|| {
            Invalid("a seed is required (--seed or master_seed in the config)".into()).into()
        })
    }
}

/// Reads a TOML file into `T`, reporting problems as validation errors.
pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    require_file(path)?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?)
}

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Invalid(format!("no such file: {}", path.display())).into())
    }
}

pub fn require_dir(path: &Path) -> anyhow::Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Invalid(format!("no such directory: {}", path.display())).into())
    }
}
