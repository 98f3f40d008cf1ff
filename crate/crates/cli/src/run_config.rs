//! Flat key-value run configuration for `flowsr train`.

use std::path::{Path, PathBuf};

use flowsr::degradation::{DegradationModel, DegradationSpec};
use flowsr::objective::LossWeights;
use flowsr::trainer::TrainConfig;
use flowsr::{Error, NetworkConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

/// Every key is optional; unset keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub scale: Option<usize>,
    pub radius: Option<usize>,
    pub channels: Option<usize>,

    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_decay_every: Option<u64>,
    pub lr_decay_factor: Option<f64>,
    pub max_steps: Option<u64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub lambda4: Option<f64>,

    /// Degradation used to synthesise LR frames when `lr_dir` is unset.
    pub degradation: Option<DegradationModel>,
    pub sigma: Option<f64>,

    /// HR training frames: one directory of PNGs or one subdirectory per sequence.
    pub hr_dir: Option<PathBuf>,
    /// Optional LR frames mirroring `hr_dir`.
    pub lr_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// printf-style frame name pattern such as `%08d.png`.
    pub template: Option<String>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub degradation: DegradationSpec,
    pub hr_dir: PathBuf,
    pub lr_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub template: Option<String>,
}

fn invalid_setting(e: Error) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Keys set in `other` replace ours.
    pub fn overlay(self, other: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset, scale, radius, channels, batch_size, patch_size, lr_initial, lr_decay_every,
            lr_decay_factor, max_steps, adam_beta1, adam_beta2, adam_epsilon, seed, checkpoint_every,
            lambda1, lambda2, lambda3, lambda4, degradation, sigma, hr_dir, lr_dir, output_dir, template
        )
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let preset = self.preset.unwrap_or(Preset::Desk);
        let scale = self.scale.unwrap_or(4);
        let mut network = match preset {
            Preset::Paper => NetworkConfig::paper(scale),
            Preset::Desk => NetworkConfig::desk(scale),
        };
        if preset == Preset::Paper
            && (self.channels.is_some_and(|c| c != network.channels) || self.radius.is_some_and(|r| r != network.radius))
        {
            return Err(Error::Config("preset `paper` fixes channels = 320 and radius = 1".into()));
        }
        if let Some(c) = self.channels {
            network.channels = c;
        }
        if let Some(r) = self.radius {
            network.radius = r;
        }
        network.validate().map_err(invalid_setting)?;

        let base = match preset {
            Preset::Paper => TrainConfig::paper(),
            Preset::Desk => TrainConfig::desk(),
        };
        let d = LossWeights::default();
        let train = TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            patch_size: self.patch_size.unwrap_or(base.patch_size),
            lr_initial: self.lr_initial.unwrap_or(base.lr_initial),
            lr_decay_every: self.lr_decay_every.unwrap_or(base.lr_decay_every),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(base.lr_decay_factor),
            max_steps: self.max_steps.unwrap_or(base.max_steps),
            adam_beta1: self.adam_beta1.unwrap_or(base.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(base.adam_beta2),
            adam_epsilon: self.adam_epsilon.unwrap_or(base.adam_epsilon),
            seed: self.seed.unwrap_or(base.seed),
            checkpoint_every: self.checkpoint_every.unwrap_or(base.checkpoint_every),
            weights: LossWeights {
                lambda1: self.lambda1.unwrap_or(d.lambda1),
                lambda2: self.lambda2.unwrap_or(d.lambda2),
                lambda3: self.lambda3.unwrap_or(d.lambda3),
                lambda4: self.lambda4.unwrap_or(d.lambda4),
            },
        };
        train.validate().map_err(invalid_setting)?;

        let degradation = match self.degradation.unwrap_or(DegradationModel::Bicubic) {
            DegradationModel::Bicubic => DegradationSpec::bicubic(scale),
            DegradationModel::BlurDecimate => DegradationSpec::blur_decimate(scale, self.sigma),
        };
        degradation.validate().map_err(invalid_setting)?;

        let hr_dir = self
            .hr_dir
            .clone()
            .ok_or_else(|| Error::Config("missing dataset path: set `hr_dir`".into()))?;
        Ok(Resolved {
            network,
            train,
            degradation,
            hr_dir,
            lr_dir: self.lr_dir.clone(),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("run")),
            template: self.template.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("batch = 3").unwrap_err();
        assert!(err.message().contains("unknown field"));
    }

    #[test]
    fn overlay_and_presets() {
        let file: RunConfig = toml::from_str("preset = \"paper\"\nscale = 4\nhr_dir = \"x\"\nmax_steps = 10").unwrap();
        let flags = RunConfig {
            max_steps: Some(20),
            ..Default::default()
        };
        let r = file.overlay(flags).resolve().unwrap();
        assert_eq!(r.network.channels, 320);
        assert_eq!(r.train.max_steps, 20);
        assert_eq!(r.train.batch_size, 32);

        let bad: RunConfig = toml::from_str("preset = \"paper\"\nchannels = 32\nhr_dir = \"x\"").unwrap();
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn missing_dataset_names_the_key() {
        let err = RunConfig::default().resolve().unwrap_err();
        assert!(err.to_string().contains("hr_dir"));
    }

    #[test]
    fn bd_sigma_default() {
        let c: RunConfig = toml::from_str("degradation = \"BD\"\nhr_dir = \"x\"").unwrap();
        assert_eq!(c.resolve().unwrap().degradation.sigma, 1.6);
    }
}
