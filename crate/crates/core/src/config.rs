use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default negative slope of every leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Network hyper-parameters shared by the flow and SR networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Upscaling factor `s`.
    pub scale: usize,
    /// Temporal radius `N`; clips hold `2N + 1` frames.
    pub radius: usize,
    /// Feature width of every hidden layer.
    pub channels: usize,
    /// Residual blocks inside the shared recurrent module.
    pub recurrent_blocks: usize,
    /// Residual blocks in the flow SR tail.
    pub flow_sr_blocks: usize,
    /// Residual blocks in the SR network.
    pub sr_blocks: usize,
    pub slope: f64,
}

impl NetworkConfig {
    /// Full-width configuration (320 channels, `N = 1`).
    pub fn paper(scale: usize) -> Self {
        Self {
            scale,
            radius: 1,
            channels: 320,
            recurrent_blocks: 3,
            flow_sr_blocks: 3,
            sr_blocks: 8,
            slope: LEAKY_SLOPE,
        }
    }

    /// Reduced-width configuration for CPU experiments.
    pub fn desk(scale: usize) -> Self {
        Self {
            channels: 32,
            ..Self::paper(scale)
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn frames(&self) -> usize {
        2 * self.radius + 1
    }

    /// Channels of the draft cube, `2 N s^2 + 1`.
    pub fn cube_channels(&self) -> usize {
        2 * self.radius * self.scale * self.scale + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::Config(format!("scale {} must be >= 2", self.scale)));
        }
        if self.radius == 0 {
            return Err(Error::Config("temporal radius must be >= 1".into()));
        }
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::Config(format!(
                "channel width {} must be even and positive",
                self.channels
            )));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("slope {} outside (0, 1)", self.slope)));
        }
        Ok(())
    }
}
