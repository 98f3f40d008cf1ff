//! Video super-resolution through super-resolved optical flow.
//!
//! A flow network ([`ofrnet`]) estimates high-resolution optical flow between
//! low-resolution frames. The HR flows are folded onto the LR grid
//! ([`flow_ops`]), used to warp neighbouring frames into a draft cube, and the
//! cube is fused into a super-resolved luminance frame ([`srnet`]). Training,
//! degradation and evaluation utilities complete the pipeline.

pub mod config;
pub mod degradation;
mod error;
pub mod evalkit;
pub mod flo;
pub mod flow_ops;
pub mod frames;
pub mod model;
pub mod nn;
pub mod objective;
pub mod ofrnet;
mod scalar;
pub mod srnet;
pub mod synthetic;
pub mod trainer;

pub use config::NetworkConfig;
pub use error::{Error, Result};
pub use flow_ops::{FlowCube, FlowField, FlowLevel};
pub use frames::{Frame, FrameClip};
pub use model::Model;
pub use scalar::Scalar;
