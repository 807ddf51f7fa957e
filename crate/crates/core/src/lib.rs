//! Keyframe-driven details injection for video virtual try-on, at desk scale.
//!
//! The crate covers instruction-guided keyframe sampling, garment and
//! background latent enrichment, a small diffusion transformer trained with
//! flow matching and LoRA, synthetic scene generation and reference metrics.

pub mod dit;
pub mod error;
pub mod gradsuite;
pub mod keyframe;
pub mod latents;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
