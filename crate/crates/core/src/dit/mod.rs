//! A small diffusion transformer with low-rank adapters, trained with a
//! rectified-flow objective and sampled with Euler steps.
//!
//! Base weights are frozen. The trainable set is every adapter pair, the
//! keyframe query adapters, both guiders, the fusion projection and the
//! garment distillation layers.

pub mod block;
pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod flow;
pub mod lora;
pub mod model;
pub mod optim;
pub mod train;

pub use bundle::LatentBundle;
pub use config::{Ablations, ModelConfig, TrainConfig, DEFAULT_INFERENCE_STEPS, DEFAULT_LR};
pub use flow::{
    euler_integrate, flow_interpolate, sample_timestep, target_velocity, VelocityField,
};
pub use model::KeyTailorModel;
pub use optim::AdamW;
pub use train::{denoise, evaluate_loss, probe_draws, train_step, FlowDraw};
