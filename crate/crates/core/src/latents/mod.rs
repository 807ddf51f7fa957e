//! Conditioning latents: the toy encoder, garment distillation, background
//! fusion, the guiders and the token-level guidance fusion.
//!
//! Every latent feeding the fusion lives on one grid: `C` channels,
//! `⌈T/4⌉` frames and `H/8 × W/8` sites. Image latents share the spatial
//! grid and are repeated over frames where needed. The guiders reduce by 16
//! spatially and then expand 2×2, so inputs must have `H` and `W` divisible
//! by 16.

pub mod fusion;
pub mod gdde;
pub mod guider;
pub mod vae;

pub use fusion::{
    background_keyframe_latent, cbdo_fuse, extract_keyframe_garment_latents, fuse_guidance,
    BackgroundKeyframe, FusionInputs, FusionProjection, DEFAULT_ALPHA,
};
pub use gdde::{gdde_distill, DistillComponent};
pub use guider::GuiderNet;
pub use vae::{first_frame_tryon, resize_mask, MaskCompositor, ToyVae, TryOnModel};
