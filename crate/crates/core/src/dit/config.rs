use std::fmt;

use crate::{Error, Result};

/// Architecture of the toy backbone and its conditioning branches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub rank: usize,
    /// Latent channels `C`; tokens are `4C` wide and the stem expects `d = 4C`.
    pub latent_channels: usize,
    /// Weight of the video background latent in the background fusion.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            blocks: 2,
            width: 64,
            heads: 4,
            rank: 4,
            latent_channels: 16,
            alpha: crate::latents::DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.width == 0 || self.rank == 0 {
            return Err(Error::Config(
                "blocks, width and rank must be positive".into(),
            ));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide width {}",
                self.heads, self.width
            )));
        }
        if self.width != 4 * self.latent_channels {
            return Err(Error::Config(format!(
                "width {} must equal 4 × latent channels ({})",
                self.width, self.latent_channels
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::Config("width must be even".into()));
        }
        if self.rank > self.width {
            return Err(Error::Config(format!(
                "rank {} exceeds width {}",
                self.rank, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Width of one patch token of a `C`-channel latent.
    pub fn token_width(&self) -> usize {
        4 * self.latent_channels
    }
}

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_INFERENCE_STEPS: usize = 25;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 1,
            steps: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted and turns every update into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "eps must be positive and weight decay non-negative".into(),
            ));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "only batch size 1 is supported, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Module switches mirroring the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Three random frames instead of instruction-guided sampling.
    pub no_iks: bool,
    /// Only the first frame as keyframe.
    pub keyframes_1: bool,
    /// Use the first-frame garment latent without distillation.
    pub no_distill: bool,
    /// Garment latent from the reference image; no keyframe distillation.
    pub no_gdde: bool,
    /// No keyframe query bias.
    pub no_qkey: bool,
    /// Background from the agnostic video only.
    pub no_keybg: bool,
    /// Keyframe background concatenated to the mask latent instead of blended.
    pub no_fusion: bool,
    /// Plain encoding of the agnostic video; no mask guider, no keyframe background.
    pub no_cbdo: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 8] = [
        "no-iks",
        "keyframes-1",
        "no-distill",
        "no-gdde",
        "no-qkey",
        "no-keybg",
        "no-fusion",
        "no-cbdo",
    ];

    fn flags(&self) -> [bool; 8] {
        [
            self.no_iks,
            self.keyframes_1,
            self.no_distill,
            self.no_gdde,
            self.no_qkey,
            self.no_keybg,
            self.no_fusion,
            self.no_cbdo,
        ]
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "no-iks" => &mut self.no_iks,
            "keyframes-1" => &mut self.keyframes_1,
            "no-distill" => &mut self.no_distill,
            "no-gdde" => &mut self.no_gdde,
            "no-qkey" => &mut self.no_qkey,
            "no-keybg" => &mut self.no_keybg,
            "no-fusion" => &mut self.no_fusion,
            "no-cbdo" => &mut self.no_cbdo,
            other => return Err(Error::Config(format!("unknown ablation {other:?}"))),
        };
        *slot = on;
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        Self::NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Rejects combinations that switch the same data path two ways.
    pub fn validate(&self) -> Result<()> {
        let groups: [&[(&str, bool)]; 3] = [
            &[("no-iks", self.no_iks), ("keyframes-1", self.keyframes_1)],
            &[("no-distill", self.no_distill), ("no-gdde", self.no_gdde)],
            &[
                ("no-keybg", self.no_keybg),
                ("no-fusion", self.no_fusion),
                ("no-cbdo", self.no_cbdo),
            ],
        ];
        for group in groups {
            let on: Vec<&str> = group.iter().filter(|(_, b)| *b).map(|(n, _)| *n).collect();
            if on.len() > 1 {
                return Err(Error::Config(format!(
                    "ablations {} are mutually exclusive",
                    on.join(" and ")
                )));
            }
        }
        Ok(())
    }

    /// Channels of the mask latent entering the fusion.
    pub fn mask_channels(&self, latent_channels: usize) -> usize {
        if self.no_fusion {
            1 + latent_channels
        } else {
            1
        }
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let active = self.active();
        if active.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&active.join(","))
        }
    }
}
