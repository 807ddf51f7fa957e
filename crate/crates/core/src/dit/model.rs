//! The full conditioned velocity model.
//!
//! A forward pass has two stages. The conditioning stage turns a
//! [`LatentBundle`] into the pose, mask, garment and background latents,
//! honouring the ablation switches. The token stage fuses them with the
//! noisy latent, embeds the result to width `d` with a fixed
//! `[I | −I]` stem (fused guidance minus noise), adds a timestep embedding,
//! runs the blocks and maps back to the latent grid with a fixed identity
//! head. The head output estimates `x1 − x_t`; dividing by `1 − t` turns it
//! into a velocity, so at initialization the model already behaves like a
//! denoiser that trusts its conditioning. Only the conditioning stage
//! depends on the bundle, so sampling evaluates it once.

use crate::latents::fusion::{broadcast_frames, PATCH};
use crate::latents::gdde::mean_latent;
use crate::latents::{cbdo_fuse, fuse_guidance, gdde_distill};
use crate::latents::{DistillComponent, FusionInputs, FusionProjection, GuiderNet};
use crate::numerics::layers::{patchify, unpatchify};
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

use super::block::{BlockInputs, DiTBlock};
use super::bundle::LatentBundle;
use super::config::{Ablations, ModelConfig};

/// Noise added to the identity initialization of the fusion projection.
pub const FUSION_INIT_NOISE: f64 = 0.01;
pub const TIME_INIT_STD: f64 = 0.02;
/// Timesteps in `[0, 1]` are stretched to this range before the sinusoids.
pub const TIME_SCALE: f64 = 1000.0;
/// Lower bound on `1 − t` in the velocity head.
pub const MIN_REMAINING_TIME: f64 = 0.05;

/// Conditioning latents as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    /// `L_p`.
    pub pose: Var,
    /// Mask latent entering the fusion (with the keyframe background appended under `no-fusion`).
    pub mask: Var,
    /// `L̄_g`.
    pub garment: Var,
    /// `L_bg`.
    pub video_background: Var,
    /// `L̄_bg`.
    pub background: Var,
    /// Pooled keyframe vector `[1 × 4C]`, absent under `no-qkey`.
    pub keyframe_pool: Option<Var>,
}

/// Conditioning values detached from any graph.
#[derive(Clone, Debug)]
pub struct ConditioningValues<E: Real = f32> {
    pub pose: Tensor<E>,
    pub mask: Tensor<E>,
    pub garment: Tensor<E>,
    pub video_background: Tensor<E>,
    pub background: Tensor<E>,
    pub keyframe_pool: Option<Tensor<E>>,
}

impl Conditioning {
    pub fn values<E: Real>(&self, g: &Graph<E>) -> ConditioningValues<E> {
        ConditioningValues {
            pose: g.value(self.pose).clone(),
            mask: g.value(self.mask).clone(),
            garment: g.value(self.garment).clone(),
            video_background: g.value(self.video_background).clone(),
            background: g.value(self.background).clone(),
            keyframe_pool: self.keyframe_pool.map(|v| g.value(v).clone()),
        }
    }
}

impl<E: Real> ConditioningValues<E> {
    /// Binds the values as constants of `g`.
    pub fn bind(&self, g: &mut Graph<E>) -> Conditioning {
        Conditioning {
            pose: g.constant(self.pose.clone()),
            mask: g.constant(self.mask.clone()),
            garment: g.constant(self.garment.clone()),
            video_background: g.constant(self.video_background.clone()),
            background: g.constant(self.background.clone()),
            keyframe_pool: self.keyframe_pool.as_ref().map(|t| g.constant(t.clone())),
        }
    }
}

/// Intermediate nodes of one forward pass, for activation diffing.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub conditioning: Conditioning,
    pub guidance: Var,
    pub hidden: Vec<Var>,
    pub velocity: Var,
}

#[derive(Clone, Debug)]
pub struct KeyTailorModel {
    config: ModelConfig,
    ablations: Ablations,
    pub store: ParamStore,
    pub pose_guider: GuiderNet,
    pub mask_guider: GuiderNet,
    pub distill: DistillComponent,
    pub fusion: FusionProjection,
    pub in_proj: ParamId,
    pub time_proj: ParamId,
    pub out_proj: ParamId,
    pub blocks: Vec<DiTBlock>,
    /// When false the blocks run their frozen base weights only.
    pub adapters: bool,
}

/// `[sin(s·f_i) | cos(s·f_i)]` with `s = 1000·t` and `f_i = 10000^(−i/half)`.
pub fn timestep_embedding(t: f64, width: usize) -> Tensor<f64> {
    let half = width / 2;
    let s = t * TIME_SCALE;
    Tensor::from_fn([1, width], |i| {
        let k = i % half;
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        if i < half {
            (s * f).sin()
        } else {
            (s * f).cos()
        }
    })
}

impl KeyTailorModel {
    pub fn new(config: ModelConfig, ablations: Ablations) -> Result<Self> {
        config.validate()?;
        ablations.validate()?;
        let root = SeededRng::new(config.seed);
        let c = config.latent_channels;
        let d = config.width;
        let tw = config.token_width();
        let mut store = ParamStore::new();
        let pose_guider = GuiderNet::new(&mut store, "pose_guider", 3, c, &mut root.fork(1));
        let mask_guider = GuiderNet::new(&mut store, "mask_guider", 3, c, &mut root.fork(2));
        let distill = DistillComponent::new(&mut store, "distill", c, &mut root.fork(3));
        let cond_width = 4 * (c + ablations.mask_channels(c));
        let fusion = FusionProjection::new(
            &mut store,
            "fusion.r",
            cond_width + tw,
            tw,
            FUSION_INIT_NOISE,
            &mut root.fork(4),
        );
        let stem = Tensor::from_fn([d, 2 * tw], |i| {
            let (r, col) = (i / (2 * tw), i % (2 * tw));
            if col == r {
                1.0
            } else if col == r + tw {
                -1.0
            } else {
                0.0
            }
        });
        let in_proj = store.add("stem.in", stem, false);
        let time_proj = store.add(
            "stem.time",
            Tensor::randn([d, d], TIME_INIT_STD, &mut root.fork(5)),
            false,
        );
        let out_proj = store.add("head.out", Tensor::eye(d), false);
        let block_rng = root.fork(6);
        let blocks = (0..config.blocks)
            .map(|i| {
                DiTBlock::new(
                    &mut store,
                    &format!("block{i}"),
                    d,
                    config.heads,
                    config.rank,
                    tw,
                    &mut block_rng.fork(i as u64),
                )
            })
            .collect();
        Ok(KeyTailorModel {
            config,
            ablations,
            store,
            pose_guider,
            mask_guider,
            distill,
            fusion,
            in_proj,
            time_proj,
            out_proj,
            blocks,
            adapters: true,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablations(&self) -> &Ablations {
        &self.ablations
    }

    /// Every LoRA `B` and keyframe `B_key` matrix.
    pub fn adapter_b_ids(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| {
                let mut ids: Vec<ParamId> = b.lora_layers().iter().map(|l| l.b).collect();
                ids.push(b.key.b);
                ids
            })
            .collect()
    }

    /// Replaces every all-zero trainable tensor with `N(0, std²)` noise so
    /// that paths silent at initialization carry signal. For diagnostics.
    pub fn perturb_silent_params(&mut self, std: f64, rng: &mut SeededRng) {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let p = self.store.get_mut(id);
            if p.trainable && p.value.data().iter().all(|&v| v == 0.0) {
                p.value = Tensor::randn(p.value.shape().to_vec(), std, rng);
            }
        }
    }

    /// Conditioning stage.
    pub fn condition<E: Real>(
        &self,
        g: &mut Graph<E>,
        bundle: &LatentBundle,
    ) -> Result<Conditioning> {
        bundle.validate()?;
        let c = self.config.latent_channels;
        if bundle.latent_channels() != c {
            return Err(Error::Dimension(format!(
                "bundle has {} latent channels, model expects {c}",
                bundle.latent_channels()
            )));
        }
        let a = &self.ablations;
        let store = &self.store;
        let constant = |g: &mut Graph<E>, t: &Tensor| g.constant(t.cast());

        let pose_maps = constant(g, &bundle.pose_maps);
        let pose = self.pose_guider.forward(g, store, pose_maps)?;

        let video_background = if a.no_cbdo {
            constant(g, &bundle.agnostic_latent)
        } else {
            let agnostic = constant(g, &bundle.agnostic);
            self.mask_guider.forward(g, store, agnostic)?
        };
        let key_bg = constant(g, &bundle.key_background);
        let background = if a.no_keybg || a.no_fusion || a.no_cbdo {
            video_background
        } else {
            cbdo_fuse(g, video_background, key_bg, self.config.alpha)?
        };

        let mask_latent = constant(g, &bundle.mask_latent);
        let mask = if a.no_fusion {
            let frames = bundle.mask_latent.shape()[1];
            let key = broadcast_frames(g, key_bg, frames)?;
            g.concat(&[mask_latent, key], 0)?
        } else {
            mask_latent
        };

        let keyframes: Vec<Var> = bundle
            .keyframe_latents()?
            .iter()
            .map(|t| constant(g, t))
            .collect();
        let l_g = constant(g, &bundle.garment_latent);
        let garment = if a.no_distill {
            l_g
        } else if a.no_gdde {
            constant(g, &bundle.reference_latent)
        } else {
            gdde_distill(g, store, &self.distill, l_g, &keyframes)?
        };

        let keyframe_pool = if a.no_qkey {
            None
        } else {
            Some(self.pool_keyframes(g, &keyframes)?)
        };
        Ok(Conditioning {
            pose,
            mask,
            garment,
            video_background,
            background,
            keyframe_pool,
        })
    }

    /// Token mean of the patchified mean keyframe latent, `[1 × 4C]`.
    fn pool_keyframes<E: Real>(&self, g: &mut Graph<E>, keyframes: &[Var]) -> Result<Var> {
        let mean = mean_latent(g, keyframes)?;
        let tokens = self.image_tokens(g, mean)?;
        let n = g.shape(tokens)[0];
        let ones = g.constant(Tensor::full([1, n], E::from_f64(1.0 / n as f64)));
        g.matmul(ones, tokens)
    }

    /// Patch tokens `[M × 4C]` of an image latent `[C × H' × W']`.
    fn image_tokens<E: Real>(&self, g: &mut Graph<E>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let x = g.reshape(x, &[s[0], 1, s[1], s[2]])?;
        patchify(g, x, PATCH)
    }

    /// Token stage: predicted velocity `[C × T' × H' × W']` for `x_t` at time `t`.
    pub fn velocity<E: Real>(
        &self,
        g: &mut Graph<E>,
        cond: &Conditioning,
        x_t: Var,
        t: f64,
    ) -> Result<ForwardTrace> {
        let store = &self.store;
        let grid = g.shape(x_t).to_vec();
        if grid.len() != 4 || grid[0] != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "noisy latent {grid:?} does not have {} channels",
                self.config.latent_channels
            )));
        }
        let guidance = fuse_guidance(
            g,
            store,
            &self.fusion,
            FusionInputs {
                pose: cond.pose,
                mask: cond.mask,
                garment: cond.garment,
                noise: x_t,
                background: cond.background,
            },
        )?;
        let w_in = g.param(store, self.in_proj);
        let mut h = g.matmul_bt(guidance, w_in)?;
        let d = self.config.width;
        let temb = g.constant(timestep_embedding(t, d).cast());
        let w_t = g.param(store, self.time_proj);
        let temb = g.matmul_bt(temb, w_t)?;
        let temb = g.reshape(temb, &[d])?;
        h = g.add_row_vector(h, temb)?;
        let garment = self.image_tokens(g, cond.garment)?;
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(
                g,
                store,
                BlockInputs {
                    hidden: h,
                    garment,
                    pooled_keyframe: cond.keyframe_pool,
                    adapt: self.adapters,
                },
            )?;
            hidden.push(h);
        }
        let w_out = g.param(store, self.out_proj);
        let out = g.matmul_bt(h, w_out)?;
        let out = g.scale(out, 1.0 / (1.0 - t).max(MIN_REMAINING_TIME));
        let velocity = unpatchify(g, out, [grid[0], grid[1], grid[2], grid[3]], PATCH)?;
        Ok(ForwardTrace {
            conditioning: *cond,
            guidance,
            hidden,
            velocity,
        })
    }

    /// Both stages in one graph.
    pub fn forward<E: Real>(
        &self,
        g: &mut Graph<E>,
        bundle: &LatentBundle,
        x_t: Var,
        t: f64,
    ) -> Result<ForwardTrace> {
        let cond = self.condition(g, bundle)?;
        self.velocity(g, &cond, x_t, t)
    }

    /// Velocity for tensors, without gradients.
    pub fn predict(&self, bundle: &LatentBundle, x_t: &Tensor, t: f64) -> Result<Tensor> {
        let mut g = Graph::<f32>::inference();
        let x = g.constant(x_t.clone());
        let trace = self.forward(&mut g, bundle, x, t)?;
        Ok(g.value(trace.velocity).clone())
    }
}
