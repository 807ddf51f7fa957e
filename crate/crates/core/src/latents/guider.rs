//! Convolutional guiders that project a video onto the latent grid.
//!
//! Four 3×3×3 convolutions (32, 96, 192, 256 channels, strides (1,2,2),
//! (1,2,2), (2,2,2), (2,2,2)) with SiLU reduce `[3 × T × H × W]` to
//! `[256 × ⌈T/4⌉ × H/16 × W/16]`. A zero-initialized pointwise linear layer
//! then emits `4C` values per site, which are rearranged 2×2 depth-to-space
//! onto the `[C × ⌈T/4⌉ × H/8 × W/8]` latent grid. Because the last layer
//! starts at zero, a fresh guider outputs exact zeros.

use crate::numerics::layers::{linear, unpatchify};
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

use super::vae::latent_frames;

pub const CHANNELS: [usize; 4] = [32, 96, 192, 256];
pub const STRIDES: [[usize; 3]; 4] = [[1, 2, 2], [1, 2, 2], [2, 2, 2], [2, 2, 2]];
pub const KERNEL: usize = 3;
/// Spatial reduction of the convolution stack.
pub const SPATIAL_REDUCTION: usize = 16;

#[derive(Clone, Debug)]
pub struct GuiderNet {
    convs: Vec<(ParamId, ParamId)>,
    proj_w: ParamId,
    proj_b: ParamId,
    latent_channels: usize,
}

impl GuiderNet {
    /// Registers the guider's parameters as trainable under `prefix`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        latent_channels: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut convs = Vec::with_capacity(CHANNELS.len());
        let mut c_in = in_channels;
        for (i, &c_out) in CHANNELS.iter().enumerate() {
            let fan_in = c_in * KERNEL.pow(3);
            let w = Tensor::randn(
                [c_out, c_in, KERNEL, KERNEL, KERNEL],
                1.0 / (fan_in as f64).sqrt(),
                rng,
            );
            let w = store.add(format!("{prefix}.conv{i}.w"), w, true);
            let b = store.add(format!("{prefix}.conv{i}.b"), Tensor::zeros([c_out]), true);
            convs.push((w, b));
            c_in = c_out;
        }
        let width = 4 * latent_channels;
        let proj_w = store.add(
            format!("{prefix}.proj.w"),
            Tensor::zeros([width, c_in]),
            true,
        );
        let proj_b = store.add(format!("{prefix}.proj.b"), Tensor::zeros([width]), true);
        GuiderNet {
            convs,
            proj_w,
            proj_b,
            latent_channels,
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    /// Output grid `[C, ⌈T/4⌉, H/8, W/8]` for an input of `T × H × W`.
    pub fn output_shape(&self, t: usize, h: usize, w: usize) -> Result<[usize; 4]> {
        if h % SPATIAL_REDUCTION != 0 || w % SPATIAL_REDUCTION != 0 {
            return Err(Error::Shape(format!(
                "guider input {h}×{w} must be divisible by {SPATIAL_REDUCTION}"
            )));
        }
        Ok([self.latent_channels, latent_frames(t), h / 8, w / 8])
    }

    pub fn forward<E: Real>(&self, g: &mut Graph<E>, store: &ParamStore, x: Var) -> Result<Var> {
        let &[_, t, h, w] = g.shape(x) else {
            return Err(Error::Shape(format!(
                "guider expects [C×T×H×W], got {:?}",
                g.shape(x)
            )));
        };
        let grid = self.output_shape(t, h, w)?;
        let mut y = x;
        for (&(wt, b), &stride) in self.convs.iter().zip(&STRIDES) {
            let (wv, bv) = (g.param(store, wt), g.param(store, b));
            y = g.conv3d(y, wv, bv, stride)?;
            y = g.silu(y);
        }
        let fs = g.shape(y).to_vec();
        let sites = fs[1..].iter().product::<usize>();
        debug_assert_eq!(fs[1], grid[1]);
        let flat = g.reshape(y, &[fs[0], sites])?;
        let rows = g.transpose(flat)?;
        let (pw, pb) = (g.param(store, self.proj_w), g.param(store, self.proj_b));
        let tokens = linear(g, rows, pw, Some(pb))?;
        unpatchify(g, tokens, grid, [1, 2, 2])
    }

    /// Inference-only convenience over tensors.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::inference();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, store, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.convs.iter().flat_map(|&(w, b)| [w, b]).collect();
        ids.extend([self.proj_w, self.proj_b]);
        ids
    }
}
