//! Keyframe latents, background fusion and the three-step guidance fusion.
//!
//! Guidance tokens are built as follows, with patches of (1, 2, 2):
//! 1. `T_inp = patchify(concat(L_p, L_m))`; the patchified garment latent is
//!    repeated over latent frames, appended, and projected by `R` to `L`.
//! 2. `L̄ = [L | patchify(noise)]` along the token width.
//! 3. `patchify(L̄_bg)` is added onto the `L` columns of `L̄` ("addto").

use std::sync::Arc;

use crate::keyframe::scores::background_integrity_score;
use crate::keyframe::Frame;
use crate::numerics::layers::{linear, patchify};
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

use super::vae::ToyVae;

pub const PATCH: [usize; 3] = [1, 2, 2];
/// Values per token contributed by each latent channel.
pub const PATCH_AREA: usize = PATCH[0] * PATCH[1] * PATCH[2];
/// Default weight of the video background latent.
pub const DEFAULT_ALPHA: f64 = 0.3;

fn frame_by_index(frames: &[Frame], index: usize) -> Result<&Frame> {
    frames
        .iter()
        .find(|f| f.index == index)
        .ok_or_else(|| Error::Usage(format!("keyframe {index} is not among the frames")))
}

/// Image `[3×H×W]` multiplied by a `[H×W]` mask.
pub fn apply_mask(pixels: &Tensor, mask: &Tensor, invert: bool) -> Result<Tensor> {
    let n = mask.len();
    if pixels.len() != 3 * n {
        return Err(Error::Dimension(format!(
            "mask {:?} does not cover image {:?}",
            mask.shape(),
            pixels.shape()
        )));
    }
    let m = mask.data();
    Ok(Tensor::from_fn(pixels.shape().to_vec(), |i| {
        let k = if invert { 1.0 - m[i % n] } else { m[i % n] };
        pixels.data()[i] * k
    }))
}

/// Encoded garment region of every keyframe, in keyframe order.
pub fn extract_keyframe_garment_latents(
    keyframes: &[usize],
    frames: &[Frame],
    vae: &ToyVae,
) -> Result<Vec<Tensor>> {
    if keyframes.is_empty() {
        return Err(Error::Usage("no keyframes to encode".into()));
    }
    keyframes
        .iter()
        .map(|&k| {
            let f = frame_by_index(frames, k)?;
            vae.encode_image(&apply_mask(&f.pixels, &f.garment_mask, false)?)
        })
        .collect()
}

/// The keyframe with the most complete background and its encoded background.
#[derive(Clone, Debug)]
pub struct BackgroundKeyframe {
    pub index: usize,
    pub score: f64,
    pub latent: Tensor,
}

/// Picks the keyframe with the highest background integrity score (ties go to
/// the lowest frame index) and encodes its background.
pub fn background_keyframe_latent(
    keyframes: &[usize],
    frames: &[Frame],
    vae: &ToyVae,
    clarity_threshold: f64,
) -> Result<BackgroundKeyframe> {
    let mut best: Option<(usize, f64)> = None;
    for &k in keyframes {
        let s = background_integrity_score(frame_by_index(frames, k)?, clarity_threshold)?;
        let better = match best {
            None => true,
            Some((bk, bs)) => s > bs || (s == bs && k < bk),
        };
        if better {
            best = Some((k, s));
        }
    }
    let (index, score) =
        best.ok_or_else(|| Error::Usage("background selection needs keyframes".into()))?;
    let f = frame_by_index(frames, index)?;
    Ok(BackgroundKeyframe {
        index,
        score,
        latent: vae.encode_image(&apply_mask(&f.pixels, &f.human_mask, true)?)?,
    })
}

/// Repeats `x[C×H×W]` over `frames` as `[C×frames×H×W]`.
pub fn broadcast_frames<E: Real>(g: &mut Graph<E>, x: Var, frames: usize) -> Result<Var> {
    let &[c, h, w] = g.shape(x) else {
        return Err(Error::Shape(format!(
            "expected a per-frame latent [C×H×W], got {:?}",
            g.shape(x)
        )));
    };
    let n = h * w;
    let map: Vec<usize> = (0..c * frames * n)
        .map(|i| (i / (frames * n)) * n + i % n)
        .collect();
    g.gather(x, map, &[c, frames, h, w])
}

/// `L̄_bg = α·L_bg + (1 − α)·L_key`, with the single-frame `L_key` repeated over time.
pub fn cbdo_fuse<E: Real>(g: &mut Graph<E>, l_bg: Var, l_key: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let (bs, ks) = (g.shape(l_bg).to_vec(), g.shape(l_key).to_vec());
    let compatible = bs.len() == 4 && ks.len() == 3 && bs[0] == ks[0] && bs[2..] == ks[1..];
    if !compatible {
        return Err(Error::Shape(format!(
            "background latent {bs:?} and keyframe latent {ks:?} do not broadcast"
        )));
    }
    let key = broadcast_frames(g, l_key, bs[1])?;
    let a = g.scale(l_bg, alpha);
    let b = g.scale(key, 1.0 - alpha);
    g.add(a, b)
}

/// The bias-free projection `R` from `[T_inp | garment]` tokens to `L`.
#[derive(Clone, Debug)]
pub struct FusionProjection {
    pub weight: ParamId,
}

impl FusionProjection {
    /// Identity on the leading `T_inp` columns plus Gaussian noise of `noise_std`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        noise_std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let mut w = Tensor::randn([out_width, in_width], noise_std, rng);
        for i in 0..out_width.min(in_width) {
            w.data_mut()[i * in_width + i] += 1.0;
        }
        FusionProjection {
            weight: store.add(name, w, true),
        }
    }

    pub fn in_width(&self, store: &ParamStore) -> usize {
        store.get(self.weight).value.shape()[1]
    }

    pub fn out_width(&self, store: &ParamStore) -> usize {
        store.get(self.weight).value.shape()[0]
    }
}

/// Latents entering the fusion, all as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct FusionInputs {
    /// `[C_p × T' × H' × W']`.
    pub pose: Var,
    /// `[C_m × T' × H' × W']`.
    pub mask: Var,
    /// `[C × H' × W']`.
    pub garment: Var,
    /// `[C × T' × H' × W']`, the noisy latent being denoised.
    pub noise: Var,
    /// `[C × T' × H' × W']`.
    pub background: Var,
}

fn check_grid(g_shape: &[usize], grid: &[usize], name: &str) -> Result<()> {
    if g_shape.len() != 4 || g_shape[1..] != grid[1..] {
        return Err(Error::Shape(format!(
            "{name} latent {g_shape:?} is not on the grid {grid:?}"
        )));
    }
    Ok(())
}

/// Guidance tokens `[N × (w_L + 4C)]`, `N = T'·H'/2·W'/2`.
pub fn fuse_guidance<E: Real>(
    g: &mut Graph<E>,
    store: &ParamStore,
    r: &FusionProjection,
    x: FusionInputs,
) -> Result<Var> {
    let grid = g.shape(x.noise).to_vec();
    if grid.len() != 4 {
        return Err(Error::Shape(format!(
            "noise latent must be [C×T'×H'×W'], got {grid:?}"
        )));
    }
    check_grid(g.shape(x.pose), &grid, "pose")?;
    check_grid(g.shape(x.mask), &grid, "mask")?;
    if g.shape(x.background) != grid.as_slice() {
        return Err(Error::Shape(format!(
            "background latent {:?} does not match noise latent {grid:?}",
            g.shape(x.background)
        )));
    }
    let gs = g.shape(x.garment).to_vec();
    if gs.len() != 3 || gs[1..] != grid[2..] {
        return Err(Error::Shape(format!(
            "garment latent {gs:?} is not on the spatial grid {:?}",
            &grid[2..]
        )));
    }
    let cond = g.concat(&[x.pose, x.mask], 0)?;
    let t_inp = patchify(g, cond, PATCH)?;
    let garment = g.reshape(x.garment, &[gs[0], 1, gs[1], gs[2]])?;
    let garment = patchify(g, garment, PATCH)?;
    let per_frame = g.shape(garment)[0];
    let gw = g.shape(garment)[1];
    let n = g.shape(t_inp)[0];
    let map: Arc<[usize]> = (0..n * gw)
        .map(|i| ((i / gw) % per_frame) * gw + i % gw)
        .collect();
    let garment = g.gather(garment, map, &[n, gw])?;
    let joined = g.concat(&[t_inp, garment], 1)?;
    let want = r.in_width(store);
    if g.shape(joined)[1] != want {
        return Err(Error::Dimension(format!(
            "fusion projection expects width {want}, tokens have {}",
            g.shape(joined)[1]
        )));
    }
    let w = g.param(store, r.weight);
    let l = linear(g, joined, w, None)?;
    let bg = patchify(g, x.background, PATCH)?;
    if g.shape(bg) != g.shape(l) {
        return Err(Error::Dimension(format!(
            "background tokens {:?} do not match fused tokens {:?}",
            g.shape(bg),
            g.shape(l)
        )));
    }
    let l = g.add(l, bg)?;
    let noise = patchify(g, x.noise, PATCH)?;
    g.concat(&[l, noise], 1)
}
