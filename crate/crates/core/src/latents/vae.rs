//! Fixed patch-projection encoder and decoder standing in for a learned VAE.
//!
//! An image is cut into 8×8 patches (192 values each) and every patch is
//! projected onto the `C` coarsest directions of a colour-opponent 2D DCT
//! basis, so a truncated latent still decodes to a blurred image. Decoding
//! multiplies by the transposed projection, so with `C = 192` the round trip
//! is exact up to rounding. Videos are encoded frame by frame and
//! mean-pooled over groups of [`TEMPORAL_STRIDE`] frames; decoding repeats
//! each latent frame over its group.

use crate::numerics::kernels::{matmul_t, patchify, unpatchify};
use crate::numerics::{SeededRng, Tensor};
use crate::synth::video_frame;
use crate::{Error, Result};

pub const SPATIAL_STRIDE: usize = 8;
pub const TEMPORAL_STRIDE: usize = 4;
/// Values per RGB patch.
pub const PATCH_WIDTH: usize = 3 * SPATIAL_STRIDE * SPATIAL_STRIDE;

/// Number of latent frames for `t` video frames.
pub fn latent_frames(t: usize) -> usize {
    t.div_ceil(TEMPORAL_STRIDE)
}

#[derive(Clone, Debug)]
pub struct ToyVae {
    /// `[C × 192]` with orthonormal rows.
    projection: Tensor,
}

/// Orthonormal colour transform: luma then two opponent chroma axes.
const COLOR_BASIS: [[f64; 3]; 3] = [
    [0.577_350_269_189_625_8; 3],
    [0.707_106_781_186_547_6, -0.707_106_781_186_547_6, 0.0],
    [
        0.408_248_290_463_863,
        0.408_248_290_463_863,
        -0.816_496_580_927_726,
    ],
];

/// Orthonormal 8×8 DCT-II basis value for frequency `(u, v)` at `(y, x)`.
fn dct(u: usize, v: usize, y: usize, x: usize) -> f64 {
    let n = SPATIAL_STRIDE as f64;
    let a = |k: usize| {
        if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        }
    };
    let c = |k: usize, p: usize| {
        (std::f64::consts::PI * (2 * p + 1) as f64 * k as f64 / (2.0 * n)).cos()
    };
    a(u) * a(v) * c(u, y) * c(v, x)
}

/// The first `rows` colour-frequency basis patches, coarse first: chroma
/// counts as two extra frequency steps. Each row gets a seeded sign.
fn frequency_rows(rows: usize, rng: &mut SeededRng) -> Tensor {
    let s = SPATIAL_STRIDE;
    let mut order: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(PATCH_WIDTH);
    for color in 0..3 {
        for u in 0..s {
            for v in 0..s {
                let key = u + v + if color == 0 { 0 } else { 2 };
                order.push((key, color, u, v));
            }
        }
    }
    order.sort();
    let mut data = Vec::with_capacity(rows * PATCH_WIDTH);
    for &(_, color, u, v) in order.iter().take(rows) {
        let sign = if rng.chance(0.5) { -1.0 } else { 1.0 };
        for ch in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    data.push((sign * COLOR_BASIS[color][ch] * dct(u, v, y, x)) as f32);
                }
            }
        }
    }
    Tensor::new([rows, PATCH_WIDTH], data).expect("extents match")
}

impl ToyVae {
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 || channels > PATCH_WIDTH {
            return Err(Error::Config(format!(
                "latent channels must be in 1..={PATCH_WIDTH}, got {channels}"
            )));
        }
        let mut rng = SeededRng::new(seed).fork(0x7a);
        Ok(ToyVae {
            projection: frequency_rows(channels, &mut rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.projection.shape()[0]
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }

    /// `[3 × H × W]` → `[C × H/8 × W/8]`.
    pub fn encode_image(&self, image: &Tensor) -> Result<Tensor> {
        let &[3, h, w] = image.shape() else {
            return Err(Error::Shape(format!(
                "encoder expects [3×H×W], got {:?}",
                image.shape()
            )));
        };
        if h % SPATIAL_STRIDE != 0 || w % SPATIAL_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "image {h}×{w} is not divisible by {SPATIAL_STRIDE}"
            )));
        }
        let x = image.clone().reshape([3, 1, h, w])?;
        let tokens = patchify(&x, [1, SPATIAL_STRIDE, SPATIAL_STRIDE])?;
        // [C × 192] · [N × 192]ᵀ = [C × N], already channel-first
        let z = matmul_t(&self.projection, false, &tokens, true)?;
        z.reshape([self.channels(), h / SPATIAL_STRIDE, w / SPATIAL_STRIDE])
    }

    /// `[C × H' × W']` → `[3 × 8H' × 8W']`.
    pub fn decode_image(&self, latent: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        let &[lc, h, w] = latent.shape() else {
            return Err(Error::Shape(format!(
                "decoder expects [C×H'×W'], got {:?}",
                latent.shape()
            )));
        };
        if lc != c {
            return Err(Error::Shape(format!(
                "latent has {lc} channels, decoder expects {c}"
            )));
        }
        let z = latent.clone().reshape([c, h * w])?;
        // [C × N]ᵀ · [C × 192] = [N × 192]
        let tokens = matmul_t(&z, true, &self.projection, false)?;
        let img = unpatchify(
            &tokens,
            [3, 1, h * SPATIAL_STRIDE, w * SPATIAL_STRIDE],
            [1, SPATIAL_STRIDE, SPATIAL_STRIDE],
        )?;
        img.reshape([3, h * SPATIAL_STRIDE, w * SPATIAL_STRIDE])
    }

    /// `[3 × T × H × W]` → `[C × ⌈T/4⌉ × H/8 × W/8]`.
    pub fn encode_video(&self, video: &Tensor) -> Result<Tensor> {
        let &[3, t, _, _] = video.shape() else {
            return Err(Error::Shape(format!(
                "video encoder expects [3×T×H×W], got {:?}",
                video.shape()
            )));
        };
        let frames = (0..t)
            .map(|i| self.encode_image(&video_frame(video, i)?))
            .collect::<Result<Vec<_>>>()?;
        temporal_pool(&frames)
    }

    /// Inverse of [`ToyVae::encode_video`] up to temporal pooling; returns `frames` frames.
    pub fn decode_video(&self, latent: &Tensor, frames: usize) -> Result<Tensor> {
        let &[c, tl, h, w] = latent.shape() else {
            return Err(Error::Shape(format!(
                "video decoder expects [C×T'×H'×W'], got {:?}",
                latent.shape()
            )));
        };
        if latent_frames(frames) != tl {
            return Err(Error::Shape(format!(
                "{tl} latent frames cannot decode to {frames} frames"
            )));
        }
        let decoded = (0..tl)
            .map(|i| self.decode_image(&video_frame(latent, i)?.reshape([c, h, w])?))
            .collect::<Result<Vec<_>>>()?;
        let (oh, ow) = (h * SPATIAL_STRIDE, w * SPATIAL_STRIDE);
        let n = oh * ow;
        let mut out = vec![0.0; 3 * frames * n];
        for t in 0..frames {
            let src = decoded[t / TEMPORAL_STRIDE].data();
            for ch in 0..3 {
                out[(ch * frames + t) * n..(ch * frames + t + 1) * n]
                    .copy_from_slice(&src[ch * n..(ch + 1) * n]);
            }
        }
        Tensor::new([3, frames, oh, ow], out)
    }
}

/// Means of consecutive groups of [`TEMPORAL_STRIDE`] frames (the last group may be short),
/// stacked as `[C × T' × H × W]`.
pub fn temporal_pool(frames: &[Tensor]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Shape("cannot pool zero frames".into()))?;
    let &[c, h, w] = first.shape() else {
        return Err(Error::Shape(format!(
            "temporal pooling expects [C×H×W] frames, got {:?}",
            first.shape()
        )));
    };
    let tl = latent_frames(frames.len());
    let n = h * w;
    let mut out = vec![0.0f32; c * tl * n];
    for (g, group) in frames.chunks(TEMPORAL_STRIDE).enumerate() {
        let inv = 1.0 / group.len() as f64;
        for ch in 0..c {
            for i in 0..n {
                let s: f64 = group.iter().map(|f| f.data()[ch * n + i] as f64).sum();
                out[(ch * tl + g) * n + i] = (s * inv) as f32;
            }
        }
    }
    Tensor::new([c, tl, h, w], out)
}

/// Agnostic masks `[1 × T × H × W]` average-pooled onto the latent grid
/// `[1 × ⌈T/4⌉ × H/8 × W/8]`.
pub fn resize_mask(mask: &Tensor) -> Result<Tensor> {
    let &[1, t, h, w] = mask.shape() else {
        return Err(Error::Shape(format!(
            "mask must be [1×T×H×W], got {:?}",
            mask.shape()
        )));
    };
    if h % SPATIAL_STRIDE != 0 || w % SPATIAL_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "mask {h}×{w} is not divisible by {SPATIAL_STRIDE}"
        )));
    }
    let (lh, lw) = (h / SPATIAL_STRIDE, w / SPATIAL_STRIDE);
    let s = SPATIAL_STRIDE;
    let frames = (0..t)
        .map(|i| {
            let d = &mask.data()[i * h * w..(i + 1) * h * w];
            Tensor::new(
                [1, lh, lw],
                (0..lh * lw)
                    .map(|j| {
                        let (y, x) = (j / lw, j % lw);
                        let mut acc = 0.0f64;
                        for dy in 0..s {
                            for dx in 0..s {
                                acc += d[(y * s + dy) * w + x * s + dx] as f64;
                            }
                        }
                        (acc / (s * s) as f64) as f32
                    })
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    temporal_pool(&frames)
}

/// Single-image try-on used to produce the edited first frame.
pub trait TryOnModel {
    fn try_on(&self, agnostic: &Tensor, garment: &Tensor, mask: &Tensor) -> Result<Tensor>;
}

/// Pixels within this Chebyshev distance outside the mask are blended.
pub const FEATHER: usize = 2;

/// Pastes the garment image into the masked region with a linear feather.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaskCompositor;

impl TryOnModel for MaskCompositor {
    fn try_on(&self, agnostic: &Tensor, garment: &Tensor, mask: &Tensor) -> Result<Tensor> {
        first_frame_tryon(agnostic, garment, mask)
    }
}

/// Blend weight per pixel: 1 inside the mask, `1 − d/2` at Chebyshev distance `d` outside.
pub fn feather_weights(mask: &Tensor) -> Result<Vec<f32>> {
    let &[h, w] = mask.shape() else {
        return Err(Error::Shape(format!(
            "mask must be [H×W], got {:?}",
            mask.shape()
        )));
    };
    let m = mask.data();
    let r = FEATHER as isize - 1;
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if m[y as usize * w + x as usize] >= 0.5 {
                out[y as usize * w + x as usize] = 1.0;
                continue;
            }
            let mut d = usize::MAX;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0
                        && xx >= 0
                        && (yy as usize) < h
                        && (xx as usize) < w
                        && m[yy as usize * w + xx as usize] >= 0.5
                    {
                        d = d.min(dy.unsigned_abs().max(dx.unsigned_abs()));
                    }
                }
            }
            if d < FEATHER {
                out[y as usize * w + x as usize] = 1.0 - d as f32 / FEATHER as f32;
            }
        }
    }
    Ok(out)
}

/// `α ⊙ garment + (1 − α) ⊙ agnostic` with feathered weights `α`.
pub fn first_frame_tryon(agnostic: &Tensor, garment: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if agnostic.shape() != garment.shape() {
        return Err(Error::Dimension(format!(
            "agnostic {:?} and garment {:?} differ",
            agnostic.shape(),
            garment.shape()
        )));
    }
    let &[3, h, w] = agnostic.shape() else {
        return Err(Error::Shape(format!(
            "try-on expects [3×H×W] images, got {:?}",
            agnostic.shape()
        )));
    };
    if mask.shape() != [h, w] {
        return Err(Error::Dimension(format!(
            "mask {:?} does not match image {h}×{w}",
            mask.shape()
        )));
    }
    let alpha = feather_weights(mask)?;
    let n = h * w;
    let (a, g) = (agnostic.data(), garment.data());
    Tensor::new(
        [3, h, w],
        (0..3 * n)
            .map(|i| {
                let k = alpha[i % n];
                if k == 1.0 {
                    g[i]
                } else if k == 0.0 {
                    a[i]
                } else {
                    k * g[i] + (1.0 - k) * a[i]
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::uniform([3, h, w], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn projection_rows_are_orthonormal() {
        let vae = ToyVae::new(16, 3).unwrap();
        let p = vae.projection();
        let gram = matmul_t(p, false, p, true).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.data()[i * 16 + j] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn full_width_round_trip() {
        let vae = ToyVae::new(PATCH_WIDTH, 1).unwrap();
        let x = image(4, 16, 24);
        let back = vae.decode_image(&vae.encode_image(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn zero_image_and_divisibility() {
        let vae = ToyVae::new(16, 1).unwrap();
        let z = vae.encode_image(&Tensor::zeros([3, 16, 16])).unwrap();
        assert_eq!(z.shape(), [16, 2, 2]);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            vae.encode_image(&Tensor::zeros([3, 12, 16])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn video_grid_and_replication() {
        let vae = ToyVae::new(PATCH_WIDTH, 2).unwrap();
        let mut rng = SeededRng::new(9);
        let v = Tensor::uniform([3, 6, 16, 16], 0.0, 1.0, &mut rng);
        let z = vae.encode_video(&v).unwrap();
        assert_eq!(z.shape(), [PATCH_WIDTH, 2, 2, 2]);
        let back = vae.decode_video(&z, 6).unwrap();
        assert_eq!(back.shape(), [3, 6, 16, 16]);
        // frames 4 and 5 decode to the mean of the short last group
        let mean = video_frame(&v, 4)
            .unwrap()
            .add(&video_frame(&v, 5).unwrap())
            .unwrap()
            .scale(0.5);
        assert!(video_frame(&back, 5).unwrap().max_abs_diff(&mean).unwrap() < 1e-5);
    }

    #[test]
    fn mask_resize_of_full_mask_is_one() {
        let m = resize_mask(&Tensor::ones([1, 5, 16, 8])).unwrap();
        assert_eq!(m.shape(), [1, 2, 2, 1]);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tryon_endpoints_and_feather() {
        let a = image(1, 8, 8);
        let g = image(2, 8, 8);
        let empty = Tensor::zeros([8, 8]);
        assert!(first_frame_tryon(&a, &g, &empty).unwrap().bit_eq(&a));
        let full = Tensor::ones([8, 8]);
        assert!(first_frame_tryon(&a, &g, &full).unwrap().bit_eq(&g));
        // a 2×2 block at rows/cols 3..5
        let m = Tensor::from_fn([8, 8], |i| {
            let (y, x) = (i / 8, i % 8);
            if (3..5).contains(&y) && (3..5).contains(&x) {
                1.0
            } else {
                0.0
            }
        });
        let out = first_frame_tryon(&a, &g, &m).unwrap();
        let alpha = feather_weights(&m).unwrap();
        assert_eq!(alpha[3 * 8 + 3], 1.0);
        assert_eq!(alpha[2 * 8 + 2], 0.5);
        assert_eq!(alpha[8 + 1], 0.0);
        assert_eq!(out.data()[3 * 8 + 3], g.data()[3 * 8 + 3]);
        assert_eq!(out.data()[0], a.data()[0]);
    }
}
