//! SSIM and PSNR between generated and reference frames.
//!
//! SSIM uses the usual constants: an 11×11 Gaussian window with σ = 1.5,
//! `K1 = 0.01`, `K2 = 0.03` and dynamic range 1. Local statistics are taken
//! over valid windows only (no padding), and the map mean is averaged over
//! channels.

use std::fmt;

use crate::numerics::Tensor;
use crate::synth::video_frame;
use crate::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// PSNR reported for (near-)identical inputs.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

fn expect_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mid = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - mid;
        *t = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|k| taps[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = (K1 * 1.0).powi(2);
    let c2 = (K2 * 1.0).powi(2);
    let prod =
        |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM of two `[C × H × W]` images, averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    expect_same(a, b, "ssim")?;
    let &[c, h, w] = a.shape() else {
        return Err(Error::Shape(format!(
            "ssim expects [C×H×W], got {:?}",
            a.shape()
        )));
    };
    if h < WINDOW || w < WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {WINDOW}×{WINDOW} pixels, got {h}×{w}"
        )));
    }
    let n = h * w;
    let to64 = |t: &Tensor, ch: usize| -> Vec<f64> {
        t.data()[ch * n..(ch + 1) * n]
            .iter()
            .map(|&v| v as f64)
            .collect()
    };
    let total: f64 = (0..c)
        .map(|ch| ssim_plane(&to64(a, ch), &to64(b, ch), h, w))
        .sum();
    Ok(total / c as f64)
}

/// `10·log10(1 / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    expect_same(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Per-frame and mean SSIM/PSNR of two videos.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
}

impl MetricReport {
    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One `frame<TAB>t<TAB>ssim<TAB>…<TAB>psnr<TAB>…` line per frame, then a `mean` line.
impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, (s, p)) in self.ssim.iter().zip(&self.psnr).enumerate() {
            writeln!(f, "frame\t{t}\tssim\t{s:.6}\tpsnr\t{p:.4}")?;
        }
        writeln!(
            f,
            "mean\tframes\t{}\tssim\t{:.6}\tpsnr\t{:.4}",
            self.ssim.len(),
            self.mean_ssim(),
            self.mean_psnr()
        )
    }
}

/// Compares two `[3 × T × H × W]` videos frame by frame.
pub fn compare_videos(generated: &Tensor, reference: &Tensor) -> Result<MetricReport> {
    expect_same(generated, reference, "eval")?;
    let &[_, t, _, _] = generated.shape() else {
        return Err(Error::Shape(format!(
            "expected a [C×T×H×W] video, got {:?}",
            generated.shape()
        )));
    };
    let mut report = MetricReport {
        ssim: Vec::with_capacity(t),
        psnr: Vec::with_capacity(t),
    };
    for i in 0..t {
        let (a, b) = (video_frame(generated, i)?, video_frame(reference, i)?);
        report.ssim.push(ssim(&a, &b)?);
        report.psnr.push(psnr(&a, &b)?);
    }
    Ok(report)
}
