//! Per-frame scores: garment area, occlusion, instruction match and
//! background integrity (Sobel-based clarity).

use crate::numerics::Tensor;
use crate::{Error, Result};

use super::frame::Frame;
use super::instruction::InstructionTargets;

/// Default Sobel magnitude threshold for clarity.
pub const CLARITY_THRESHOLD: f64 = 50.0;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn mask_area(m: &Tensor) -> f64 {
    m.data().iter().map(|&v| v as f64).sum()
}

/// `S_r`: garment pixels over frame pixels.
pub fn garment_area_ratio(f: &Frame) -> f64 {
    mask_area(&f.garment_mask) / f.garment_mask.len() as f64
}

/// Occluded garment area over garment area; 1.0 when the garment is not visible at all.
pub fn occlusion_ratio(f: &Frame) -> f64 {
    let garment = mask_area(&f.garment_mask);
    if garment <= 0.0 {
        return 1.0;
    }
    let occluded: f64 = f
        .occluded_garment_mask
        .data()
        .iter()
        .zip(f.garment_mask.data())
        .map(|(&o, &g)| (o * g) as f64)
        .sum();
    occluded / garment
}

/// Scores how well a frame shows the instruction targets; implement this to
/// plug in a vision-language model.
pub trait InstructionScorer {
    fn score(&self, frame: &Frame, targets: &InstructionTargets) -> f64;
}

/// `|labels ∩ targets| / |targets|`, using ground-truth frame labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct LabelMatchScorer;

impl InstructionScorer for LabelMatchScorer {
    fn score(&self, frame: &Frame, targets: &InstructionTargets) -> f64 {
        if targets.is_empty() {
            return 0.0;
        }
        let hits = frame
            .labels
            .iter()
            .filter(|&&t| targets.contains(t))
            .count();
        hits as f64 / targets.len() as f64
    }
}

pub fn instruction_score(f: &Frame, targets: &InstructionTargets) -> f64 {
    LabelMatchScorer.score(f, targets)
}

/// Luma of a `[3 × H × W]` image in `[0, 255]`.
pub fn luma(pixels: &Tensor) -> Result<Tensor<f64>> {
    let &[3, h, w] = pixels.shape() else {
        return Err(Error::Shape(format!(
            "luma expects [3×H×W], got {:?}",
            pixels.shape()
        )));
    };
    let n = h * w;
    let d = pixels.data();
    Tensor::new(
        [h, w],
        (0..n)
            .map(|i| {
                255.0
                    * (LUMA[0] * d[i] as f64
                        + LUMA[1] * d[n + i] as f64
                        + LUMA[2] * d[2 * n + i] as f64)
            })
            .collect(),
    )
}

/// Background image in gray levels: luma masked by `1 − human`.
pub fn background_gray(f: &Frame) -> Result<Tensor<f64>> {
    let gray = luma(&f.pixels)?;
    gray.zip_map(&f.human_mask.cast(), |g, hm| g * (1.0 - hm))
}

/// Sobel gradient magnitude `sqrt(Gx² + Gy²)` with replicated borders.
pub fn sobel_edge_map(image: &Tensor<f64>) -> Result<Tensor<f64>> {
    let &[h, w] = image.shape() else {
        return Err(Error::Shape(format!(
            "sobel expects [H×W], got {:?}",
            image.shape()
        )));
    };
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!(
            "image [{h}×{w}] is smaller than the 3×3 kernel"
        )));
    }
    let d = image.data();
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        d[y * w + x]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out.push(gx.hypot(gy));
        }
    }
    Tensor::new([h, w], out)
}

/// Edge density times normalized mean strength of the edges above `threshold`.
///
/// Returns `None` when there are no background pixels.
pub fn clarity_from_edges(
    edges: &Tensor<f64>,
    background_pixels: f64,
    threshold: f64,
) -> Option<f64> {
    if background_pixels <= 0.0 {
        return None;
    }
    let (count, total) = edges
        .data()
        .iter()
        .filter(|&&e| e > threshold)
        .fold((0usize, 0.0), |(c, s), &e| (c + 1, s + e));
    if count == 0 {
        return Some(0.0);
    }
    let density = count as f64 / background_pixels;
    let strength = total / count as f64 / 255.0;
    Some(density * strength)
}

pub fn background_pixel_count(f: &Frame) -> f64 {
    f.human_mask.data().iter().map(|&v| 1.0 - v as f64).sum()
}

/// Clarity of the frame background; 0 (with a warning) when the human covers the frame.
pub fn clarity(f: &Frame, threshold: f64) -> Result<f64> {
    let bg = background_pixel_count(f);
    let edges = sobel_edge_map(&background_gray(f)?)?;
    Ok(
        clarity_from_edges(&edges, bg, threshold).unwrap_or_else(|| {
            log::warn!("frame {} has no background pixels; clarity is 0", f.index);
            0.0
        }),
    )
}

/// Background pixels over frame pixels.
pub fn background_ratio(f: &Frame) -> f64 {
    background_pixel_count(f) / f.human_mask.len() as f64
}

/// `S_bg = BackgroundRatio × Clarity`.
pub fn background_integrity_score(f: &Frame, threshold: f64) -> Result<f64> {
    Ok(background_ratio(f) * clarity(f, threshold)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let e = sobel_edge_map(&Tensor::full([5, 7], 123.0)).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step() {
        // columns 0..3 are 0, columns 3..6 are 255
        let img = Tensor::from_fn([5, 6], |i| if i % 6 >= 3 { 255.0 } else { 0.0 });
        let e = sobel_edge_map(&img).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let v = e.data()[y * 6 + x];
                let expect = if x == 2 || x == 3 { 1020.0 } else { 0.0 };
                assert_eq!(v, expect, "({y},{x})");
            }
        }
    }

    #[test]
    fn small_image_is_shape_error() {
        assert!(matches!(
            sobel_edge_map(&Tensor::zeros([2, 5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn half_strong_edges() {
        let edges = Tensor::from_fn([4, 4], |i| if i % 2 == 0 { 255.0 } else { 0.0 });
        let c = clarity_from_edges(&edges, 16.0, CLARITY_THRESHOLD).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_background() {
        assert_eq!(clarity_from_edges(&Tensor::zeros([3, 3]), 0.0, 50.0), None);
    }
}
