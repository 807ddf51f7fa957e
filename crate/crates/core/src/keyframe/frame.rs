use std::collections::BTreeSet;

use crate::numerics::Tensor;
use crate::{Error, Result};

use super::instruction::Target;
use super::pose::SkeletonPose;

/// One video frame with everything the scorers read.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    /// `[3 × H × W]` in `[0, 1]`.
    pub pixels: Tensor,
    /// Binary `[H × W]` masks.
    pub garment_mask: Tensor,
    pub human_mask: Tensor,
    pub occluded_garment_mask: Tensor,
    pub pose: SkeletonPose,
    /// Ground-truth view/action tags; empty for unlabeled footage.
    pub labels: BTreeSet<Target>,
}

impl Frame {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Checks extents, binary masks and garment ⊆ human.
    pub fn validate(&self) -> Result<()> {
        let &[3, h, w] = self.pixels.shape() else {
            return Err(Error::Shape(format!(
                "frame {} pixels must be [3×H×W], got {:?}",
                self.index,
                self.pixels.shape()
            )));
        };
        for (name, m) in [
            ("garment", &self.garment_mask),
            ("human", &self.human_mask),
            ("occluded garment", &self.occluded_garment_mask),
        ] {
            if m.shape() != [h, w] {
                return Err(Error::Shape(format!(
                    "frame {} {name} mask {:?} does not match [{h}, {w}]",
                    self.index,
                    m.shape()
                )));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Format(format!(
                    "frame {} {name} mask is not binary",
                    self.index
                )));
            }
        }
        let outside = self
            .garment_mask
            .data()
            .iter()
            .zip(self.human_mask.data())
            .any(|(&g, &hm)| g > hm);
        if outside {
            return Err(Error::Format(format!(
                "frame {} garment mask extends outside the human mask",
                self.index
            )));
        }
        Ok(())
    }
}

/// Checks every frame and that timestamps strictly increase.
pub fn validate_video(frames: &[Frame]) -> Result<()> {
    for f in frames {
        f.validate()?;
    }
    for pair in frames.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(Error::Format(format!(
                "timestamps must increase: frame {} at {} follows {} at {}",
                pair[1].index, pair[1].timestamp, pair[0].index, pair[0].timestamp
            )));
        }
    }
    Ok(())
}
