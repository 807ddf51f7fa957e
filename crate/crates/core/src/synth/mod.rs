//! Labeled synthetic try-on scenes and the on-disk sample format.

pub mod io;
pub mod render;
pub mod scene;

use std::collections::BTreeSet;

use crate::keyframe::pose::NUM_JOINTS;
use crate::keyframe::{Action, Frame, SkeletonPose, Target, View};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub use io::{read_sample, write_sample};
pub use render::{generate_scene, make_agnostic};
pub use scene::SceneSpec;

/// Ground truth for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabel {
    pub index: usize,
    pub timestamp: f64,
    pub view: View,
    pub actions: Vec<Action>,
}

impl FrameLabel {
    pub fn targets(&self) -> BTreeSet<Target> {
        std::iter::once(Target::View(self.view))
            .chain(self.actions.iter().map(|&a| Target::Action(a)))
            .collect()
    }
}

/// One rendered video with masks, poses and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[3 × T × H × W]`.
    pub video: Tensor,
    pub agnostic: Tensor,
    /// `[T × H × W]` binary masks.
    pub garment_masks: Tensor,
    pub human_masks: Tensor,
    pub occluded_masks: Tensor,
    pub poses: Vec<SkeletonPose>,
    /// `[3 × H × W]`.
    pub garment_ref: Tensor,
    pub labels: Vec<FrameLabel>,
}

/// Frame `t` of a `[C × T × H × W]` video as `[C × H × W]`.
pub fn video_frame(video: &Tensor, t: usize) -> Result<Tensor> {
    let &[c, frames, h, w] = video.shape() else {
        return Err(Error::Shape(format!(
            "expected [C×T×H×W], got {:?}",
            video.shape()
        )));
    };
    if t >= frames {
        return Err(Error::Shape(format!("frame {t} of {frames}")));
    }
    let n = h * w;
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        let start = (ch * frames + t) * n;
        out.extend_from_slice(&video.data()[start..start + n]);
    }
    Tensor::new([c, h, w], out)
}

impl SyntheticSample {
    pub fn num_frames(&self) -> usize {
        self.video.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.video.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.video.shape()[3]
    }

    /// Checks that every component agrees on `T × H × W`.
    pub fn validate(&self) -> Result<()> {
        let &[3, t, h, w] = self.video.shape() else {
            return Err(Error::Format(format!(
                "video must be [3×T×H×W], got {:?}",
                self.video.shape()
            )));
        };
        let bad = |what: &str, got: &[usize]| {
            Err(Error::Format(format!(
                "{what} {got:?} does not match video [3, {t}, {h}, {w}]"
            )))
        };
        if self.agnostic.shape() != self.video.shape() {
            return bad("agnostic video", self.agnostic.shape());
        }
        for (what, m) in [
            ("garment masks", &self.garment_masks),
            ("human masks", &self.human_masks),
            ("occluded masks", &self.occluded_masks),
        ] {
            if m.shape() != [t, h, w] {
                return bad(what, m.shape());
            }
        }
        if self.garment_ref.shape() != [3, h, w] {
            return bad("garment reference", self.garment_ref.shape());
        }
        if self.poses.len() != t || self.labels.len() != t {
            return Err(Error::Format(format!(
                "{} poses and {} labels for {t} frames",
                self.poses.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }

    /// Per-frame records for the keyframe scorers.
    pub fn frames(&self) -> Result<Vec<Frame>> {
        let (h, w) = (self.height(), self.width());
        let n = h * w;
        let slice =
            |m: &Tensor, t: usize| Tensor::new([h, w], m.data()[t * n..(t + 1) * n].to_vec());
        (0..self.num_frames())
            .map(|t| {
                Ok(Frame {
                    index: self.labels[t].index,
                    timestamp: self.labels[t].timestamp,
                    pixels: video_frame(&self.video, t)?,
                    garment_mask: slice(&self.garment_masks, t)?,
                    human_mask: slice(&self.human_masks, t)?,
                    occluded_garment_mask: slice(&self.occluded_masks, t)?,
                    pose: self.poses[t].clone(),
                    labels: self.labels[t].targets(),
                })
            })
            .collect()
    }

    /// Rendered skeleton maps `[3 × T × H × W]`.
    pub fn pose_maps(&self) -> Tensor {
        let (t_len, h, w) = (self.num_frames(), self.height(), self.width());
        let n = h * w;
        let plane = t_len * n;
        let mut data = vec![0.0; 3 * plane];
        for (t, pose) in self.poses.iter().enumerate() {
            let map = render::render_pose_map(pose, h, w);
            for c in 0..3 {
                data[c * plane + t * n..c * plane + (t + 1) * n]
                    .copy_from_slice(&map[c * n..(c + 1) * n]);
            }
        }
        Tensor::new([3, t_len, h, w], data).expect("extents match")
    }

    /// The agnostic region as a `[1 × T × H × W]` mask.
    pub fn agnostic_mask(&self) -> Tensor {
        let mut shape = vec![1];
        shape.extend_from_slice(self.garment_masks.shape());
        self.garment_masks
            .clone()
            .reshape(shape)
            .expect("same length")
    }

    /// Joint positions as `[T × 17 × 2]`.
    pub fn pose_tensor(&self) -> Tensor {
        let data = self
            .poses
            .iter()
            .flat_map(|p| p.joints.iter().flatten().copied())
            .collect();
        Tensor::new([self.poses.len(), NUM_JOINTS, 2], data).expect("extents match")
    }
}
