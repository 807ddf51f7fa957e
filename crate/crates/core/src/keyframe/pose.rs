//! Skeleton poses, bone directions and the motion-difference score.

use std::sync::OnceLock;

use crate::{Error, Result};

use super::instruction::Target;

pub const NUM_JOINTS: usize = 17;

/// COCO joint order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Parent → child pairs of the skeleton tree.
pub const BONES: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Bones shorter than this are degenerate and carry no direction.
pub const DEGENERATE_LENGTH: f64 = 1e-6;

/// Joint positions in normalized frame coordinates, `y` pointing down.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonPose {
    pub joints: [[f32; 2]; NUM_JOINTS],
}

impl SkeletonPose {
    pub fn new(joints: [[f32; 2]; NUM_JOINTS]) -> Self {
        SkeletonPose { joints }
    }

    /// Unit direction of each bone, `None` where the endpoints coincide.
    pub fn bone_directions(&self) -> [Option<[f64; 2]>; BONES.len()] {
        let mut out = [None; BONES.len()];
        for (slot, &(a, b)) in out.iter_mut().zip(&BONES) {
            let dx = self.joints[b][0] as f64 - self.joints[a][0] as f64;
            let dy = self.joints[b][1] as f64 - self.joints[a][1] as f64;
            let len = dx.hypot(dy);
            if len >= DEGENERATE_LENGTH {
                *slot = Some([dx / len, dy / len]);
            }
        }
        out
    }

    pub fn map(&self, f: impl FnMut([f32; 2]) -> [f32; 2]) -> Self {
        SkeletonPose {
            joints: self.joints.map(f),
        }
    }
}

/// Cosine similarity of the concatenated bone directions, mapped to `[0, 1]`.
///
/// Bones degenerate in either pose are dropped from both vectors; with no
/// bone left the similarity is 0.
pub fn pose_similarity(a: &SkeletonPose, b: &SkeletonPose) -> f64 {
    let (da, db) = (a.bone_directions(), b.bone_directions());
    let mut dot = 0.0;
    let mut count = 0usize;
    for (x, y) in da.iter().zip(&db) {
        if let (Some(x), Some(y)) = (x, y) {
            dot += x[0] * y[0] + x[1] * y[1];
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    // Both concatenated vectors have norm sqrt(count).
    let cos = (dot / count as f64).clamp(-1.0, 1.0);
    (1.0 + cos) / 2.0
}

/// `S_m`: the smallest similarity between `pose` and any anchor.
pub fn motion_difference_score(pose: &SkeletonPose, anchors: &[SkeletonPose]) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Usage(
            "motion difference needs at least one anchor pose".into(),
        ));
    }
    Ok(anchors
        .iter()
        .map(|a| pose_similarity(pose, a))
        .fold(f64::INFINITY, f64::min))
}

const ANCHOR_TABLE: &str = include_str!("../../data/anchor_poses.tsv");

fn parse_anchor_table(text: &str) -> Result<Vec<(Target, SkeletonPose)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("anchor table line {}: {what}", lineno + 1));
        let mut fields = line.split('\t');
        let target: Target = fields
            .next()
            .ok_or_else(|| bad("missing target"))?
            .parse()?;
        let mut joints = [[0.0f32; 2]; NUM_JOINTS];
        for joint in joints.iter_mut() {
            let field = fields.next().ok_or_else(|| bad("too few joints"))?;
            let (x, y) = field
                .split_once(',')
                .ok_or_else(|| bad("joint needs x,y"))?;
            *joint = [
                x.parse().map_err(|_| bad("bad x"))?,
                y.parse().map_err(|_| bad("bad y"))?,
            ];
        }
        if fields.next().is_some() {
            return Err(bad("too many joints"));
        }
        out.push((target, SkeletonPose::new(joints)));
    }
    Ok(out)
}

fn anchor_table() -> &'static [(Target, SkeletonPose)] {
    static TABLE: OnceLock<Vec<(Target, SkeletonPose)>> = OnceLock::new();
    TABLE.get_or_init(|| parse_anchor_table(ANCHOR_TABLE).expect("shipped anchor table parses"))
}

/// The canonical skeleton shipped for a view or action target.
pub fn generate_anchor_pose(target: Target) -> Result<SkeletonPose> {
    anchor_table()
        .iter()
        .find(|(t, _)| *t == target)
        .map(|(_, p)| p.clone())
        .ok_or_else(|| Error::Config(format!("no anchor pose for target {target}")))
}
