//! Sample directories.
//!
//! A sample is a directory holding `manifest.tsv` plus the files it names.
//! The manifest has one `role<TAB>relative-path` line per role, in exactly
//! this order: `video`, `agnostic`, `masks`, `occluded_masks`, `pose`,
//! `garment_ref`, `labels`. `masks` stacks garment and human masks as
//! `[2 × T × H × W]`; `pose` holds joints as `[T × 17 × 2]`. The labels file
//! has one `index<TAB>timestamp<TAB>view<TAB>actions` line per frame, with
//! actions comma-separated.

use std::fs;
use std::path::{Path, PathBuf};

use crate::keyframe::pose::NUM_JOINTS;
use crate::keyframe::{SkeletonPose, Target};
use crate::numerics::{ktsr, Tensor};
use crate::{Error, Result};

use super::{FrameLabel, SyntheticSample};

pub const MANIFEST: &str = "manifest.tsv";
pub const ROLES: [&str; 7] = [
    "video",
    "agnostic",
    "masks",
    "occluded_masks",
    "pose",
    "garment_ref",
    "labels",
];
const FILES: [&str; 7] = [
    "video.ktsr",
    "agnostic.ktsr",
    "masks.ktsr",
    "occluded_masks.ktsr",
    "pose.ktsr",
    "garment_ref.ktsr",
    "labels.tsv",
];

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sample(dir: &Path, s: &SyntheticSample) -> Result<()> {
    s.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let masks = Tensor::stack(&[s.garment_masks.clone(), s.human_masks.clone()])?;
    let tensors = [
        &s.video,
        &s.agnostic,
        &masks,
        &s.occluded_masks,
        &s.pose_tensor(),
        &s.garment_ref,
    ];
    for (file, t) in FILES.iter().zip(tensors) {
        ktsr::write(&dir.join(file), t)?;
    }
    let mut labels = String::new();
    for l in &s.labels {
        let actions: Vec<&str> = l.actions.iter().map(|a| a.name()).collect();
        labels.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            l.index,
            l.timestamp,
            l.view.name(),
            actions.join(",")
        ));
    }
    write_text(&dir.join(FILES[6]), &labels)?;
    let manifest: String = ROLES
        .iter()
        .zip(FILES)
        .map(|(r, f)| format!("{r}\t{f}\n"))
        .collect();
    write_text(&dir.join(MANIFEST), &manifest)
}

/// Resolves a sample directory or a path to its manifest.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

fn parse_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != ROLES.len() {
        return Err(Error::Format(format!(
            "{}: expected {} manifest lines, found {}",
            path.display(),
            ROLES.len(),
            lines.len()
        )));
    }
    let mut out = Vec::with_capacity(ROLES.len());
    for (i, (line, role)) in lines.iter().zip(ROLES).enumerate() {
        let (got, rel) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "{}: line {} is not role<TAB>path",
                path.display(),
                i + 1
            ))
        })?;
        if got != role {
            return Err(Error::Format(format!(
                "{}: line {} has role {got:?}, expected {role:?}",
                path.display(),
                i + 1
            )));
        }
        out.push(base.join(rel));
    }
    Ok(out)
}

fn parse_labels(path: &Path) -> Result<Vec<FrameLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad =
        |i: usize, what: &str| Error::Format(format!("{}: line {}: {what}", path.display(), i + 1));
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [index, ts, view, actions] = fields[..] else {
                return Err(bad(i, "expected 4 tab-separated fields"));
            };
            let view = match index_target(view).map_err(|_| bad(i, "unknown view"))? {
                Target::View(v) => v,
                Target::Action(_) => return Err(bad(i, "view column holds an action")),
            };
            let actions = actions
                .split(',')
                .filter(|a| !a.is_empty())
                .map(|a| match index_target(a) {
                    Ok(Target::Action(a)) => Ok(a),
                    _ => Err(bad(i, "unknown action")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FrameLabel {
                index: index.parse().map_err(|_| bad(i, "bad index"))?,
                timestamp: ts.parse().map_err(|_| bad(i, "bad timestamp"))?,
                view,
                actions,
            })
        })
        .collect()
}

fn index_target(s: &str) -> Result<Target> {
    s.parse()
}

/// Reads a sample from its directory or manifest path.
pub fn read_sample(path: &Path) -> Result<SyntheticSample> {
    let manifest = manifest_path(path);
    let files = parse_manifest(&manifest)?;
    let video = ktsr::read(&files[0])?;
    let agnostic = ktsr::read(&files[1])?;
    let masks = ktsr::read(&files[2])?;
    let occluded_masks = ktsr::read(&files[3])?;
    let pose = ktsr::read(&files[4])?;
    let garment_ref = ktsr::read(&files[5])?;
    let labels = parse_labels(&files[6])?;
    if masks.shape().first() != Some(&2) {
        return Err(Error::Format(format!(
            "masks must stack garment and human as [2×T×H×W], got {:?}",
            masks.shape()
        )));
    }
    let &[t, joints, 2] = pose.shape() else {
        return Err(Error::Format(format!(
            "pose must be [T×17×2], got {:?}",
            pose.shape()
        )));
    };
    if joints != NUM_JOINTS {
        return Err(Error::Format(format!(
            "pose has {joints} joints, expected {NUM_JOINTS}"
        )));
    }
    let poses = pose
        .data()
        .chunks(NUM_JOINTS * 2)
        .map(|c| {
            let mut j = [[0.0; 2]; NUM_JOINTS];
            for (k, xy) in j.iter_mut().enumerate() {
                *xy = [c[2 * k], c[2 * k + 1]];
            }
            SkeletonPose::new(j)
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(poses.len(), t);
    let sample = SyntheticSample {
        video,
        agnostic,
        garment_masks: masks.index_outer(0)?,
        human_masks: masks.index_outer(1)?,
        occluded_masks,
        poses,
        garment_ref,
        labels,
    };
    sample.validate()?;
    Ok(sample)
}
