use std::ops::Range;

use crate::keyframe::{Action, View};
use crate::numerics::SeededRng;
use crate::{Error, Result};

pub const MIN_SIZE: usize = 32;
pub const DEFAULT_FPS: f64 = 8.0;

/// A timed action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionEvent {
    pub frames: Range<usize>,
    pub action: Action,
}

/// A timed occluder covering the top `fraction` of the garment.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionEvent {
    pub frames: Range<usize>,
    pub fraction: f64,
}

/// Everything needed to render a scene deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// One view per frame.
    pub views: Vec<View>,
    pub actions: Vec<ActionEvent>,
    pub occlusions: Vec<OcclusionEvent>,
    pub garment_texture: u64,
    pub background_texture: u64,
    pub seed: u64,
}

const VIEWS: [View; 4] = [View::Front, View::Back, View::Left, View::Right];
const ACTIONS: [Action; 3] = [Action::RaiseHand, Action::Turn, Action::Walk];

impl SceneSpec {
    /// A randomized schedule of views, actions and occlusions.
    pub fn from_seed(seed: u64, frames: usize, size: usize) -> Result<Self> {
        let mut rng = SeededRng::new(seed).fork(1);
        let segments = 2 + rng.below(2);
        let mut cuts: Vec<usize> = (0..segments - 1)
            .map(|_| 1 + rng.below(frames.max(2) - 1))
            .collect();
        cuts.sort_unstable();
        let mut views = Vec::with_capacity(frames);
        let mut current = if rng.chance(0.6) {
            View::Front
        } else {
            VIEWS[rng.below(4)]
        };
        for t in 0..frames {
            if cuts.contains(&t) {
                let mut next = VIEWS[rng.below(4)];
                if next == current {
                    next = VIEWS[(VIEWS.iter().position(|&v| v == next).unwrap_or(0) + 1) % 4];
                }
                current = next;
            }
            views.push(current);
        }
        let mut actions = Vec::new();
        for p in [0.75, 0.35] {
            if frames >= 4 && rng.chance(p) {
                let len = 3 + rng.below(4).min(frames - 3);
                let start = rng.below(frames - len + 1);
                actions.push(ActionEvent {
                    frames: start..start + len,
                    action: ACTIONS[rng.below(3)],
                });
            }
        }
        let mut occlusions = Vec::new();
        for p in [0.6, 0.3] {
            if frames >= 3 && rng.chance(p) {
                let len = 1 + rng.below(4).min(frames - 1);
                let start = rng.below(frames - len + 1);
                occlusions.push(OcclusionEvent {
                    frames: start..start + len,
                    fraction: rng.range_f64(0.1, 0.7),
                });
            }
        }
        let spec = SceneSpec {
            frames,
            height: size,
            width: size,
            fps: DEFAULT_FPS,
            views,
            actions,
            occlusions,
            garment_texture: rng.next_u64(),
            background_texture: rng.next_u64(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec with a fixed view and no events.
    pub fn still(seed: u64, frames: usize, size: usize, view: View) -> Result<Self> {
        let spec = SceneSpec {
            frames,
            height: size,
            width: size,
            fps: DEFAULT_FPS,
            views: vec![view; frames],
            actions: Vec::new(),
            occlusions: Vec::new(),
            garment_texture: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            background_texture: seed.wrapping_add(17),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIZE || self.width < MIN_SIZE {
            return Err(Error::Config(format!(
                "scene resolution {}×{} is below the {MIN_SIZE}×{MIN_SIZE} minimum",
                self.height, self.width
            )));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "a scene needs at least 2 frames, got {}",
                self.frames
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.views.len() != self.frames {
            return Err(Error::Config(format!(
                "view schedule covers {} of {} frames",
                self.views.len(),
                self.frames
            )));
        }
        for e in &self.actions {
            if e.frames.end > self.frames || e.frames.is_empty() {
                return Err(Error::Config(format!(
                    "action event {:?} outside the scene",
                    e.frames
                )));
            }
        }
        for e in &self.occlusions {
            if e.frames.end > self.frames
                || e.frames.is_empty()
                || !(0.0..=1.0).contains(&e.fraction)
            {
                return Err(Error::Config(format!(
                    "occlusion event {:?} with fraction {} is invalid",
                    e.frames, e.fraction
                )));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, t: usize) -> f64 {
        t as f64 / self.fps
    }

    pub fn actions_at(&self, t: usize) -> Vec<Action> {
        let mut out: Vec<Action> = self
            .actions
            .iter()
            .filter(|e| e.frames.contains(&t))
            .map(|e| e.action)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Occluded garment fraction at frame `t` (the largest active event).
    pub fn occlusion_at(&self, t: usize) -> f64 {
        self.occlusions
            .iter()
            .filter(|e| e.frames.contains(&t))
            .map(|e| e.fraction)
            .fold(0.0, f64::max)
    }
}
