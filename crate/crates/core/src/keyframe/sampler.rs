//! Instruction-guided keyframe selection.
//!
//! Frames whose garment is occluded beyond `occlu_thres` are dropped, the
//! rest are scored and visited in descending score order (ties by frame
//! index). A candidate is accepted when its temporally damped score differs
//! from every accepted frame's score by at least `score_diff_min` and it lies
//! at least `t_thres` seconds from every accepted frame.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

use super::frame::Frame;
use super::instruction::InstructionTargets;
use super::pose::{generate_anchor_pose, motion_difference_score, SkeletonPose};
use super::scores::{garment_area_ratio, occlusion_ratio, InstructionScorer, LabelMatchScorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoringMode {
    /// `1 − S_m + λ·S_r`.
    Eq1,
    /// `w1·S_ins + w2·(1 − S_m) + w3·S_r + w4`.
    Algorithm,
}

impl ScoringMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoringMode::Eq1 => "eq1",
            ScoringMode::Algorithm => "algorithm",
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq1" => Ok(ScoringMode::Eq1),
            "algorithm" => Ok(ScoringMode::Algorithm),
            _ => Err(Error::Config(format!(
                "scoring mode must be eq1 or algorithm, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub k_max: usize,
    pub weights: [f64; 4],
    pub lambda: f64,
    /// Minimum spacing in seconds; `None` means a fifth of the video span.
    pub t_thres: Option<f64>,
    pub occlu_thres: f64,
    pub score_diff_min: f64,
    pub mode: ScoringMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k_max: 3,
            weights: [0.3, 0.2, 0.3, 0.2],
            lambda: 0.5,
            t_thres: None,
            occlu_thres: 0.2,
            score_diff_min: 0.1,
            mode: ScoringMode::Eq1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "weights must be non-negative, got {:?}",
                self.weights
            )));
        }
        let finite = [self.lambda, self.occlu_thres, self.score_diff_min];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sampler thresholds must be finite".into()));
        }
        if let Some(t) = self.t_thres {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("t_thres must be ≥ 0, got {t}")));
            }
        }
        Ok(())
    }

    /// The temporal threshold used for `frames`.
    pub fn resolve_t_thres(&self, frames: &[Frame]) -> f64 {
        self.t_thres.unwrap_or_else(|| {
            let lo = frames
                .iter()
                .map(|f| f.timestamp)
                .fold(f64::INFINITY, f64::min);
            let hi = frames
                .iter()
                .map(|f| f.timestamp)
                .fold(f64::NEG_INFINITY, f64::max);
            if frames.is_empty() {
                0.0
            } else {
                (hi - lo) / 5.0
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub index: usize,
    pub timestamp: f64,
    pub s_ins: f64,
    pub s_m: f64,
    pub s_r: f64,
    pub occlusion_ratio: f64,
    pub initial_score: f64,
    /// Set once the frame is visited by the selection loop.
    pub temporal_score: Option<f64>,
    pub final_score: Option<f64>,
    pub filtered: bool,
    pub selected: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionStatus {
    Ok,
    /// Every frame exceeded the occlusion threshold.
    AllFiltered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeSet {
    /// Selected frames in order of selection.
    pub selected: Vec<FrameScore>,
    /// Every input frame, in input order.
    pub scores: Vec<FrameScore>,
    pub status: SelectionStatus,
    pub t_thres: f64,
}

impl KeyframeSet {
    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.index).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Anchor skeletons for views then actions.
pub fn anchors_for(targets: &InstructionTargets) -> Result<Vec<SkeletonPose>> {
    targets
        .targets()
        .into_iter()
        .map(generate_anchor_pose)
        .collect()
}

/// Scores one frame; temporal and final scores are left for the selection loop.
pub fn frame_score(
    f: &Frame,
    anchors: &[SkeletonPose],
    targets: &InstructionTargets,
    cfg: &SamplerConfig,
    scorer: &dyn InstructionScorer,
) -> Result<FrameScore> {
    let s_ins = scorer.score(f, targets);
    let s_m = motion_difference_score(&f.pose, anchors)?;
    let s_r = garment_area_ratio(f);
    let occ = occlusion_ratio(f);
    let initial_score = combine(cfg, s_ins, s_m, s_r);
    Ok(FrameScore {
        index: f.index,
        timestamp: f.timestamp,
        s_ins,
        s_m,
        s_r,
        occlusion_ratio: occ,
        initial_score,
        temporal_score: None,
        final_score: None,
        filtered: occ > cfg.occlu_thres,
        selected: false,
    })
}

/// The initial score for given component scores.
pub fn combine(cfg: &SamplerConfig, s_ins: f64, s_m: f64, s_r: f64) -> f64 {
    match cfg.mode {
        ScoringMode::Eq1 => 1.0 - s_m + cfg.lambda * s_r,
        ScoringMode::Algorithm => {
            let [w1, w2, w3, w4] = cfg.weights;
            w1 * s_ins + w2 * (1.0 - s_m) + w3 * s_r + w4 * 1.0
        }
    }
}

pub fn select_keyframes(
    frames: &[Frame],
    targets: &InstructionTargets,
    cfg: &SamplerConfig,
) -> Result<KeyframeSet> {
    select_keyframes_with(frames, targets, cfg, &LabelMatchScorer)
}

pub fn select_keyframes_with(
    frames: &[Frame],
    targets: &InstructionTargets,
    cfg: &SamplerConfig,
    scorer: &dyn InstructionScorer,
) -> Result<KeyframeSet> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Usage(
            "keyframe selection needs at least one frame".into(),
        ));
    }
    let anchors = anchors_for(targets)?;
    let mut scores = frames
        .iter()
        .map(|f| frame_score(f, &anchors, targets, cfg, scorer))
        .collect::<Result<Vec<_>>>()?;
    let t_thres = cfg.resolve_t_thres(frames);

    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| !scores[i].filtered).collect();
    if order.is_empty() {
        log::warn!("every frame exceeds the occlusion threshold; no keyframes selected");
        return Ok(KeyframeSet {
            selected: Vec::new(),
            scores,
            status: SelectionStatus::AllFiltered,
            t_thres,
        });
    }
    order.sort_by(|&a, &b| {
        scores[b]
            .initial_score
            .total_cmp(&scores[a].initial_score)
            .then(scores[a].index.cmp(&scores[b].index))
    });

    let mut chosen: Vec<usize> = Vec::new();
    for &i in &order {
        if chosen.len() >= cfg.k_max {
            break;
        }
        let t = scores[i].timestamp;
        let min_gap = chosen
            .iter()
            .map(|&j| (t - scores[j].timestamp).abs())
            .fold(f64::INFINITY, f64::min);
        let s_t = if chosen.is_empty() || t_thres <= 0.0 {
            1.0
        } else {
            min_gap / t_thres
        };
        let final_score = scores[i].initial_score * s_t;
        scores[i].temporal_score = Some(s_t);
        scores[i].final_score = Some(final_score);
        let accept = chosen.is_empty() || {
            let min_diff = chosen
                .iter()
                .map(|&j| (final_score - scores[j].initial_score).abs())
                .fold(f64::INFINITY, f64::min);
            min_diff >= cfg.score_diff_min && min_gap >= t_thres
        };
        if accept {
            scores[i].selected = true;
            chosen.push(i);
        }
    }
    Ok(KeyframeSet {
        selected: chosen.iter().map(|&i| scores[i].clone()).collect(),
        scores,
        status: SelectionStatus::Ok,
        t_thres,
    })
}
