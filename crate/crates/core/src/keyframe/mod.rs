//! Instruction-guided keyframe sampling and the frame scores it relies on.

pub mod frame;
pub mod instruction;
pub mod pose;
pub mod sampler;
pub mod scores;

pub use frame::Frame;
pub use instruction::{
    parse_instruction, Action, InstructionParser, InstructionTargets, KeywordParser, Target, View,
};
pub use pose::{generate_anchor_pose, motion_difference_score, SkeletonPose};
pub use sampler::{
    select_keyframes, FrameScore, KeyframeSet, SamplerConfig, ScoringMode, SelectionStatus,
};
pub use scores::{InstructionScorer, LabelMatchScorer};
