//! Tab-separated reports written by the keyframe commands.

use std::fmt::Write;

use keytailor::keyframe::sampler::{anchors_for, combine};
use keytailor::keyframe::scores::{background_integrity_score, background_ratio, clarity};
use keytailor::keyframe::scores::{garment_area_ratio, instruction_score, occlusion_ratio};
use keytailor::keyframe::{
    motion_difference_score, Frame, InstructionTargets, KeyframeSet, SamplerConfig, SelectionStatus,
};
use keytailor::pipeline::KeyframeChoice;
use keytailor::Result;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn join(indices: &[usize]) -> String {
    indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Selection summary followed by one row per frame.
pub fn keyframe_report(set: &KeyframeSet, targets: &InstructionTargets) -> String {
    let mut out = String::new();
    let status = match set.status {
        SelectionStatus::Ok => "ok",
        SelectionStatus::AllFiltered => "all-filtered",
    };
    writeln!(out, "targets\t{targets}").unwrap();
    writeln!(out, "status\t{status}").unwrap();
    writeln!(out, "t_thres\t{:.6}", set.t_thres).unwrap();
    writeln!(out, "selected\t{}", join(&set.indices())).unwrap();
    writeln!(
        out,
        "index\ttimestamp\ts_ins\ts_m\ts_r\tocclusion\tfiltered\tinitial\ttemporal\tfinal\tselected"
    )
    .unwrap();
    for s in &set.scores {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{}",
            s.index,
            s.timestamp,
            s.s_ins,
            s.s_m,
            s.s_r,
            s.occlusion_ratio,
            u8::from(s.filtered),
            s.initial_score,
            opt(s.temporal_score),
            opt(s.final_score),
            u8::from(s.selected),
        )
        .unwrap();
    }
    out
}

/// Every per-frame score, including background integrity.
pub fn frame_scores(
    frames: &[Frame],
    targets: &InstructionTargets,
    cfg: &SamplerConfig,
    clarity_threshold: f64,
) -> Result<String> {
    let anchors = anchors_for(targets)?;
    let mut out = String::new();
    writeln!(out, "targets\t{targets}").unwrap();
    writeln!(
        out,
        "index\ttimestamp\ts_ins\ts_m\ts_r\tocclusion\tclarity\tbackground_ratio\ts_bg\tinitial"
    )
    .unwrap();
    for f in frames {
        let s_ins = instruction_score(f, targets);
        let s_m = motion_difference_score(&f.pose, &anchors)?;
        let s_r = garment_area_ratio(f);
        writeln!(
            out,
            "{}\t{:.6}\t{s_ins:.6}\t{s_m:.6}\t{s_r:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            f.index,
            f.timestamp,
            occlusion_ratio(f),
            clarity(f, clarity_threshold)?,
            background_ratio(f),
            background_integrity_score(f, clarity_threshold)?,
            combine(cfg, s_ins, s_m, s_r),
        )
        .unwrap();
    }
    Ok(out)
}

/// Keyframes used to build a bundle, with the sampler report when one ran.
pub fn choice_report(choice: &KeyframeChoice, targets: Option<&InstructionTargets>) -> String {
    let mut out = String::new();
    writeln!(out, "keyframes\t{}", join(&choice.indices)).unwrap();
    writeln!(out, "background\t{}", choice.background_index).unwrap();
    if let (Some(set), Some(targets)) = (&choice.report, targets) {
        out.push_str(&keyframe_report(set, targets));
    }
    out
}
