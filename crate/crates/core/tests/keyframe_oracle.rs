mod oracles;

#[test]
fn sampler_matches_transcription_on_fifty_videos() {
    let report = oracles::sampler_agreement(50);
    assert!(report.mismatches.is_empty(), "{:#?}", report.mismatches);
    assert_eq!(report.matches, report.videos);
    // multi-frame selections and occlusion filtering both occur
    assert!(report.selected > 2 * report.videos, "{report:?}");
    assert!(report.filtered > 0, "{report:?}");
    assert!(report.violations.is_empty(), "{:#?}", report.violations);
}
