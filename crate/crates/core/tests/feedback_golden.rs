mod common;

use drivelab::pdm::{self, PdmConfig};
use drivelab::scenario::PerceptionMode;

#[test]
fn ttc_feedback_prompt_matches_golden_bytes() {
    let (scenario, plan) = common::ttc_feedback_case();
    let cfg = PdmConfig::default();
    let report = pdm::evaluate(&plan, &scenario, PerceptionMode::GtOracle, &cfg).unwrap();
    assert!(report.nc && report.dac && !report.ttc);
    let fb = pdm::extract_feedback(&report);
    assert_eq!(fb.render_prompt(), common::GOLDEN_PROMPT.trim_end_matches('\n'));
}

#[test]
fn kinematic_perception_gives_the_same_sentence_for_a_parked_vehicle() {
    let (scenario, plan) = common::ttc_feedback_case();
    let cfg = PdmConfig::default();
    let report = pdm::evaluate(&plan, &scenario, PerceptionMode::Kinematic, &cfg).unwrap();
    let text = pdm::extract_feedback(&report).text();
    assert!(text.ends_with(
        "Trajectory Point 1: (+21.73, 0.0, 0.0) with Objects: (34.14, -0.85, 1.59, 10.26, 2.95, 4.39, -0.02, vehicle)."
    ));
}
