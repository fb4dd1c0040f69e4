use super::*;
use crate::geometry::Pose2D;
use crate::pdm::DacViolation;
use crate::policy::{default_shape, PolicyNet};
use crate::scenario::generate_scenarios;

fn scenarios() -> Vec<Scenario> {
    generate_scenarios::<&str>(21, 12, &[]).unwrap()
}

#[test]
fn expert_policy_finishes_in_one_clean_turn() {
    let codec = TokenCodec::default();
    let policy = ExpertPolicy { codec };
    for s in scenarios() {
        let r = run_episode(&policy, &s, &EnvConfig::default(), 1).unwrap();
        assert_eq!(r.turns.len(), 1, "{}", s.id);
        assert!(r.terminated_clean);
        assert_eq!(r.turns[0].f, 1.0);
    }
}

#[test]
fn garbage_policy_uses_every_turn() {
    let codec = TokenCodec::default();
    let policy = FixedPolicy {
        tokens: vec![codec.terminator()],
        codec,
    };
    let s = &scenarios()[0];
    let r = run_episode(&policy, s, &EnvConfig::default(), 1).unwrap();
    assert_eq!(r.turns.len(), 6);
    assert!(!r.terminated_clean);
    assert!(r
        .turns
        .iter()
        .all(|t| t.f == 0.0 && t.p == 0.0 && t.trajectory.is_none()));
    assert!(r.turns.iter().all(|t| t.feedback.format_error));
}

#[test]
fn overlong_response_is_truncated_and_fails_format() {
    let codec = TokenCodec::default();
    let tok = codec.token(4, 4);
    let policy = FixedPolicy {
        tokens: vec![tok; 20],
        codec,
    };
    let cfg = EnvConfig {
        max_turns: 2,
        ..EnvConfig::default()
    };
    let r = run_episode(&policy, &scenarios()[0], &cfg, 1).unwrap();
    assert!(r
        .turns
        .iter()
        .all(|t| t.response_tokens.len() == RESPONSE_BUDGET && t.f == 0.0));
}

#[test]
fn always_n_mode_keeps_going() {
    let policy = ExpertPolicy {
        codec: TokenCodec::default(),
    };
    let cfg = EnvConfig {
        stop_on_clean: false,
        max_turns: 3,
        ..EnvConfig::default()
    };
    let r = run_episode(&policy, &scenarios()[0], &cfg, 1).unwrap();
    assert_eq!(r.turns.len(), 3);
    assert!(r.terminated_clean);
}

#[test]
fn network_episodes_are_deterministic_and_prefix_monotone() {
    let codec = TokenCodec::default();
    let net = PolicyNet::init(default_shape(&codec), 3);
    let policy = NetPolicy {
        net: &net,
        codec: &codec,
        temperature: 1.0,
    };
    for s in scenarios() {
        let a = run_episode(&policy, &s, &EnvConfig::default(), 77).unwrap();
        let b = run_episode(&policy, &s, &EnvConfig::default(), 77).unwrap();
        assert_eq!(a, b);
        assert!(a.turns.len() <= 6);
        for w in a.turns.windows(2) {
            assert!(w[1].prompt_tokens.len() > w[0].prompt_tokens.len());
            assert!(w[1].prompt_tokens.starts_with(&w[0].prompt_tokens));
            assert!(!w[0].feedback.is_empty());
        }
        for t in &a.turns {
            let lp = net
                .turn_logprobs(crate::policy::TurnInput {
                    context: &t.context,
                    tokens: &t.response_tokens,
                })
                .unwrap();
            for (x, y) in lp.iter().zip(&t.response_logprobs) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(t.p >= 0.0 && t.p <= 1.0);
        }
    }
}

#[test]
fn format_score_cases() {
    let codec = TokenCodec::default();
    let tok = codec.token(2, 4);
    assert_eq!(format_score(&[tok; 8], &codec), 1.0);
    assert_eq!(format_score(&[tok; 7], &codec), 0.0);
    let mut bad = vec![tok; 8];
    bad[0] = 9999;
    assert_eq!(format_score(&bad, &codec), 0.0);
}

#[test]
fn empty_history_has_zero_feedback_features() {
    let s = &scenarios()[1];
    let ctx = encode_context(s, &[]);
    assert_eq!(ctx.features.len(), CONTEXT_DIM);
    assert!(feedback_slice(&ctx.features).iter().all(|&x| x == 0.0));
    assert_eq!(ctx, encode_context(s, &[]));
    assert_eq!(ctx.turn, 1);
}

#[test]
fn feedback_features_track_feedback_records() {
    let s = &scenarios()[1];
    let codec = TokenCodec::default();
    let traj = s.gt_trajectory.clone().unwrap();
    let turn = |fb: Feedback| HistoryTurn {
        response: codec.encode(&traj),
        trajectory: Some(traj.clone()),
        feedback: fb,
    };
    let clean = encode_context(s, &[turn(Feedback::default())]);
    let same = encode_context(s, &[turn(Feedback::default())]);
    assert_eq!(feedback_slice(&clean.features), feedback_slice(&same.features));
    let dac = Feedback {
        dac: vec![DacViolation {
            point_index: 6,
            point: Pose2D::new(20.0, 2.5, 0.0),
        }],
        ..Feedback::default()
    };
    let flagged = encode_context(s, &[turn(dac.clone())]);
    assert_ne!(feedback_slice(&clean.features), feedback_slice(&flagged.features));
    let mut moved = dac;
    moved.dac[0].point_index = 2;
    let flagged2 = encode_context(s, &[turn(moved)]);
    assert_ne!(feedback_slice(&flagged.features), feedback_slice(&flagged2.features));
    assert_eq!(
        clean.features[..context::FEEDBACK_OFFSET],
        flagged.features[..context::FEEDBACK_OFFSET]
    );
}

#[test]
fn rollout_dump_has_one_line_per_rollout() {
    let policy = ExpertPolicy {
        codec: TokenCodec::default(),
    };
    let cfg = EnvConfig::default();
    let rollouts: Vec<Rollout> = scenarios()
        .iter()
        .take(3)
        .map(|s| run_episode(&policy, s, &cfg, 0).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    write_rollouts(&path, &rollouts, &cfg.pdm).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["turns"][0]["j"], 1);
    assert_eq!(v["turns"][0]["feedback_text"], "");
}
