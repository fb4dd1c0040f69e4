//! Policy evaluation: mean PDMS per turn budget, six-metric summary tables
//! and bird's-eye-view plots.

mod plot;

pub use plot::bev_svg;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{run_episode, EnvConfig, Rollout, TurnPolicy, TurnRecord};
use crate::error::{Error, Result};
use crate::pdm::{compose_pdms, MetricReport, PdmConfig, PdmsWeights};
use crate::rng::{label_seed, mix_seed};
use crate::scenario::Scenario;

/// The six summary metrics, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
}

impl Metrics {
    pub fn of_report(r: &MetricReport, w: &PdmsWeights) -> Self {
        Metrics {
            nc: r.nc_score(),
            dac: r.dac_score(),
            ttc: r.ttc_score(),
            comfort: r.comfort_score(),
            ep: r.ep,
            pdms: compose_pdms(r, w),
        }
    }

    pub fn of_turn(t: &TurnRecord, cfg: &PdmConfig) -> Self {
        match &t.report {
            Some(r) => Metrics {
                nc: r.nc_score(),
                dac: r.dac_score(),
                ttc: r.ttc_score(),
                comfort: r.comfort_score(),
                ep: r.ep,
                pdms: t.pdms(cfg),
            },
            None => Metrics::default(),
        }
    }

    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let mut acc = Metrics::default();
        let mut n = 0usize;
        for m in items {
            acc.nc += m.nc;
            acc.dac += m.dac;
            acc.ttc += m.ttc;
            acc.comfort += m.comfort;
            acc.ep += m.ep;
            acc.pdms += m.pdms;
            n += 1;
        }
        if n > 0 {
            let k = 1.0 / n as f64;
            acc = Metrics {
                nc: acc.nc * k,
                dac: acc.dac * k,
                ttc: acc.ttc * k,
                comfort: acc.comfort * k,
                ep: acc.ep * k,
                pdms: acc.pdms * k,
            };
        }
        acc
    }
}

pub const METRICS_HEADER: &str = "nc,dac,ttc,comfort,ep,pdms";

fn metrics_fields(m: &Metrics) -> String {
    format!("{},{},{},{},{},{}", m.nc, m.dac, m.ttc, m.comfort, m.ep, m.pdms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub metrics: Metrics,
}

/// Per-scenario CSV followed by nothing else; the mean is returned separately.
pub fn metrics_csv(rows: &[ScenarioRow]) -> String {
    let mut out = format!("scenario_id,{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.scenario_id, metrics_fields(&r.metrics));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    /// Independent sampled episodes per scenario.
    pub samples_per_scenario: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_scenario: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Mean PDMS when the episode is cut after `b` turns, b = 1..=N.
    pub budget_curve: Vec<f64>,
    /// Mean metrics of the turn standing at the full budget.
    pub summary: Metrics,
    pub rows: Vec<ScenarioRow>,
    /// `samples_per_scenario` consecutive rollouts per scenario, corpus order.
    pub rollouts: Vec<Rollout>,
}

impl EvalReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("budget,mean_pdms\n");
        for (b, v) in self.budget_curve.iter().enumerate() {
            let _ = writeln!(out, "{},{v}", b + 1);
        }
        out
    }
}

/// Runs every scenario `samples_per_scenario` times and aggregates.
pub fn evaluate_policy<P: TurnPolicy + ?Sized>(
    policy: &P,
    corpus: &[Scenario],
    env_cfg: &EnvConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    env_cfg.validate()?;
    if cfg.samples_per_scenario == 0 {
        return Err(Error::config("samples_per_scenario must be positive"));
    }
    let k = cfg.samples_per_scenario;
    let rollouts: Vec<Rollout> = (0..corpus.len() * k)
        .into_par_iter()
        .map(|i| {
            let s = &corpus[i / k];
            run_episode(
                policy,
                s,
                env_cfg,
                mix_seed(&[cfg.seed, label_seed(&s.id), (i % k) as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let n = env_cfg.max_turns;
    let budget_curve = (1..=n)
        .map(|b| {
            if rollouts.is_empty() {
                return 0.0;
            }
            rollouts.iter().map(|r| r.at_budget(b).pdms(&env_cfg.pdm)).sum::<f64>() / rollouts.len() as f64
        })
        .collect();
    let rows: Vec<ScenarioRow> = corpus
        .iter()
        .zip(rollouts.chunks(k))
        .map(|(s, group)| {
            let per: Vec<Metrics> = group
                .iter()
                .map(|r| Metrics::of_turn(r.at_budget(n), &env_cfg.pdm))
                .collect();
            ScenarioRow {
                scenario_id: s.id.clone(),
                metrics: Metrics::mean(&per),
            }
        })
        .collect();
    let summary = Metrics::mean(rows.iter().map(|r| &r.metrics));
    Ok(EvalReport {
        budget_curve,
        summary,
        rows,
        rollouts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ExpertPolicy, FixedPolicy};
    use crate::policy::TokenCodec;
    use crate::scenario::generate_scenarios;

    #[test]
    fn expert_evaluation_is_flat_and_high() {
        let corpus = generate_scenarios::<&str>(8, 12, &[]).unwrap();
        let policy = ExpertPolicy {
            codec: TokenCodec::default(),
        };
        let rep = evaluate_policy(&policy, &corpus, &EnvConfig::default(), &EvalConfig::default()).unwrap();
        assert_eq!(rep.budget_curve.len(), 6);
        assert!(rep.budget_curve.windows(2).all(|w| w[0] == w[1]));
        assert!(rep.summary.pdms >= 0.9);
        assert_eq!(rep.summary.nc, 1.0);
        assert_eq!(rep.rows.len(), corpus.len());
        assert_eq!(rep.rollouts.len(), corpus.len() * 4);
    }

    #[test]
    fn unparseable_policy_scores_zero() {
        let corpus = generate_scenarios::<&str>(8, 3, &[]).unwrap();
        let codec = TokenCodec::default();
        let policy = FixedPolicy {
            tokens: vec![codec.terminator()],
            codec,
        };
        let rep = evaluate_policy(&policy, &corpus, &EnvConfig::default(), &EvalConfig::default()).unwrap();
        assert_eq!(rep.summary, Metrics::default());
        let csv = metrics_csv(&rep.rows);
        assert!(csv.starts_with("scenario_id,nc,dac,ttc,comfort,ep,pdms\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn first_budget_equals_single_turn_run() {
        let corpus = generate_scenarios::<&str>(8, 6, &[]).unwrap();
        let codec = TokenCodec::default();
        let net = crate::policy::PolicyNet::init(crate::policy::default_shape(&codec), 5);
        let policy = crate::env::NetPolicy {
            net: &net,
            codec: &codec,
            temperature: 1.0,
        };
        let cfg = EvalConfig::default();
        let multi = evaluate_policy(&policy, &corpus, &EnvConfig::default(), &cfg).unwrap();
        let single_cfg = EnvConfig {
            max_turns: 1,
            ..EnvConfig::default()
        };
        let single = evaluate_policy(&policy, &corpus, &single_cfg, &cfg).unwrap();
        assert!((multi.budget_curve[0] - single.summary.pdms).abs() < 1e-12);
    }
}
