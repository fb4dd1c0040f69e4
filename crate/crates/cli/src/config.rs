//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; later assignments win.

use std::path::Path;

use drivelab::env::EnvConfig;
use drivelab::eval::EvalConfig;
use drivelab::grpo::TrainConfig;
use drivelab::pipeline::bench::BenchConfig;
use drivelab::policy::warmstart::BcConfig;
use drivelab::policy::{DEFAULT_EMBED, DEFAULT_HIDDEN};
use drivelab::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub bc: BcConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub hidden: usize,
    pub embed: usize,
    /// Behavior-clone a fresh network before RL when no checkpoint is given.
    pub warm_start: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            bc: BcConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            warm_start: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub const KEYS: &[&str] = &[
    "env.max_turns",
    "env.stop_on_clean",
    "env.perception",
    "env.temperature",
    "pdm.ego_length",
    "pdm.ego_width",
    "pdm.ttc_horizon",
    "pdm.ttc_dt",
    "pdm.weight_ep",
    "pdm.weight_ttc",
    "pdm.weight_comfort",
    "pdm.reward_includes_comfort",
    "pdm.max_lon_accel",
    "pdm.max_lat_accel",
    "pdm.max_jerk",
    "pdm.max_yaw_rate",
    "pdm.max_yaw_accel",
    "train.group_size",
    "train.global_batch",
    "train.mini_batch",
    "train.learning_rate",
    "train.beta",
    "train.clip_eps",
    "train.inner_epochs",
    "train.iterations",
    "train.steps_per_iteration",
    "train.mode",
    "train.reward_w_p",
    "train.reward_w_f",
    "train.turn_weights",
    "train.divergence_threshold",
    "train.max_update_ratio",
    "train.record_wall_time",
    "bc.epochs",
    "bc.batch_size",
    "bc.learning_rate",
    "eval.samples_per_scenario",
    "policy.hidden",
    "policy.embed",
    "policy.warm_start",
    "bench.workers",
    "bench.blob_mib",
    "bench.dists",
    "bench.repeats",
    "bench.rollouts",
    "bench.serializer_threads",
    "bench.transport",
    "bench.gen_ms_min",
    "bench.gen_ms_max",
    "bench.ser_ms_per_mib",
    "bench.deser_ms_per_mib",
    "bench.stage_ms",
];

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let pdm = &mut self.env.pdm;
        let cost = &mut self.bench.base.cost;
        match key {
            "env.max_turns" => {
                self.env.max_turns = parse(key, v)?;
                self.train.max_turns = self.env.max_turns;
            }
            "env.stop_on_clean" => self.env.stop_on_clean = parse(key, v)?,
            "env.perception" => self.env.perception = v.parse()?,
            "env.temperature" => self.env.temperature = parse(key, v)?,
            "pdm.ego_length" => pdm.ego_length = parse(key, v)?,
            "pdm.ego_width" => pdm.ego_width = parse(key, v)?,
            "pdm.ttc_horizon" => pdm.ttc_horizon = parse(key, v)?,
            "pdm.ttc_dt" => pdm.ttc_dt = parse(key, v)?,
            "pdm.weight_ep" => pdm.weights.ep = parse(key, v)?,
            "pdm.weight_ttc" => pdm.weights.ttc = parse(key, v)?,
            "pdm.weight_comfort" => pdm.weights.comfort = parse(key, v)?,
            "pdm.reward_includes_comfort" => pdm.reward_includes_comfort = parse(key, v)?,
            "pdm.max_lon_accel" => pdm.comfort.max_lon_accel = parse(key, v)?,
            "pdm.max_lat_accel" => pdm.comfort.max_lat_accel = parse(key, v)?,
            "pdm.max_jerk" => pdm.comfort.max_jerk = parse(key, v)?,
            "pdm.max_yaw_rate" => pdm.comfort.max_yaw_rate = parse(key, v)?,
            "pdm.max_yaw_accel" => pdm.comfort.max_yaw_accel = parse(key, v)?,
            "train.group_size" => self.train.group_size = parse(key, v)?,
            "train.global_batch" => self.train.global_batch = parse(key, v)?,
            "train.mini_batch" => self.train.mini_batch = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta" => self.train.beta = parse(key, v)?,
            "train.clip_eps" => self.train.clip_eps = parse(key, v)?,
            "train.inner_epochs" => self.train.inner_epochs = parse(key, v)?,
            "train.iterations" => self.train.iterations = parse(key, v)?,
            "train.steps_per_iteration" => self.train.steps_per_iteration = parse(key, v)?,
            "train.mode" => self.train.mode = v.parse()?,
            "train.reward_w_p" => self.train.reward.w_p = parse(key, v)?,
            "train.reward_w_f" => self.train.reward.w_f = parse(key, v)?,
            "train.turn_weights" => {
                let w: Vec<f64> = parse_list(key, v)?;
                self.train.reward.turn_weights = (!w.is_empty()).then_some(w);
            }
            "train.divergence_threshold" => self.train.divergence_threshold = parse(key, v)?,
            "train.max_update_ratio" => self.train.max_update_ratio = parse(key, v)?,
            "train.record_wall_time" => self.train.record_wall_time = parse(key, v)?,
            "bc.epochs" => self.bc.epochs = parse(key, v)?,
            "bc.batch_size" => self.bc.batch_size = parse(key, v)?,
            "bc.learning_rate" => self.bc.learning_rate = parse(key, v)?,
            "eval.samples_per_scenario" => self.eval.samples_per_scenario = parse(key, v)?,
            "policy.hidden" => self.hidden = parse(key, v)?,
            "policy.embed" => self.embed = parse(key, v)?,
            "policy.warm_start" => self.warm_start = parse(key, v)?,
            "bench.workers" => self.bench.workers = parse_list(key, v)?,
            "bench.blob_mib" => self.bench.blob_mib = parse_list(key, v)?,
            "bench.dists" => {
                self.bench.dists = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "bench.repeats" => self.bench.repeats = parse(key, v)?,
            "bench.rollouts" => self.bench.base.rollouts = parse(key, v)?,
            "bench.serializer_threads" => self.bench.base.serializer_threads = Some(parse(key, v)?),
            "bench.transport" => self.bench.base.transport = v.parse()?,
            "bench.gen_ms_min" => cost.gen_ms.0 = parse(key, v)?,
            "bench.gen_ms_max" => cost.gen_ms.1 = parse(key, v)?,
            "bench.ser_ms_per_mib" => cost.ser_ms_per_mib = parse(key, v)?,
            "bench.deser_ms_per_mib" => cost.deser_ms_per_mib = parse(key, v)?,
            "bench.stage_ms" => {
                let s: Vec<f64> = parse_list(key, v)?;
                cost.stage_ms = s
                    .try_into()
                    .map_err(|_| Error::config("`bench.stage_ms` needs three comma-separated values"))?;
            }
            _ => {
                return Err(Error::config(format!(
                    "unknown configuration key `{key}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::config(format!("config line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Overrides of the form `key=value`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.bc.validate()?;
        if self.eval.samples_per_scenario == 0 {
            return Err(Error::config("eval.samples_per_scenario must be at least 1"));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::config("policy.hidden and policy.embed must be positive"));
        }
        Ok(())
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use drivelab::grpo::AdvantageMode;
    use drivelab::scenario::PerceptionMode;

    #[test]
    fn parses_comments_and_overrides() {
        let mut s = Settings::default();
        s.apply_text(
            "# run\n\ntrain.mode = SEQ_GRPO  # baseline\nenv.perception=kinematic\ntrain.turn_weights = 1, 0.5\nbench.stage_ms = 1,2,3\n",
        )
        .unwrap();
        assert_eq!(s.train.mode, AdvantageMode::SeqGrpo);
        assert_eq!(s.env.perception, PerceptionMode::Kinematic);
        assert_eq!(s.train.reward.turn_weights, Some(vec![1.0, 0.5]));
        assert_eq!(s.bench.base.cost.stage_ms, [1.0, 2.0, 3.0]);
        s.apply_overrides(&["train.learning_rate=0.05".into()]).unwrap();
        assert_eq!(s.train.learning_rate, 0.05);
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let samples = [
            ("env.perception", "gt_oracle"),
            ("train.mode", "PER_TURN"),
            ("bench.dists", "uniform,long_tail"),
            ("bench.transport", "socket"),
            ("bench.stage_ms", "1,1,1"),
            ("bench.workers", "2,4"),
            ("bench.blob_mib", "1,2"),
            ("train.turn_weights", "1"),
        ];
        for key in KEYS {
            let mut s = Settings::default();
            let value = samples.iter().find(|(k, _)| k == key).map_or_else(
                || {
                    if key.contains("stop_on_clean")
                        || key.contains("includes")
                        || key.contains("record")
                        || key.contains("warm_start")
                    {
                        "true"
                    } else {
                        "3"
                    }
                },
                |(_, v)| *v,
            );
            s.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn bad_lines_are_config_errors() {
        let mut s = Settings::default();
        for text in [
            "no equals sign",
            "train.bogus = 1",
            "train.group_size = many",
            "bench.stage_ms = 1,2",
        ] {
            let err = s.apply_text(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
        let mut s = Settings::default();
        s.set("train.group_size", "1").unwrap();
        assert!(s.validate().is_err());
    }
}
