use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use drivelab::curation::{
    bootstrap_round, const_velocity_round, filter_rl_data, gen_pdm_qa, mock_multiturn, qa_json_line, select_corpus,
    write_samples, FilterConfig, MockConfig, MultiTurnSample, RlCategory,
};
use drivelab::env::{write_rollouts, EnvConfig, NetPolicy};
use drivelab::eval::{bev_svg, evaluate_policy, metrics_csv, EvalReport, Metrics, ScenarioRow, METRICS_HEADER};
use drivelab::geometry::Pose2D;
use drivelab::grpo::{train, AdvantageMode, LogRow, TrainConfig, TrainHooks, TrainLog, ALL_MODES};
use drivelab::pdm::{self, PdmsWeights};
use drivelab::pipeline::bench::bench;
use drivelab::policy::warmstart::{behavior_clone, warm_start_examples};
use drivelab::policy::{default_shape, Checkpoint, NetShape, PolicyNet, TokenCodec};
use drivelab::scenario::{generate_scenarios, load_corpus, save_corpus, Scenario, Trajectory};
use drivelab::{Error, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::manifest::RunManifest;
use crate::{
    AblateArgs, BenchArgs, Cli, Command, CurateCommand, EvalArgs, GenArgs, PolicySource, ScoreArgs, TrainArgs,
};

struct Ctx {
    seed: u64,
    jobs: Option<usize>,
    out: PathBuf,
    settings: Settings,
    argv: Vec<String>,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.argv.clone(), self.seed, &self.settings)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let g = cli.global;
    let mut settings = Settings::default();
    if let Some(path) = &g.config {
        settings.apply_file(path)?;
    }
    settings.apply_overrides(&g.overrides)?;
    settings.train.seed = g.seed;
    settings.bc.seed = g.seed;
    settings.eval.seed = g.seed;
    settings.bench.base.seed = g.seed;
    settings.validate()?;
    if let Some(j) = g.jobs {
        if j == 0 {
            return Err(Error::config("--jobs must be at least 1"));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let ctx = Ctx {
        seed: g.seed,
        jobs: g.jobs,
        out: g.out,
        settings,
        argv,
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Score(a) => cmd_score(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Curate(c) => cmd_curate(&ctx, c),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

fn cmd_gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    let corpus = generate_scenarios(ctx.seed, a.count, &a.families)?;
    let dir = ctx.out_dir()?;
    let path = dir.join("corpus.jsonl");
    save_corpus(&path, &corpus)?;
    let mut m = ctx.manifest("gen");
    m.output(&path);
    m.write(dir)?;
    println!("wrote {} scenarios to {}", corpus.len(), path.display());
    Ok(())
}

#[derive(Deserialize)]
struct TrajectoryRecord {
    id: String,
    trajectory: Vec<[f64; 3]>,
}

fn load_trajectories(path: &Path) -> Result<Vec<(String, Trajectory)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |field: String, message: String| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            field,
            message,
        };
        let de = &mut serde_json::Deserializer::from_str(line);
        let rec: TrajectoryRecord =
            serde_path_to_error::deserialize(de).map_err(|e| line_err(e.path().to_string(), e.inner().to_string()))?;
        let points = rec.trajectory.iter().map(|p| Pose2D::new(p[0], p[1], p[2])).collect();
        let traj = Trajectory::new(points).map_err(|e| line_err("trajectory".into(), e.to_string()))?;
        out.push((rec.id, traj));
    }
    Ok(out)
}

fn cmd_score(ctx: &Ctx, a: ScoreArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut pdm_cfg = ctx.settings.env.pdm.clone();
    if let Some(w) = &a.weights {
        pdm_cfg.weights = PdmsWeights {
            ep: w[0],
            ttc: w[1],
            comfort: w[2],
        };
        pdm_cfg.validate()?;
    }
    let perception = match &a.perception {
        Some(p) => p.parse()?,
        None => ctx.settings.env.perception,
    };
    let mut m = ctx.manifest("score");
    m.input(&a.corpus)?;
    let trajectories: HashMap<String, Trajectory> = match &a.trajectories {
        Some(path) => {
            m.input(path)?;
            let list = load_trajectories(path)?;
            let n = list.len();
            let map: HashMap<_, _> = list.into_iter().collect();
            if map.len() != n {
                return Err(Error::data("trajectory file repeats a scenario id"));
            }
            if let Some(extra) = map.keys().find(|id| !corpus.iter().any(|s| &s.id == *id)) {
                return Err(Error::data(format!("trajectory for unknown scenario `{extra}`")));
            }
            map
        }
        None => corpus
            .iter()
            .map(|s| {
                let gt = s
                    .gt_trajectory
                    .clone()
                    .ok_or_else(|| Error::data(format!("scenario {} has no expert trajectory", s.id)))?;
                Ok((s.id.clone(), gt))
            })
            .collect::<Result<_>>()?,
    };
    let rows = corpus
        .iter()
        .map(|s| {
            let traj = trajectories
                .get(&s.id)
                .ok_or_else(|| Error::data(format!("no trajectory for scenario `{}`", s.id)))?;
            let report = pdm::evaluate(traj, s, perception, &pdm_cfg)?;
            Ok(ScenarioRow {
                scenario_id: s.id.clone(),
                metrics: Metrics::of_report(&report, &pdm_cfg.weights),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.out_dir()?;
    let path = dir.join("scores.csv");
    write_text(&path, &metrics_csv(&rows))?;
    m.output(&path);
    m.write(dir)?;
    let mean = Metrics::mean(rows.iter().map(|r| &r.metrics));
    println!("{} scenarios scored, mean PDMS {:.4}", rows.len(), mean.pdms);
    Ok(())
}

fn fresh_net(ctx: &Ctx, codec: &TokenCodec, seed: u64) -> PolicyNet {
    let shape = NetShape {
        hidden: ctx.settings.hidden,
        embed: ctx.settings.embed,
        ..default_shape(codec)
    };
    PolicyNet::init(shape, seed)
}

/// A fresh network, behavior-cloned on the corpus experts unless disabled.
fn warm_start(ctx: &Ctx, corpus: &[Scenario], codec: &TokenCodec) -> Result<PolicyNet> {
    let mut net = fresh_net(ctx, codec, ctx.seed);
    if ctx.settings.warm_start {
        let examples = warm_start_examples(corpus, codec, &ctx.settings.env)?;
        let nll = behavior_clone(&mut net, &examples, &ctx.settings.bc)?;
        if let Some(last) = nll.last() {
            println!("warm start: {} examples, final NLL {last:.4}", examples.len());
        }
    }
    Ok(net)
}

fn train_config(ctx: &Ctx, mode: Option<AdvantageMode>) -> TrainConfig {
    let mut cfg = ctx.settings.train.clone();
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    net: &mut PolicyNet,
    codec: &TokenCodec,
    corpus: &[Scenario],
    env: &EnvConfig,
    cfg: &TrainConfig,
    start_step: u64,
    dir: &Path,
    append_log: bool,
) -> Result<Vec<PathBuf>> {
    let log_path = dir.join("train_log.csv");
    let mut log = if append_log && log_path.exists() {
        fs::OpenOptions::new().append(true).open(&log_path)
    } else {
        fs::File::create(&log_path).and_then(|mut f| {
            writeln!(f, "{}", TrainLog::csv_header(cfg.max_turns))?;
            Ok(f)
        })
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut written = vec![log_path.clone()];
    let mut on_step = |row: &LogRow| -> Result<()> {
        writeln!(log, "{}", TrainLog::csv_row(row)).map_err(|e| Error::io(&log_path, e))
    };
    let mut checkpoints = Vec::new();
    let mut on_iteration_end = |net: &PolicyNet, step: u64| -> Result<()> {
        let path = dir.join(format!("ckpt-{step:06}.ckpt"));
        Checkpoint {
            net: net.clone(),
            codec: codec.clone(),
            seed: cfg.seed,
            step,
        }
        .save(&path)?;
        checkpoints.push(path);
        Ok(())
    };
    let mut hooks = TrainHooks {
        on_step: Some(&mut on_step),
        on_iteration_end: Some(&mut on_iteration_end),
    };
    train(net, codec, corpus, env, cfg, start_step, &mut hooks)?;
    written.extend(checkpoints);
    let final_path = dir.join("final.ckpt");
    Checkpoint {
        net: net.clone(),
        codec: codec.clone(),
        seed: cfg.seed,
        step: cfg.total_steps() as u64,
    }
    .save(&final_path)?;
    written.push(final_path);
    Ok(written)
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mode = a.mode.as_deref().map(str::parse).transpose()?;
    let cfg = train_config(ctx, mode);
    let dir = ctx.out_dir()?;
    let mut m = ctx.manifest("train");
    m.input(&a.corpus)?;
    let (mut net, codec, start) = match (&a.init, &a.resume) {
        (_, Some(path)) => {
            m.input(path)?;
            let c = Checkpoint::load(path)?;
            (c.net, c.codec, c.step)
        }
        (Some(path), None) => {
            m.input(path)?;
            let c = Checkpoint::load(path)?;
            (c.net, c.codec, 0)
        }
        (None, None) => {
            let codec = TokenCodec::default();
            let net = warm_start(ctx, &corpus, &codec)?;
            let path = dir.join("warm_start.ckpt");
            Checkpoint {
                net: net.clone(),
                codec: codec.clone(),
                seed: ctx.seed,
                step: 0,
            }
            .save(&path)?;
            m.output(&path);
            (net, codec, 0)
        }
    };
    let written = run_training(
        &mut net,
        &codec,
        &corpus,
        &ctx.settings.env,
        &cfg,
        start,
        dir,
        a.resume.is_some(),
    )?;
    for p in written {
        m.output(p);
    }
    m.write(dir)?;
    println!(
        "trained {} ({} steps) into {}",
        cfg.mode,
        cfg.total_steps(),
        dir.display()
    );
    Ok(())
}

fn evaluate_net(ctx: &Ctx, net: &PolicyNet, codec: &TokenCodec, corpus: &[Scenario]) -> Result<EvalReport> {
    let policy = NetPolicy {
        net,
        codec,
        temperature: ctx.settings.env.temperature,
    };
    evaluate_policy(&policy, corpus, &ctx.settings.env, &ctx.settings.eval)
}

fn summary_csv(m: &Metrics) -> String {
    format!(
        "{METRICS_HEADER}\n{},{},{},{},{},{}\n",
        m.nc, m.dac, m.ttc, m.comfort, m.ep, m.pdms
    )
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut m = ctx.manifest("eval");
    m.input(&a.checkpoint)?;
    m.input(&a.corpus)?;
    let report = evaluate_net(ctx, &ckpt.net, &ckpt.codec, &corpus)?;
    let dir = ctx.out_dir()?;
    let outputs = [
        ("curve.csv", report.curve_csv()),
        ("metrics.csv", metrics_csv(&report.rows)),
        ("summary.csv", summary_csv(&report.summary)),
    ];
    for (name, text) in outputs {
        let path = dir.join(name);
        write_text(&path, &text)?;
        m.output(path);
    }
    let rollouts_path = dir.join("rollouts.jsonl");
    write_rollouts(&rollouts_path, &report.rollouts, &ctx.settings.env.pdm)?;
    m.output(&rollouts_path);
    let k = ctx.settings.eval.samples_per_scenario;
    let limit = a.plots.unwrap_or(corpus.len());
    for (i, s) in corpus.iter().enumerate().take(limit) {
        let path = dir.join("plots").join(format!("{}.svg", file_stem(&s.id)));
        write_text(&path, &bev_svg(s, &report.rollouts[i * k], &ctx.settings.env.pdm))?;
        m.output(path);
    }
    m.write(dir)?;
    println!("budget,mean_pdms");
    for (b, v) in report.budget_curve.iter().enumerate() {
        println!("{},{v:.4}", b + 1);
    }
    print!("{}", summary_csv(&report.summary));
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let dir = ctx.out_dir()?;
    let mut m = ctx.manifest("ablate");
    m.input(&a.corpus)?;
    let start = match &a.init {
        Some(path) => {
            m.input(path)?;
            Checkpoint::load(path)?
        }
        None => {
            let codec = TokenCodec::default();
            let net = warm_start(ctx, &corpus, &codec)?;
            Checkpoint {
                net,
                codec,
                seed: ctx.seed,
                step: 0,
            }
        }
    };
    let start = Checkpoint { step: 0, ..start };
    let warm_path = dir.join("warm_start.ckpt");
    start.save(&warm_path)?;
    m.output(&warm_path);
    let warm_hash = hex::encode(Sha256::digest(start.to_bytes()));
    let base = evaluate_net(ctx, &start.net, &start.codec, &corpus)?;
    println!("warm start mean PDMS {:.4}", base.summary.pdms);

    let mut table = format!("mode,warm_start_sha256,{METRICS_HEADER}\n");
    for mode in ALL_MODES {
        let sub = dir.join(mode.name().to_ascii_lowercase());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut net = start.net.clone();
        let cfg = train_config(ctx, Some(mode));
        for p in run_training(&mut net, &start.codec, &corpus, &ctx.settings.env, &cfg, 0, &sub, false)? {
            m.output(p);
        }
        let report = evaluate_net(ctx, &net, &start.codec, &corpus)?;
        let curve = sub.join("curve.csv");
        write_text(&curve, &report.curve_csv())?;
        m.output(curve);
        let s = report.summary;
        table.push_str(&format!(
            "{},{warm_hash},{},{},{},{},{},{}\n",
            mode.name(),
            s.nc,
            s.dac,
            s.ttc,
            s.comfort,
            s.ep,
            s.pdms
        ));
        println!("{}: mean PDMS {:.4}", mode.name(), s.pdms);
    }
    let path = dir.join("ablation.csv");
    write_text(&path, &table)?;
    m.output(&path);
    m.write(dir)?;
    Ok(())
}

fn source_policy(ctx: &Ctx, src: &PolicySource, m: &mut RunManifest) -> Result<(Vec<Scenario>, Checkpoint)> {
    m.input(&src.corpus)?;
    let corpus = load_corpus(&src.corpus)?;
    let ckpt = match &src.checkpoint {
        Some(path) => {
            m.input(path)?;
            Checkpoint::load(path)?
        }
        None => {
            let codec = TokenCodec::default();
            Checkpoint {
                net: fresh_net(ctx, &codec, ctx.seed),
                codec,
                seed: ctx.seed,
                step: 0,
            }
        }
    };
    Ok((corpus, ckpt))
}

fn finish_samples(ctx: &Ctx, mut m: RunManifest, samples: &[MultiTurnSample]) -> Result<()> {
    let dir = ctx.out_dir()?;
    let path = dir.join("samples.jsonl");
    write_samples(&path, samples)?;
    m.output(&path);
    m.write(dir)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

fn cmd_curate(ctx: &Ctx, c: CurateCommand) -> Result<()> {
    let env = &ctx.settings.env;
    match c {
        CurateCommand::Bootstrap { src, k } => {
            let mut m = ctx.manifest("curate bootstrap");
            let (corpus, ckpt) = source_policy(ctx, &src, &mut m)?;
            let policy = NetPolicy {
                net: &ckpt.net,
                codec: &ckpt.codec,
                temperature: env.temperature,
            };
            let samples = bootstrap_round(&policy, &corpus, k, env, ctx.seed)?;
            finish_samples(ctx, m, &samples)
        }
        CurateCommand::Constvel { corpus } => {
            let mut m = ctx.manifest("curate constvel");
            m.input(&corpus)?;
            let scenarios = load_corpus(&corpus)?;
            let samples = const_velocity_round(&scenarios, &TokenCodec::default(), env)?;
            finish_samples(ctx, m, &samples)
        }
        CurateCommand::Mock { src, depth, runs, keep } => {
            let mut m = ctx.manifest("curate mock");
            let (corpus, ckpt) = source_policy(ctx, &src, &mut m)?;
            let policy = NetPolicy {
                net: &ckpt.net,
                codec: &ckpt.codec,
                temperature: env.temperature,
            };
            let cfg = MockConfig {
                depth,
                runs,
                keep_fraction: keep,
                seed: ctx.seed,
            };
            let samples = mock_multiturn(&policy, &corpus, env, &cfg)?;
            finish_samples(ctx, m, &samples)
        }
        CurateCommand::Qa { corpus, per_scenario } => {
            let mut m = ctx.manifest("curate qa");
            m.input(&corpus)?;
            let scenarios = load_corpus(&corpus)?;
            let qa = gen_pdm_qa(&scenarios, per_scenario, ctx.seed, &env.pdm)?;
            let dir = ctx.out_dir()?;
            let path = dir.join("qa.jsonl");
            let text: String = qa.iter().map(|q| qa_json_line(q) + "\n").collect();
            write_text(&path, &text)?;
            m.output(&path);
            m.write(dir)?;
            println!("wrote {} questions to {}", qa.len(), path.display());
            Ok(())
        }
        CurateCommand::Filter {
            src,
            threshold,
            other_fraction,
        } => {
            let mut m = ctx.manifest("curate filter");
            let (corpus, ckpt) = source_policy(ctx, &src, &mut m)?;
            let policy = NetPolicy {
                net: &ckpt.net,
                codec: &ckpt.codec,
                temperature: env.temperature,
            };
            let cfg = FilterConfig {
                threshold,
                other_fraction,
                seed: ctx.seed,
            };
            let split = filter_rl_data(&policy, &corpus, env, &cfg)?;
            let dir = ctx.out_dir()?;
            let csv = dir.join("rl_split.csv");
            write_text(&csv, &split.to_csv())?;
            let selected = dir.join("rl_corpus.jsonl");
            save_corpus(&selected, &select_corpus(&corpus, &split))?;
            m.output(&csv);
            m.output(&selected);
            m.write(dir)?;
            println!(
                "two_turn {}, low_score {}, other {}, selected {}",
                split.count(RlCategory::TwoTurn),
                split.count(RlCategory::LowScore),
                split.count(RlCategory::Other),
                split.selected_ids().len()
            );
            Ok(())
        }
    }
}

fn cmd_bench(ctx: &Ctx, a: BenchArgs) -> Result<()> {
    let mut cfg = ctx.settings.bench.clone();
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(b) = a.blob_mib {
        cfg.blob_mib = b;
    }
    if let Some(d) = a.dists {
        cfg.dists = d.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(t) = a.transport {
        cfg.base.transport = t.parse()?;
    }
    if let Some(j) = ctx.jobs {
        for w in &mut cfg.workers {
            *w = (*w).min(j);
        }
        cfg.workers.dedup();
    }
    let report = bench(&cfg)?;
    let dir = ctx.out_dir()?;
    let csv = dir.join("bench.csv");
    write_text(&csv, &report.to_csv())?;
    let txt = dir.join("bench.txt");
    let rendered = report.render();
    write_text(&txt, &rendered)?;
    let mut m = ctx.manifest("bench");
    m.config.bench = cfg;
    m.output(&csv);
    m.output(&txt);
    m.write(dir)?;
    print!("{rendered}");
    Ok(())
}
