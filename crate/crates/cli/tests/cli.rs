use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: [&str; 13] = [
    "train.group_size=2",
    "train.global_batch=4",
    "train.mini_batch=2",
    "train.iterations=2",
    "train.steps_per_iteration=2",
    "env.max_turns=3",
    "bc.epochs=1",
    "policy.hidden=8",
    "policy.embed=4",
    "eval.samples_per_scenario=1",
    "bench.rollouts=4",
    "bench.gen_ms_min=2",
    "bench.gen_ms_max=4",
];

fn drivelab(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_drivelab"));
    cmd.arg("--out").arg(out).arg("--jobs").arg("1");
    for s in TINY {
        cmd.arg("--set").arg(s);
    }
    cmd.args(args).output().expect("spawn drivelab")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = drivelab(out, args);
    assert!(
        o.status.success(),
        "drivelab {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn gen(root: &Path, name: &str, count: usize) -> PathBuf {
    let dir = root.join(name);
    ok(&dir, &["gen", "--count", &count.to_string(), "--seed", "3"]);
    dir.join("corpus.jsonl")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).expect("manifest")).expect("manifest json")
}

#[test]
fn gen_is_deterministic_and_recorded() {
    let tmp = TempDir::new().unwrap();
    let a = gen(tmp.path(), "a", 12);
    let b = gen(tmp.path(), "b", 12);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 12);
    let m = manifest(&tmp.path().join("a"));
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seed"], 3);
    assert!(m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o.as_str().unwrap().ends_with("corpus.jsonl")));
    let reloaded = drivelab::scenario::load_corpus(&a).unwrap();
    assert_eq!(reloaded.len(), 12);
}

#[test]
fn experts_score_high() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 10);
    let out = tmp.path().join("score");
    ok(&out, &["score", "--corpus", s(&corpus)]);
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "pdms").unwrap();
    let scores: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 10);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean >= 0.9, "expert mean {mean}");
    let m = manifest(&out);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn score_rejects_bad_trajectory_lines_with_data_exit_code() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 3);
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"trajectory\": [[1, 2]]}\n").unwrap();
    let o = drivelab(
        &tmp.path().join("o"),
        &["score", "--corpus", s(&corpus), "--trajectories", s(&bad)],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn empty_corpus_file_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = drivelab(&tmp.path().join("o"), &["train", "--corpus", s(&empty)]);
    assert!(matches!(o.status.code(), Some(2 | 3)), "{:?}", o.status);
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 3);
    let o = drivelab(
        &tmp.path().join("o"),
        &["--set", "train.no_such_key=1", "score", "--corpus", s(&corpus)],
    );
    assert_eq!(o.status.code(), Some(2));
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "# comment\ntrain.clip_eps = -1\n").unwrap();
    let o = drivelab(
        &tmp.path().join("o"),
        &["--config", s(&cfg), "train", "--corpus", s(&corpus)],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_data_code() {
    let tmp = TempDir::new().unwrap();
    let o = drivelab(
        &tmp.path().join("o"),
        &["score", "--corpus", "/nonexistent/corpus.jsonl"],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn training_is_deterministic_and_resume_matches() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 6);
    let full_a = tmp.path().join("full_a");
    let full_b = tmp.path().join("full_b");
    ok(&full_a, &["train", "--corpus", s(&corpus)]);
    ok(&full_b, &["train", "--corpus", s(&corpus)]);
    for f in [
        "final.ckpt",
        "train_log.csv",
        "ckpt-000002.ckpt",
        "ckpt-000004.ckpt",
        "warm_start.ckpt",
    ] {
        assert_eq!(
            fs::read(full_a.join(f)).unwrap(),
            fs::read(full_b.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let split = tmp.path().join("split");
    ok(
        &split,
        &["--set", "train.iterations=1", "train", "--corpus", s(&corpus)],
    );
    let ckpt = split.join("ckpt-000002.ckpt");
    ok(&split, &["train", "--corpus", s(&corpus), "--resume", s(&ckpt)]);
    assert_eq!(
        fs::read(full_a.join("final.ckpt")).unwrap(),
        fs::read(split.join("final.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(full_a.join("train_log.csv")).unwrap(),
        fs::read_to_string(split.join("train_log.csv")).unwrap()
    );
}

#[test]
fn runaway_learning_rate_exits_with_divergence_code() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 6);
    let o = drivelab(
        &tmp.path().join("o"),
        &[
            "--set",
            "train.global_batch=16",
            "--set",
            "train.mini_batch=16",
            "--set",
            "bc.epochs=10",
            "--set",
            "train.learning_rate=1000",
            "train",
            "--corpus",
            s(&corpus),
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_writes_curve_metrics_and_plots() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 4);
    let train = tmp.path().join("t");
    ok(
        &train,
        &["--set", "train.iterations=1", "train", "--corpus", s(&corpus)],
    );
    let out = tmp.path().join("e");
    ok(
        &out,
        &[
            "eval",
            "--checkpoint",
            s(&train.join("final.ckpt")),
            "--corpus",
            s(&corpus),
            "--plots",
            "2",
        ],
    );
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.starts_with("budget,mean_pdms"));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 5);
    assert!(out.join("summary.csv").exists());
    assert_eq!(
        fs::read_to_string(out.join("rollouts.jsonl")).unwrap().lines().count(),
        4
    );
    let plots: Vec<_> = fs::read_dir(out.join("plots")).unwrap().collect();
    assert_eq!(plots.len(), 2);
    for p in plots {
        assert!(fs::read_to_string(p.unwrap().path()).unwrap().starts_with("<svg"));
    }
}

#[test]
fn ablation_shares_one_warm_start() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 4);
    let out = tmp.path().join("ab");
    ok(&out, &["--set", "train.iterations=1", "ablate", "--corpus", s(&corpus)]);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let modes: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(modes, ["SEQ_GRPO", "PER_TURN", "POOLED_GROUP"]);
    assert!(rows.iter().all(|r| r[1] == rows[0][1] && r[1].len() == 64));
    for sub in ["seq_grpo", "per_turn", "pooled_group"] {
        assert!(out.join(sub).join("curve.csv").exists());
    }
}

#[test]
fn curation_commands_write_their_files() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen(tmp.path(), "c", 8);
    let cv = tmp.path().join("cv");
    ok(&cv, &["curate", "constvel", "--corpus", s(&corpus)]);
    assert!(fs::read_to_string(cv.join("samples.jsonl")).unwrap().lines().count() <= 8);
    let qa = tmp.path().join("qa");
    ok(&qa, &["curate", "qa", "--corpus", s(&corpus), "--per-scenario", "2"]);
    assert_eq!(
        fs::read_to_string(qa.join("qa.jsonl")).unwrap().lines().count(),
        8 * 3 * 2
    );
    let mock = tmp.path().join("mock");
    ok(&mock, &["curate", "mock", "--corpus", s(&corpus), "--depth", "4"]);
    assert!(mock.join("samples.jsonl").exists());
    let boot = tmp.path().join("boot");
    ok(&boot, &["curate", "bootstrap", "--corpus", s(&corpus)]);
    assert!(boot.join("samples.jsonl").exists());
    let filter = tmp.path().join("filter");
    ok(&filter, &["curate", "filter", "--corpus", s(&corpus)]);
    let split = fs::read_to_string(filter.join("rl_split.csv")).unwrap();
    assert_eq!(split.lines().count(), 9);
    let selected = split.lines().skip(1).filter(|l| l.ends_with(",true")).count();
    assert_eq!(
        fs::read_to_string(filter.join("rl_corpus.jsonl"))
            .unwrap()
            .lines()
            .count(),
        selected
    );
}

#[test]
fn bench_writes_csv_grid() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("b");
    ok(
        &out,
        &[
            "bench",
            "--workers",
            "2",
            "--blob-mib",
            "0.25",
            "--repeats",
            "3",
            "--transport",
            "socket",
        ],
    );
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "workers,blob_mib,ipss,iptc,gen_ms_p50,ser_critical_ms,deser_count,step_ms"
    );
    assert_eq!(lines.count(), 4);
    assert!(fs::read_to_string(out.join("bench.txt"))
        .unwrap()
        .contains("identical across flags: yes"));
}
