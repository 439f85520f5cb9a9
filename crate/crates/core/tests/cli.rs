mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{planted, record_fixtures, Mock};

fn malr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malr"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn malr")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = planted(40, 12, 5);
    let records = record_fixtures(&p, &Mock::new(&p));
    p.write_dir(dir.path(), &records);
    dir
}

#[test]
fn pipeline_from_mock_fixtures_is_perfect_and_reproducible() {
    let fx = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a");
    let b = out.path().join("b");
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        let o = malr(&[
            "pipeline",
            "--mock-fixtures",
            s(fx.path()),
            "--out-dir",
            s(dir),
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("Recall@10"), "{stdout}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["recall"], 1.0);
    assert_eq!(report["metrics"]["hitrate"], 1.0);
    assert_eq!(report["metrics"]["n_queries"], 12);
    for f in ["trajectories.jsonl", "ranked.jsonl", "report.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let ranked = std::fs::read_to_string(a.join("ranked.jsonl")).unwrap();
    assert!(ranked.lines().all(|l| l.contains("\"ranked_ids\"")));
}

#[test]
fn eval_prints_report_and_json() {
    let fx = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let ranked = out.path().join("ranked.jsonl");
    std::fs::write(&ranked, "{\"query_id\":\"q000\",\"ranked_ids\":[\"s999\"]}\n").unwrap();
    let report = out.path().join("r.json");
    let o = malr(&[
        "eval",
        "--queries",
        s(&fx.path().join("queries.jsonl")),
        "--ranked",
        s(&ranked),
        "--k",
        "10",
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("MRR@10"));
    assert!(stdout.contains("11 queries had no ranked list"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["recall"], 0.0);
    assert!((r["mrr"].as_f64().unwrap() - 1.0 / 11.0).abs() < 1e-12);

    let o = malr(&[
        "eval",
        "--queries",
        s(&fx.path().join("queries.jsonl")),
        "--ranked",
        s(&ranked),
        "--mrr-mode",
        "conventional",
        "--report",
        s(&report),
    ]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mrr"], 0.0);
}

#[test]
fn exit_codes() {
    let o = malr(&[
        "stats",
        "--corpus",
        "/no/such/corpus.jsonl",
        "--queries",
        "/no/such/q.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/corpus.jsonl"));

    assert_eq!(malr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(malr(&["eval", "--ranked", "x", "--k", "0"]).status.code(), Some(1));

    // A chat endpoint nobody listens on: the first planner call fails.
    let fx = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let d = fx.path();
    let cfg = out.path().join("c.json");
    std::fs::write(&cfg, r#"{"chat": {"retries": 0, "timeout_secs": 2}}"#).unwrap();
    let o = malr(&[
        "--config",
        s(&cfg),
        "mas",
        "run",
        "--corpus",
        s(&d.join("corpus.jsonl")),
        "--queries",
        s(&d.join("queries.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.jsonl")),
        "--query-embeddings",
        s(&d.join("text_embeddings.jsonl")),
        "--chat-endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
        "--chat-model",
        "m",
        "--out-dir",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_then_flags() {
    let fx = fixture_dir();
    let d = fx.path();
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("run.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "corpus": d.join("corpus.jsonl"),
            "queries": d.join("queries.jsonl"),
            "k": 1,
        })
        .to_string(),
    )
    .unwrap();
    let o = malr(&["--config", s(&cfg), "stats", "--name", "planted"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("dataset"));
    assert!(stdout.contains("planted"));
    assert!(stdout.contains("40"));

    let ranked = out.path().join("ranked.jsonl");
    std::fs::write(&ranked, "").unwrap();
    let o = malr(&["--config", s(&cfg), "eval", "--ranked", s(&ranked)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Recall@1 "));
    let o = malr(&["--config", s(&cfg), "eval", "--ranked", s(&ranked), "--k", "3"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Recall@3 "));

    std::fs::write(&cfg, r#"{"password": "x"}"#).unwrap();
    assert_eq!(malr(&["--config", s(&cfg), "stats"]).status.code(), Some(1));
}

#[test]
fn training_rollouts_reward_and_variability() {
    let fx = fixture_dir();
    let d = fx.path();
    let out = tempfile::tempdir().unwrap();
    let o = malr(&[
        "mas",
        "run",
        "--corpus",
        s(&d.join("corpus.jsonl")),
        "--queries",
        s(&d.join("queries.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.jsonl")),
        "--query-embeddings",
        s(&d.join("text_embeddings.jsonl")),
        "--chat-replay",
        s(&d.join("chat.replay.jsonl")),
        "--mode",
        "training",
        "--rollouts",
        "8",
        "--seed",
        "17",
        "--out-dir",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("mas_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 17);
    assert_eq!(summary["trajectories"], 96);

    let log = out.path().join("trajectories.jsonl");
    let rewards = out.path().join("rewards.jsonl");
    let o = malr(&[
        "reward",
        "--queries",
        s(&d.join("queries.jsonl")),
        "--trajectories",
        s(&log),
        "--normalize",
        "--out",
        s(&rewards),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&rewards)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 96);
    for l in &lines {
        // Identical replayed rollouts: every group is constant.
        assert_eq!(l["advantage"], 0.0);
        let parts = l["r_final"].as_f64().unwrap()
            + l["r_hits"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .sum::<f64>()
            + l["r_steps"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .sum::<f64>()
            + l["fallback"].as_f64().unwrap();
        assert!((parts - l["total"].as_f64().unwrap()).abs() < 1e-12);
    }

    let o = malr(&[
        "rollout-variability",
        "--queries",
        s(&d.join("queries.jsonl")),
        "--trajectories",
        s(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("avg max"));
    assert!(stdout.contains("1.0000"));
}

#[test]
fn grpo_sim_is_seed_deterministic() {
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a.csv");
    let b = out.path().join("b.csv");
    for p in [&a, &b] {
        let o = malr(&[
            "grpo-sim",
            "--seed",
            "3",
            "--iterations",
            "20",
            "--step-penalty",
            "-0.05",
            "--curve",
            s(p),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("update,mean_reward,loss,grad_norm,seed"));
    assert_eq!(text.lines().count(), 21);
}
