use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ran_cli::report::RunReport;

fn ran(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ran")).args(args).env_remove("RAN_SEED").output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_two() {
    let out = ran(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ran(&["scene", "show", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn domain_errors_exit_one() {
    let dir = scratch("domain_errors");
    let bad = dir.join("scene.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(ran(&["scene", "validate", "--scene", s(&bad)]).status.code(), Some(1));
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, r#"{"unknown_section": {}}"#).unwrap();
    assert_eq!(ran(&["--config", s(&cfg), "scene", "show"]).status.code(), Some(1));
}

#[test]
fn scene_show_reports_bundled_objects() {
    let out = ran(&["scene", "show"]);
    ok(&out);
    let report: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    let objects = report.results["objects"].as_array().unwrap();
    assert!(objects.iter().any(|o| o["label"] == "bottle" && o.get("located").is_some()));
}

#[test]
fn compare_report_round_trips() {
    let dir = scratch("compare");
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, r#"{"ga": {"population": 4, "generations": 2}}"#).unwrap();
    let report = dir.join("report.json");
    let overlay = dir.join("overlay.csv");
    ok(&ran(&[
        "--seed", "3", "--config", s(&cfg), "--report", s(&report),
        "traj", "compare", "--demo", "min_jerk_400", "--overlay", s(&overlay),
    ]));
    let r = RunReport::read(&report).unwrap();
    assert_eq!(r.tool, "ran-cli");
    assert_eq!(r.version, env!("CARGO_PKG_VERSION"));
    assert!(r.seeds.values().all(|v| *v == 3) && r.seeds.len() == 4);
    assert_eq!(r.config_hash.len(), 64);
    let c = &r.results["comparison"];
    for method in ["datrn", "dmp"] {
        assert_eq!(c[method]["per_axis_mse"].as_array().unwrap().len(), 3);
        assert!(c[method]["fit_seconds"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(c["samples"], 400);
    assert_eq!(std::fs::read_to_string(&overlay).unwrap().lines().count(), 401);
    let again: RunReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(again, r);
}

#[test]
fn corpus_commands_are_seeded() {
    let dir = scratch("corpus");
    let (a, b, c) = (dir.join("a.jsonl"), dir.join("b.jsonl"), dir.join("c.jsonl"));
    ok(&ran(&["--seed", "4", "--report", s(&dir.join("r1.json")), "corpus", "generate", "--n", "150", "--out", s(&a)]));
    ok(&ran(&["--seed", "4", "--report", s(&dir.join("r2.json")), "corpus", "generate", "--n", "150", "--out", s(&b)]));
    ok(&ran(&["--seed", "5", "--report", s(&dir.join("r3.json")), "corpus", "generate", "--n", "150", "--out", s(&c)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let r = RunReport::read(&dir.join("r1.json")).unwrap();
    assert_eq!(r.results["examples"], 150);

    let split = dir.join("split");
    let out = ran(&["--seed", "4", "corpus", "split", "--corpus", s(&a), "--out-dir", s(&split), "--ratios", "0.6,0.2,0.2"]);
    ok(&out);
    let r: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    let sizes = &r.results["sizes"];
    let total: u64 = ["train", "val", "test"].iter().map(|k| sizes[k].as_u64().unwrap()).sum();
    assert_eq!(total, 150);
    for k in ["train", "val", "test"] {
        assert!(split.join(format!("{k}.jsonl")).exists());
    }
}

#[test]
fn compact_model_trains_predicts_and_runs() {
    let dir = scratch("model");
    let corpus = dir.join("corpus.jsonl");
    let split = dir.join("split");
    let ck = dir.join("model.ranc");
    ok(&ran(&["--report", s(&dir.join("gen.json")), "corpus", "generate", "--n", "200", "--out", s(&corpus)]));
    ok(&ran(&["--report", s(&dir.join("split.json")), "corpus", "split", "--corpus", s(&corpus), "--out-dir", s(&split)]));
    let train_report = dir.join("train.json");
    ok(&ran(&[
        "--report", s(&train_report),
        "model", "train", "--dims", "compact", "--epochs", "2", "--lr", "1e-3",
        "--train", s(&split.join("train.jsonl")), "--val", s(&split.join("val.jsonl")),
        "--test", s(&split.join("test.jsonl")), "--out", s(&ck),
    ]));
    let r = RunReport::read(&train_report).unwrap();
    assert!(r.results["test"]["accuracy"].as_f64().is_some());

    let out = ran(&["model", "predict", "--checkpoint", s(&ck), "--text", "pick the bottle and place it on the tray"]);
    ok(&out);
    let r: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r.results["actions"].is_array());

    let loss = dir.join("loss.csv");
    ok(&ran(&["--report", s(&dir.join("plot.json")), "plot", "loss", "--checkpoint", s(&ck), "--out", s(&loss)]));
    assert!(std::fs::read_to_string(&loss).unwrap().starts_with("epoch,train_loss,val_loss,lr\n"));

    // An untrained-quality model rarely succeeds; the exit code must still
    // match the outcome recorded in the report.
    let answers = dir.join("answers.txt");
    std::fs::write(&answers, "bottle\ntray\n").unwrap();
    let report = dir.join("episode.json");
    let out = ran(&[
        "--report", s(&report),
        "run", "episode", "--checkpoint", s(&ck), "--answers", s(&answers),
        "--instruction", "pick the bottle and place it on the tray",
    ]);
    let r = RunReport::read(&report).unwrap();
    let success = r.results["episode"]["outcome"] == "success";
    assert_eq!(out.status.code(), Some(if success { 0 } else { 1 }));
}
