use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn promptcs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptcs"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROMPTCS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = promptcs(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &str = r#"{
  "data": {"synthetic": {"communities": 3, "community_size": 20, "p_in": 0.3, "p_out": 0.02}},
  "workload": {"train": 6, "val": 3, "test": 3},
  "encoder": {"layers": 2, "hidden": 16},
  "train": {"epochs": 3, "lr_theta": 0.001, "lr_tau": 0.001},
  "eval": {"seeds": [0]}
}"#;

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.json"), SMALL).unwrap();

    ok(
        d,
        &["gen-data", "--config", "small.json", "--out", "g.json"],
    );
    ok(
        d,
        &[
            "gen-queries",
            "--graph",
            "g.json",
            "--config",
            "small.json",
            "--out-dir",
            ".",
        ],
    );
    for f in ["train.json", "val.json", "test.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let part = ok(
        d,
        &[
            "partition",
            "--graph",
            "g.json",
            "--shards",
            "2",
            "--out",
            "p.json",
        ],
    );
    assert!(part.contains("s=2"));

    let common = [
        "--graph",
        "g.json",
        "--workload",
        "train.json",
        "--val",
        "val.json",
        "--config",
        "small.json",
    ];
    let mut args = vec!["train"];
    args.extend(common);
    args.extend(["--out", "model.json"]);
    ok(d, &args);
    assert!(d.join("model.report.json").exists());

    let mut args = vec!["train-scaled"];
    args.extend(common);
    args.extend(["--partition", "p.json", "--out", "scaled.json"]);
    ok(d, &args);

    let mut args = vec!["fine-tune"];
    args.extend(common);
    args.extend([
        "--ckpt",
        "model.json",
        "--mode",
        "prompt-only",
        "--out",
        "tuned.json",
    ]);
    ok(d, &args);

    let whole = ok(
        d,
        &[
            "infer",
            "--graph",
            "g.json",
            "--ckpt",
            "model.json",
            "--nodes",
            "0,1",
            "--attrs",
            "0",
            "--out",
            "pred.json",
        ],
    );
    assert!(whole.starts_with("members:"));
    assert_eq!(whole.lines().filter(|l| l.contains('\t')).count(), 61);
    let sharded = ok(
        d,
        &[
            "infer",
            "--graph",
            "g.json",
            "--ckpt",
            "model.json",
            "--nodes",
            "0,1",
            "--attrs",
            "0",
            "--partition",
            "p.json",
        ],
    );
    assert!(sharded.starts_with("members:"));

    let scores = ok(
        d,
        &[
            "eval",
            "--pred",
            "pred.json",
            "--truth",
            "g.json",
            "--community",
            "0",
        ],
    );
    assert!(scores.contains("f1\t"));
}

#[test]
fn eval_matches_hand_computed_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // Five nodes; predicted {0,1,2}, truth {1,2,3,4}: P=2/3, R=1/2, F1=4/7.
    std::fs::write(
        d.join("pred.json"),
        r#"{"query": {"nodes": [1], "attrs": []}, "members": [0, 1, 2],
            "probs": [0.9, 0.8, 0.7, 0.2, 0.1], "threshold": 0.5}"#,
    )
    .unwrap();
    std::fs::write(d.join("truth.json"), "[1, 2, 3, 4]").unwrap();
    let out = ok(d, &["eval", "--pred", "pred.json", "--truth", "truth.json"]);
    let value = |key: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}\t")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((value("precision") - 2.0 / 3.0).abs() < 1e-6);
    assert!((value("recall") - 0.5).abs() < 1e-6);
    assert!((value("f1") - 4.0 / 7.0).abs() < 1e-6);

    std::fs::write(d.join("many.json"), "[[0], [1, 2, 3, 4]]").unwrap();
    let code = promptcs(d, &["eval", "--pred", "pred.json", "--truth", "many.json"]).status;
    assert_eq!(code.code(), Some(4));
    let scored = ok(
        d,
        &[
            "eval",
            "--pred",
            "pred.json",
            "--truth",
            "many.json",
            "--community",
            "1",
        ],
    );
    assert_eq!(scored, out);
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| promptcs(d, args).status.code();

    assert_eq!(code(&["train", "--bogus-flag"]), Some(2));
    assert_eq!(
        code(&["partition", "--graph", "missing.json", "--out", "p.json"]),
        Some(3)
    );

    std::fs::write(d.join("bad.json"), r#"{"train": {"epochs": 1, "typo": 3}}"#).unwrap();
    assert_eq!(
        code(&["gen-data", "--config", "bad.json", "--out", "g.json"]),
        Some(4)
    );

    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    assert_eq!(
        code(&["partition", "--graph", "broken.json", "--out", "p.json"]),
        Some(5)
    );
}

#[test]
fn run_exp_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = configs().join("determinism.json");
    let cfg = cfg.to_str().unwrap();
    let first = ok(d, &["run-exp", "--config", cfg, "--out", "a.json"]);
    ok(d, &["run-exp", "--config", cfg, "--out", "b.json"]);
    assert!(first.contains("AFC"));

    let metrics = |name: &str| -> Vec<String> {
        let text = std::fs::read_to_string(d.join(name)).unwrap();
        text.lines()
            .filter(|l| {
                l.contains("\"precision\"") || l.contains("\"recall\"") || l.contains("\"f1\"")
            })
            .map(str::to_owned)
            .collect()
    };
    let a = metrics("a.json");
    assert!(!a.is_empty());
    assert_eq!(a, metrics("b.json"));
    assert!(d.join("a.txt").exists());
}

#[test]
fn out_dir_variable_redirects_relative_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("outputs");
    std::fs::create_dir(&target).unwrap();
    std::fs::write(tmp.path().join("small.json"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_promptcs"))
        .args(["gen-data", "--config", "small.json", "--out", "g.json"])
        .current_dir(tmp.path())
        .env("PROMPTCS_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("g.json").exists());
    assert!(!tmp.path().join("g.json").exists());
}
