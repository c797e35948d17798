use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rerank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(dir)
        .env_remove("RERANK_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rerank(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    rerank(dir, args).status.code().unwrap()
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))
}

fn json(dir: &Path, f: &str) -> Value {
    serde_json::from_str(&read(dir, f)).unwrap()
}

fn datasets(dir: &Path) {
    ok(
        dir,
        &[
            "generate",
            "--lists",
            "80",
            "--n",
            "6",
            "--d-item",
            "3",
            "--d-user",
            "2",
            "--seed",
            "1",
            "-o",
            "train.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "generate",
            "--lists",
            "30",
            "--n",
            "6",
            "--d-item",
            "3",
            "--d-user",
            "2",
            "--seed",
            "2",
            "-o",
            "valid.jsonl",
        ],
    );
}

const SMALL: [&str; 8] = [
    "--epochs",
    "2",
    "--d-model",
    "8",
    "--mlp-hidden",
    "8",
    "--batch-size",
    "8",
];

#[test]
fn generate_writes_lists_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let out = ok(
        p,
        &[
            "generate", "--lists", "1000", "--n", "10", "--seed", "7", "-o", "ds.jsonl",
        ],
    );
    assert!(out.contains("1000 lists") && out.contains("click rate"));
    let first = read(p, "ds.jsonl");
    assert_eq!(first.lines().count(), 1000);
    let manifest = read(p, "ds.jsonl.manifest.json");
    ok(
        p,
        &[
            "generate", "--lists", "1000", "--n", "10", "--seed", "7", "-o", "ds.jsonl",
        ],
    );
    assert_eq!(first, read(p, "ds.jsonl"));
    assert_eq!(manifest, read(p, "ds.jsonl.manifest.json"));
    assert!(p.join("ds.jsonl.manifest.json.timing.json").exists());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(p, &["generate", "--lists", "10"]), 2);
    assert_eq!(code(p, &["frobnicate"]), 2);
    assert_eq!(code(p, &["train", "--train", "x.jsonl", "--epochs", "zero"]), 2);
    assert_eq!(code(p, &["--help"]), 0);
    datasets(p);
    assert_eq!(code(p, &["train", "--train", "train.jsonl", "--epochs", "0"]), 2);
    assert_eq!(code(p, &["train", "--train", "train.jsonl", "--grid"]), 2);
    assert_eq!(code(p, &["train", "--train", "missing.jsonl"]), 1);
    assert_eq!(
        code(p, &["evaluate", "--model", "missing.json", "--data", "valid.jsonl"]),
        1
    );
    std::fs::write(p.join("broken.jsonl"), "{\"list_id\": 1}\n").unwrap();
    assert_eq!(code(p, &["train", "--train", "broken.jsonl"]), 1);
    std::fs::write(p.join("cfg.json"), "{\"train\": {\"epoch\": 1}}").unwrap();
    assert_eq!(code(p, &["train", "--train", "train.jsonl", "--config", "cfg.json"]), 2);
}

#[test]
fn train_reruns_are_byte_identical_and_flags_beat_config() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    datasets(p);
    let mut args = vec![
        "train",
        "--train",
        "train.jsonl",
        "--valid",
        "valid.jsonl",
        "--seed",
        "3",
        "-o",
        "run",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let files = [
        "model.json",
        "train_log.csv",
        "train_manifest.json",
        "train_summary.json",
    ];
    let first: Vec<String> = files.iter().map(|f| read(p, &format!("run/{f}"))).collect();
    ok(p, &args);
    for (f, before) in files.iter().zip(&first) {
        assert_eq!(before, &read(p, &format!("run/{f}")), "{f} changed");
    }
    let summary = json(p, "run/train_summary.json");
    assert_eq!(summary["manifest"], "run/train_manifest.json");
    let manifest = json(p, "run/train_manifest.json");
    let ckpt = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["path"] == "run/model.json")
        .unwrap();
    assert_eq!(ckpt["sha256"], summary["checkpoint_sha256"]);

    std::fs::write(
        p.join("cfg.json"),
        r#"{"train": {"epochs": 1, "learning_rate": 0.002}}"#,
    )
    .unwrap();
    ok(
        p,
        &[
            "train",
            "--train",
            "train.jsonl",
            "--config",
            "cfg.json",
            "--d-model",
            "8",
            "-o",
            "c1",
        ],
    );
    assert_eq!(read(p, "c1/train_log.csv").lines().count(), 2);
    assert_eq!(json(p, "c1/train_summary.json")["selected_learning_rate"], 0.002);
    ok(
        p,
        &[
            "train",
            "--train",
            "train.jsonl",
            "--config",
            "cfg.json",
            "--d-model",
            "8",
            "--epochs",
            "3",
            "-o",
            "c2",
        ],
    );
    assert_eq!(read(p, "c2/train_log.csv").lines().count(), 4);
}

#[test]
fn train_principle_flags_and_grid() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    datasets(p);
    let mut args = vec!["train", "--train", "train.jsonl", "--no-p1", "--no-p2", "-o", "plain"];
    args.extend(SMALL);
    ok(p, &args);
    let log = read(p, "plain/train_log.csv");
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let (wp1, wp2) = (
        header.iter().position(|c| *c == "w_p1").unwrap(),
        header.iter().position(|c| *c == "w_p2").unwrap(),
    );
    for row in log.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[wp1], f[wp2]), ("0", "0"));
    }

    let mut args = vec![
        "train",
        "--train",
        "train.jsonl",
        "--valid",
        "valid.jsonl",
        "--grid",
        "-o",
        "grid",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let grid = read(p, "grid/grid.csv");
    let rows: Vec<&str> = grid.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 1);
}

#[test]
fn evaluate_reports_and_position_blind_obedience() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    datasets(p);
    let mut args = vec![
        "train",
        "--train",
        "train.jsonl",
        "--position-mode",
        "off",
        "-o",
        "blind",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let table = ok(
        p,
        &[
            "evaluate",
            "--model",
            "blind/model.json",
            "--data",
            "valid.jsonl",
            "--p2-trials",
            "all",
            "-o",
            "ev",
        ],
    );
    for col in [
        "AUC", "NDCG", "MAP@5", "MAP@10", "MAP@15", "MAP@20", "P@5", "P@10", "P@15", "P@20",
    ] {
        assert!(
            table.split_whitespace().any(|w| w == col),
            "{col} missing from\n{table}"
        );
    }
    let obey = json(p, "ev/obedience.json");
    assert_eq!(
        (obey["p1_rate"].as_f64(), obey["p2_rate"].as_f64()),
        (Some(1.0), Some(1.0))
    );
    assert_eq!(obey["p2_trials"], "strict");
    let m = json(p, "ev/metrics.json");
    for key in [
        "auc",
        "ndcg",
        "map_at",
        "precision_at",
        "n_lists_evaluated",
        "auc_mode",
        "manifest",
    ] {
        assert!(m.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert_eq!(m["map_at"].as_object().unwrap().len(), 4);
    assert!(read(p, "ev/metrics.csv").starts_with("auc,ndcg,map@5"));
}

#[test]
fn out_dir_comes_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(d.path())
        .env("RERANK_OUT_DIR", "from-env")
        .args(["gradcheck"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("from-env/gradcheck.json").exists());
}

#[test]
fn gradcheck_pass_fail_and_coarse_step() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["gradcheck", "-o", "fine"]);
    let fine = json(p, "fine/gradcheck.json");
    assert_eq!(fine["passed"], true);
    assert_eq!(code(p, &["gradcheck", "--corrupt", "-o", "bad"]), 1);
    assert_eq!(json(p, "bad/gradcheck.json")["passed"], false);
    ok(p, &["gradcheck", "--h", "1e-3", "--threshold", "0.5", "-o", "coarse"]);
    let coarse = json(p, "coarse/gradcheck.json");
    assert!(coarse["max_rel_error"].as_f64().unwrap() > fine["max_rel_error"].as_f64().unwrap());
    assert_eq!(coarse["threshold"], 0.5);
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ablation_outputs_recompute_from_raw_values() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    datasets(p);
    let mut args = vec![
        "ablate",
        "--train",
        "train.jsonl",
        "--test",
        "valid.jsonl",
        "--seeds",
        "2",
        "-o",
        "abl",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let raw = csv_rows(&read(p, "abl/ablation_raw.csv"));
    let summary = csv_rows(&read(p, "abl/ablation.csv"));
    assert_eq!(raw.len(), 1 + 4 * 2);
    let col = |name: &str| raw[0].iter().position(|c| c == name).unwrap();
    let mean = |variant: &str, metric: &str| {
        let c = col(metric);
        let v: Vec<f64> = raw[1..]
            .iter()
            .filter(|r| r[0] == variant)
            .map(|r| r[c].parse().unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let lookup = |variant: &str, metric: &str, field: usize| -> String {
        summary.iter().find(|r| r[0] == variant && r[1] == metric).unwrap()[field].clone()
    };
    for metric in ["auc", "ndcg"] {
        let base = mean("baseline", metric);
        let impr = |v: &str| (mean(v, metric) - base) / base * 100.0;
        let both: f64 = lookup("both", metric, 4).parse().unwrap();
        assert!((both - impr("both")).abs() < 1e-9);
        assert_eq!(lookup("baseline", metric, 4).parse::<f64>().unwrap(), 0.0);
        for v in ["p1", "p2"] {
            let ratio = lookup(v, metric, 5);
            if impr("both") != 0.0 {
                let want = impr(v) / impr("both");
                assert!((ratio.parse::<f64>().unwrap() - want).abs() < 1e-9 * want.abs().max(1.0));
            } else {
                assert!(ratio.is_empty());
            }
        }
    }
    let obey = csv_rows(&read(p, "abl/obedience_table.csv"));
    assert_eq!(obey[0][..4], ["p1_baseline", "p1_with_p1", "p2_baseline", "p2_with_p2"]);
    assert!((obey[1][0].parse::<f64>().unwrap() - mean("baseline", "p1_obedience")).abs() < 1e-12);
}
