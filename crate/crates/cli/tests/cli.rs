use clap::Parser;
use serde_json::Value;
use skillgraph_cli::{run, Cli, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use std::path::Path;
use std::process::Command;

fn sg(args: &[&str], stdin: &str) -> (i32, String, String) {
    let cli = Cli::try_parse_from(std::iter::once("skillgraph").chain(args.iter().copied())).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(cli, stdin.as_bytes(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, n: usize) -> String {
    let graph = dir.join("toy.json");
    assert_eq!(sg(&["gen", "--n", &n.to_string(), "--out", p(&graph)], "").0, EXIT_OK);
    p(&graph).to_string()
}

const QUICK: [&str; 6] = ["--epochs", "30", "--patience", "5", "--embed-dim", "768"];

#[test]
fn validate_reports_valid_illegal_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 20);
    assert_eq!(sg(&["validate", &graph], ""), (EXIT_OK, String::new(), String::new()));

    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&graph).unwrap()).unwrap();
    doc["edges"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"source": "root", "target": "ex-001", "kind": "demonstrates"}));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let (code, out, _) = sg(&["validate", p(&bad)], "");
    assert_eq!(code, EXIT_DOMAIN);
    assert_eq!(out.lines().count(), 1, "{out}");

    let (code, _, err) = sg(&["validate", p(&dir.path().join("absent.json"))], "");
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("absent.json"), "{err}");
}

#[test]
fn gen_is_deterministic_and_rejects_tiny_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for f in [&a, &b] {
        assert_eq!(sg(&["gen", "--seed", "4", "--n", "30", "--out", p(f)], "").0, EXIT_OK);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.json.config.json").exists());
    assert_eq!(sg(&["validate", p(&a)], "").0, EXIT_OK);
    assert_eq!(sg(&["gen", "--n", "3", "--out", p(&a)], "").0, EXIT_USAGE);
}

#[test]
fn embed_writes_a_loadable_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 20);
    let out = dir.path().join("emb.txt");
    assert_eq!(
        sg(&["embed", "--graph", &graph, "--out", p(&out), "--dim", "32"], "").0,
        EXIT_OK
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let table = skillgraph::EmbeddingTable::parse(text.as_bytes()).unwrap();
    assert_eq!(table.dim(), 32);
    assert_eq!(table.len(), 13 + 20);
}

#[test]
fn train_writes_outputs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 45);
    let r1 = dir.path().join("r1");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let mut args = vec!["train", "--graph", &graph, "--out", p(&r1)];
        args.extend(QUICK);
        let (code, table, err) = sg(&args, "");
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(table.contains("cf"), "{table}");
        reports.push(std::fs::read(r1.join("report.json")).unwrap());
    }
    for f in [
        "config.json",
        "checkpoint.json",
        "history.json",
        "report.json",
        "report.txt",
    ] {
        assert!(r1.join(f).exists(), "{f}");
    }
    assert_eq!(reports[0], reports[1]);

    let history = skillgraph_cli::commands::load_history(&r1.join("history.json")).unwrap();
    let mut best = f64::INFINITY;
    for &v in &history.validation_loss {
        best = best.min(v);
    }
    assert_eq!(best, history.best_validation_loss);
    assert!(history.stop_epoch <= 30);
}

#[test]
fn cv_reports_one_row_per_fold_and_their_mean() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 45);
    let out = dir.path().join("cv");
    let mut args = vec!["cv", "--graph", &graph, "--out", p(&out), "--layer", "gcn"];
    args.extend(QUICK);
    assert_eq!(sg(&args, "").0, EXIT_OK);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    assert_eq!(report["config"]["command"], "cv");
    let per_fold: Vec<f64> = folds
        .iter()
        .map(|f| f["classification"][2]["micro_f1"].as_f64().unwrap())
        .collect();
    let mean = report["aggregate"][2]["micro_f1"]["mean"].as_f64().unwrap();
    assert!((mean - per_fold.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    let histories: Value = serde_json::from_str(&std::fs::read_to_string(out.join("histories.json")).unwrap()).unwrap();
    assert_eq!(histories.as_array().unwrap().len(), 3);
}

#[test]
fn cv_folds_follow_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 45);
    let sizes = |seed: &str| {
        let out = dir.path().join(format!("s{seed}"));
        let args = [
            "baseline",
            "--graph",
            &graph,
            "--out",
            p(&out),
            "--epochs",
            "3",
            "--patience",
            "1",
            "--seed",
            seed,
        ];
        assert_eq!(sg(&args, "").0, EXIT_OK);
        std::fs::read_to_string(out.join("report.json")).unwrap()
    };
    assert_ne!(sizes("1"), sizes("2"));
}

#[test]
fn predict_emits_one_record_per_non_blank_line() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 30);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--graph", &graph, "--out", p(&out)];
    args.extend(QUICK);
    assert_eq!(sg(&args, "").0, EXIT_OK);
    let ckpt = out.join("checkpoint.json");

    let (code, stdout, _) = sg(
        &["predict", "--checkpoint", p(&ckpt)],
        "so you are feeling stuck\n\nsee you\n",
    );
    assert_eq!(code, EXIT_OK);
    let records: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1]["line"], 3);
    assert_eq!(records[0]["skill"]["probabilities"].as_array().unwrap().len(), 8);
    assert!(records[0].get("representation").is_none());

    let (code, stdout, _) = sg(&["predict", "--checkpoint", p(&ckpt), "--representation"], "hello\n");
    assert_eq!(code, EXIT_OK);
    let rec: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(rec["representation"].as_array().unwrap().len(), 832);

    assert_eq!(
        sg(&["predict", "--checkpoint", p(&ckpt)], ""),
        (EXIT_OK, String::new(), String::new())
    );
}

#[test]
fn export_is_832_wide_with_a_two_wide_pca_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let graph = gen(dir.path(), 30);
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--graph", &graph, "--out", p(&run_dir), "--layer", "gat"];
    args.extend(QUICK);
    assert_eq!(sg(&args, "").0, EXIT_OK);
    let ckpt = run_dir.join("checkpoint.json");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for e in [&e1, &e2] {
        assert_eq!(
            sg(
                &["export", "--checkpoint", p(&ckpt), "--graph", &graph, "--out", p(e)],
                ""
            )
            .0,
            EXIT_OK
        );
    }
    let emb = std::fs::read_to_string(e1.join("embeddings.tsv")).unwrap();
    let pca = std::fs::read_to_string(e1.join("pca.tsv")).unwrap();
    assert!(emb.starts_with("dim=832\n"));
    assert!(pca.starts_with("dim=2\n"));
    assert_eq!(emb.lines().count(), 31);
    assert_eq!(emb, std::fs::read_to_string(e2.join("embeddings.tsv")).unwrap());
    assert_eq!(pca, std::fs::read_to_string(e2.join("pca.tsv")).unwrap());
}

#[test]
fn config_file_unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let (code, _, err) = sg(&["cv", "--config", p(&cfg)], "");
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("epochz"), "{err}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_skillgraph");
    let dir = tempfile::tempdir().unwrap();
    let missing = Command::new(bin)
        .args(["validate", p(&dir.path().join("nope.json"))])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_USAGE));
    let bad_flag = Command::new(bin).args(["cv", "--layer", "mlp"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(EXIT_USAGE));
    let graph = gen(dir.path(), 20);
    let ok = Command::new(bin).args(["validate", &graph]).output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
}
