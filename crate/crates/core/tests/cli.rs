use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic").join(name)
}

fn ktm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktm"))
        .args(args)
        .output()
        .expect("run ktm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn train(out: &Path, sweeps: &str, extra: &[&str]) -> Output {
    let corpus = data("docword.txt");
    let vocab = data("vocab.txt");
    let meta = data("meta.csv");
    let mut args = vec![
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--meta",
        meta.to_str().unwrap(),
        "--topics",
        "3",
        "--sweeps",
        sweeps,
        "--hyperopt-every",
        "5",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ktm(&args)
}

#[test]
fn train_predict_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    let o = train(&model, "12", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("sweeps=12 last_training_perplexity="));
    assert!(model.join("manifest.json").exists());

    let o = ktm(&["predict", "--model", model.to_str().unwrap(), "--at", "3.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("topic,probability,y_variance"));
    let mut total = 0.0;
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], k.to_string());
        total += f[1].parse::<f64>().unwrap();
        assert!(f[2].parse::<f64>().unwrap() > 0.0);
    }
    assert!((total - 1.0).abs() < 1e-9);

    let series = dir.path().join("series.csv");
    let o = ktm(&[
        "export-topic-series",
        "--model",
        model.to_str().unwrap(),
        "--grid",
        data("grid.csv").to_str().unwrap(),
        "--out",
        series.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&series).unwrap();
    assert_eq!(text.lines().count(), 1 + 41 * 3);
    assert!(text.starts_with("grid_point,topic,probability\n"));
}

#[test]
fn untrained_model_has_vocabulary_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    assert!(train(&model, "0", &[]).status.success());
    let o = ktm(&[
        "eval-perplexity",
        "--model",
        model.to_str().unwrap(),
        "--corpus",
        data("docword.txt").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let ppl: f64 = stdout(&o).trim().parse().unwrap();
    assert!((ppl - 50.0).abs() < 0.5, "{ppl}");
}

#[test]
fn eval_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    assert!(train(&model, "6", &["--no-gp"]).status.success());
    let trace = dir.path().join("trace.csv");
    let o = ktm(&[
        "eval-perplexity",
        "--model",
        model.to_str().unwrap(),
        "--corpus",
        data("docword.txt").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 7);
    let first: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 50.0).abs() < 0.5);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(train(&a, "8", &[]).status.success());
    assert!(train(&b, "8", &["--threads", "1"]).status.success());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn exit_codes() {
    let o = ktm(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ktm(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("bridge-check"));

    let dir = tempfile::tempdir().unwrap();
    let o = ktm(&["predict", "--model", dir.path().join("missing").to_str().unwrap(), "--at", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    let model = dir.path().join("model");
    assert!(train(&model, "3", &[]).status.success());
    let o = ktm(&["predict", "--model", model.to_str().unwrap(), "--at", "early"]);
    assert_eq!(o.status.code(), Some(1));

    let o = train(&dir.path().join("g"), "3", &["--kernel", "graph"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--edges"));
}

#[test]
fn in_process_runner_matches_binary() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = ktm::cli::run_with(["ktm", "predict", "--model", "/nonexistent", "--at", "1"], &mut out, &mut err);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(String::from_utf8(err).unwrap().starts_with("error: loading /nonexistent"));
}

#[test]
fn bridge_check_writes_table() {
    let o = ktm(&[
        "bridge-check",
        "--topics",
        "4",
        "--repetitions",
        "2",
        "--samples",
        "2000",
        "--burn-in",
        "1000",
        "--grid",
        "0,20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with('#'));
    assert_eq!(lines[1], "n_obs,bridge_err,bridge_sd,mcmc_err,mcmc_sd");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0,") && lines[3].starts_with("20,"));

    let o = ktm(&["bridge-check", "--samples", "10"]);
    assert_eq!(o.status.code(), Some(1));
}
