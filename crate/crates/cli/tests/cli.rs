use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
    "data": {"source": "synthetic", "seed": 4, "segments": [
        {"kind": "sine", "length": 250, "amplitude": 2.0, "period": 30.0, "offset": 6.0, "noise_std": 0.2},
        {"kind": "white-noise", "length": 250, "mean": 6.0, "noise_std": 0.5}
    ]},
    "split": {"kind": "ratio", "segments": 2, "test_len": 10},
    "forecasters": [
        {"kind": "ar-least-squares"},
        {"kind": "bagged-trees", "hyperparams": {"trees": 4}},
        {"kind": "feedforward-net", "hyperparams": {"epochs": 5}}
    ],
    "rl": {"episodes": 8},
    "seeds": [0, 1]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ensemble-rl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_forecast_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let train = dir.path().join("train");
    let o = run(&["train", "--config", arg(&config), "--out", arg(&train)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "policy.json", "episodes.csv", "static_weights.json", "online_nn.json"] {
        assert!(train.join(f).exists(), "{f}");
    }
    assert!(train.join("models/ar-least-squares.json").exists());

    for strategy in ["rl", "uniform", "static", "online-nn", "single:bagged-trees"] {
        let out = dir.path().join(format!("forecast-{strategy}").replace(':', "-"));
        let o = run(&[
            "forecast", "--config", arg(&config), "--artifacts", arg(&train), "--out", arg(&out),
            "--strategy", strategy,
        ]);
        assert_eq!(code(&o), 0, "{strategy}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
        assert_eq!(csv.lines().count(), 21, "{strategy}");
        assert!(csv.starts_with("index,prediction"));
    }

    let compare = dir.path().join("compare");
    let o = run(&["compare", "--config", arg(&config), "--out", arg(&compare), "--feedback", "proxy"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("proxy-feedback"), "{stdout}");
    for f in ["report.json", "report.txt", "rewards.csv", "rewards.svg", "predictions.csv", "bands.csv", "compare_manifest.json"] {
        assert!(compare.join(f).exists(), "{f}");
    }
    let rewards = std::fs::read_to_string(compare.join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 1 + 8);
}

#[test]
fn rerun_from_manifest_reproduces_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    assert_eq!(code(&run(&["train", "--config", arg(&config), "--out", arg(&first), "--seed", "3"])), 0);
    let manifest = first.join("manifest.json");
    assert_eq!(code(&run(&["train", "--config", arg(&manifest), "--out", arg(&second)])), 0);
    let a = std::fs::read(first.join("policy.json")).unwrap();
    let b = std::fs::read(second.join("policy.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synth_writes_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("synth");
    let o = run(&["synth", "--config", arg(&config), "--out", arg(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 500);
}

#[test]
fn invalid_parameters_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &CONFIG.replace(r#""episodes": 8"#, r#""buckets": 0"#));
    let out = dir.path().join("out");
    let o = run(&["train", "--config", arg(&config), "--out", arg(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("policy.json").exists());

    let o = run(&["train", "--config", arg(&write_config(dir.path(), CONFIG)), "--strategy", "single:nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_files_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--config", arg(&dir.path().join("absent.json"))]);
    assert_eq!(code(&o), 4);

    let config = write_config(dir.path(), CONFIG);
    let o = run(&[
        "forecast", "--config", arg(&config), "--artifacts", arg(&dir.path().join("nothing")),
        "--out", arg(&dir.path().join("out")),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_strategies_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // A lag longer than any segment leaves nothing to train on.
    let text = CONFIG.replace(r#"{"kind": "ar-least-squares"}"#, r#"{"kind": "ar-least-squares", "lag_order": 400}"#);
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = run(&["compare", "--config", arg(&config), "--out", arg(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").exists());
}
