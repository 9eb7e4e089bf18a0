//! End-to-end runs of the `bgnlm` binary: simulate -> fit -> predict
//! pipelines, report artifacts, replay determinism and error reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bgnlm"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("bgnlm-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A run stamp with the timestamp line removed, for replay comparison.
fn stamp_without_timestamp(dir: &Path) -> String {
    read(&dir.join("run_config.json"))
        .lines()
        .filter(|l| !l.contains("generated_at"))
        .collect::<Vec<_>>()
        .join("\n")
}

const FAST: &[&str] = &[
    "--populations", "2",
    "--iterations", "40",
    "--pop-size", "8",
    "--max-model-size", "5",
];

#[test]
fn simulate_then_fit_produces_reports() {
    let dir = workdir("fit");
    let csv = dir.join("sim.csv");
    run_ok(&["simulate", "--n", "250", "--sigma", "1.0", "--seed", "3", "--out", csv.to_str().unwrap()]);
    assert!(read(&csv).starts_with("y,x1,x2,"));

    let out = dir.join("run");
    let mut args = vec![
        "fit",
        "--data", csv.to_str().unwrap(),
        "--response", "y",
        "--out", out.to_str().unwrap(),
        "--seed", "5",
    ];
    args.extend_from_slice(FAST);
    run_ok(&args);

    let discoveries = read(&out.join("discoveries.tsv"));
    assert!(discoveries.starts_with("signature\tmip\toc\tdepth\n"));
    assert!(discoveries.lines().count() > 1, "no discovery rows");
    let models = read(&out.join("models.tsv"));
    assert!(models.starts_with("model\tposterior\n"));
    let stamp = read(&out.join("run_config.json"));
    assert!(stamp.contains("\"command\": \"fit\""));
    assert!(stamp.contains("\"chain_seeds\""));
    assert!(stamp.contains("\"generated_at\""));
}

#[test]
fn fit_replays_byte_identically_except_timestamp() {
    let dir = workdir("replay");
    let csv = dir.join("sim.csv");
    run_ok(&["simulate", "--n", "250", "--seed", "8", "--out", csv.to_str().unwrap()]);

    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(name);
        let mut args = vec![
            "fit",
            "--data", csv.to_str().unwrap(),
            "--response", "y",
            "--out", out.to_str().unwrap(),
            "--seed", "11",
            "--threads", "2",
        ];
        args.extend_from_slice(FAST);
        run_ok(&args);
        outs.push(out);
    }
    assert_eq!(
        read(&outs[0].join("discoveries.tsv")),
        read(&outs[1].join("discoveries.tsv"))
    );
    assert_eq!(
        read(&outs[0].join("models.tsv")),
        read(&outs[1].join("models.tsv"))
    );
    assert_eq!(
        stamp_without_timestamp(&outs[0]),
        stamp_without_timestamp(&outs[1])
    );
}

#[test]
fn predict_writes_metrics_against_held_out_data() {
    let dir = workdir("predict");
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    run_ok(&["simulate", "--n", "300", "--sigma", "0.5", "--seed", "21", "--out", train.to_str().unwrap()]);
    run_ok(&["simulate", "--n", "120", "--sigma", "0.5", "--seed", "22", "--out", test.to_str().unwrap()]);

    let out = dir.join("run");
    let mut args = vec![
        "predict",
        "--data", train.to_str().unwrap(),
        "--test", test.to_str().unwrap(),
        "--response", "y",
        "--out", out.to_str().unwrap(),
        "--seed", "1",
    ];
    args.extend_from_slice(FAST);
    run_ok(&args);

    let metrics = read(&out.join("metrics.json"));
    assert!(metrics.contains("\"rmse\""));
    assert!(metrics.contains("\"mae\""));
    assert!(metrics.contains("\"corr\""));
    let rmse: f64 = metrics
        .lines()
        .find(|l| l.contains("rmse"))
        .and_then(|l| l.split(':').nth(1))
        .and_then(|v| v.trim().trim_end_matches(',').parse().ok())
        .unwrap();
    assert!(rmse.is_finite() && rmse >= 0.0);
}

#[test]
fn evaluate_sim_reports_power_and_fdr() {
    let dir = workdir("evalsim");
    let out = dir.join("run");
    let mut args = vec![
        "evaluate-sim",
        "--repetitions", "2",
        "--n", "250",
        "--out", out.to_str().unwrap(),
        "--seed", "4",
    ];
    args.extend_from_slice(FAST);
    run_ok(&args);

    let recovery = read(&out.join("recovery.json"));
    for field in ["\"power\"", "\"expected_fp\"", "\"fdr\"", "\"discoveries\""] {
        assert!(recovery.contains(field), "missing {field} in {recovery}");
    }
    let stamp = read(&out.join("run_config.json"));
    assert!(stamp.contains("\"command\": \"evaluate-sim\""));
    // Two repetitions stamp one seed group each.
    let groups = stamp.matches('[').count();
    assert!(groups >= 3, "expected nested chain_seeds arrays: {stamp}");
}

#[test]
fn evaluate_sim_replays_identically() {
    let dir = workdir("evalsim-replay");
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(name);
        let mut args = vec![
            "evaluate-sim",
            "--repetitions", "2",
            "--n", "250",
            "--out", out.to_str().unwrap(),
            "--seed", "4",
        ];
        args.extend_from_slice(FAST);
        run_ok(&args);
        outs.push(out);
    }
    assert_eq!(
        read(&outs[0].join("recovery.json")),
        read(&outs[1].join("recovery.json"))
    );
    assert_eq!(
        stamp_without_timestamp(&outs[0]),
        stamp_without_timestamp(&outs[1])
    );
}

#[test]
fn missing_data_file_fails_with_a_clear_error() {
    let out = bin()
        .args(["fit", "--data", "/nonexistent/file.csv", "--response", "y"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn unparseable_data_reports_row_and_column() {
    let dir = workdir("badcsv");
    let csv = dir.join("bad.csv");
    std::fs::write(&csv, "y,P\n1,2\n3,oops\n").unwrap();
    let out = bin()
        .args(["fit", "--data", csv.to_str().unwrap(), "--response", "y"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('P') && stderr.contains('3'), "stderr: {stderr}");
}

#[test]
fn config_file_sets_base_values_and_flags_override() {
    let dir = workdir("config");
    let csv = dir.join("sim.csv");
    run_ok(&["simulate", "--n", "250", "--seed", "6", "--out", csv.to_str().unwrap()]);
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "populations = 2\niterations = 40\npop_size = 8\nmax_model_size = 5\nseed = 123\n").unwrap();

    let out = dir.join("run");
    run_ok(&[
        "fit",
        "--data", csv.to_str().unwrap(),
        "--response", "y",
        "--config", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--seed", "77", // flag overrides the file
    ]);
    let stamp = read(&out.join("run_config.json"));
    assert!(stamp.contains("\"seed\": 77"), "{stamp}");
    assert!(stamp.contains("\"populations\": 2"), "{stamp}");
}
