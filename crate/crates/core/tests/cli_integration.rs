//! End-to-end checks of the `secfed` binary: config handling, output file
//! contract, determinism, and the sweep/selfcheck commands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn secfed(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_secfed"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

const FAST_CONFIG: &str = r#"
num_clients = 6
rounds = 4
threshold = 2
model_dim = 9
samples_per_client = 16
seed = 7
modulus_bits = 256
sigma_override = 0.0
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    let outdir = dir.join("out");
    // Later lines win: merge by key so tests can override the base config.
    let mut keys: Vec<(String, String)> = Vec::new();
    let base = format!("{FAST_CONFIG}\noutput_dir = \"{}\"\n{extra}", outdir.display());
    for line in base.lines() {
        let Some((key, _)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().to_string();
        keys.retain(|(k, _)| *k != key);
        keys.push((key, line.trim().to_string()));
    }
    let merged: String = keys
        .into_iter()
        .map(|(_, line)| line + "\n")
        .collect();
    fs::write(&path, merged).unwrap();
    path
}

fn sha(path: &Path) -> String {
    let bytes = fs::read(path).unwrap();
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn run_writes_metrics_ledger_and_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = secfed(&["run", config.to_str().unwrap()], &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let outdir = tmp.path().join("out");
    let metrics = fs::read_to_string(outdir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.trim().lines().collect();
    assert_eq!(lines.len(), 1 + 4, "header plus one row per round");
    assert!(lines[0].starts_with("round,completed,abort_reason"));
    let ledger = fs::read_to_string(outdir.join("ledger.csv")).unwrap();
    assert_eq!(ledger.trim().lines().count(), 1 + 4);
    // The config echo reproduces the effective experiment.
    let echo = fs::read_to_string(outdir.join("config.toml")).unwrap();
    assert!(echo.contains("seed = 7"));
    assert!(echo.contains("modulus_bits = 256"));
    // No transcript file unless requested.
    assert!(!outdir.join("transcripts.jsonl").exists());
}

#[test]
fn unknown_key_fails_with_name_in_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "threshlod = 3\n");
    let out = secfed(&["run", config.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("threshlod"), "stderr: {stderr}");
    assert!(stderr.contains("line"), "stderr: {stderr}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    assert!(secfed(&["run", config.to_str().unwrap()], &[]).status.success());
    let first = sha(&tmp.path().join("out").join("metrics.csv"));
    assert!(secfed(&["run", config.to_str().unwrap()], &[]).status.success());
    let second = sha(&tmp.path().join("out").join("metrics.csv"));
    assert_eq!(first, second);
}

#[test]
fn transcripts_written_when_requested() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "write_transcripts = true\n");
    assert!(secfed(&["run", config.to_str().unwrap()], &[]).status.success());
    let text = fs::read_to_string(tmp.path().join("out").join("transcripts.jsonl")).unwrap();
    // One JSON object per line, parseable, covering all four rounds.
    let mut rounds = std::collections::BTreeSet::new();
    for line in text.trim().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        rounds.insert(v["round"].as_u64().unwrap());
    }
    assert_eq!(rounds.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn output_root_env_rebases_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("experiment.toml");
    fs::write(&config_path, format!("{FAST_CONFIG}\noutput_dir = \"nested/exp\"\n")).unwrap();
    let out = secfed(
        &["run", config_path.to_str().unwrap()],
        &[("SECFED_OUTPUT_ROOT", root.path().to_str().unwrap())],
    );
    assert!(out.status.success());
    assert!(root.path().join("nested/exp/metrics.csv").exists());
    // Nothing written relative to the cwd.
    assert!(!Path::new("nested").exists());
}

#[test]
fn flag_overrides_beat_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = secfed(
        &["run", config.to_str().unwrap(), "--rounds", "2", "--seed", "99"],
        &[],
    );
    assert!(out.status.success());
    let outdir = tmp.path().join("out");
    let metrics = fs::read_to_string(outdir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim().lines().count(), 1 + 2);
    let echo = fs::read_to_string(outdir.join("config.toml")).unwrap();
    assert!(echo.contains("seed = 99"));
    assert!(echo.contains("rounds = 2"));
}

#[test]
fn sweep_writes_one_row_per_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "num_clients = 12\n");
    let out = secfed(
        &[
            "sweep",
            config.to_str().unwrap(),
            "--dropout-rates",
            "0,0.25,0.5,0.75",
        ],
        &[],
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(tmp.path().join("out").join("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.trim().lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[0].starts_with("dropout_rate,completed_rounds"));
}

#[test]
fn sweep_single_rate_matches_run_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    assert!(secfed(
        &["sweep", config.to_str().unwrap(), "--dropout-rates", "0"],
        &[]
    )
    .status
    .success());
    let sweep = fs::read_to_string(tmp.path().join("out").join("sweep.csv")).unwrap();
    let row: Vec<&str> = sweep.trim().lines().nth(1).unwrap().split(',').collect();
    let sweep_final_loss: f64 = row[4].parse().unwrap();

    assert!(secfed(&["run", config.to_str().unwrap()], &[]).status.success());
    let metrics = fs::read_to_string(tmp.path().join("out").join("metrics.csv")).unwrap();
    let last: Vec<&str> = metrics.trim().lines().last().unwrap().split(',').collect();
    let run_final_loss: f64 = last[5].parse().unwrap();
    assert_eq!(sweep_final_loss, run_final_loss);
}

#[test]
fn config_echo_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    assert!(secfed(&["run", config.to_str().unwrap()], &[]).status.success());
    let outdir = tmp.path().join("out");
    let original = sha(&outdir.join("metrics.csv"));
    // Re-run from the echoed config alone, into a fresh directory.
    let echo = outdir.join("config.toml");
    let second = tmp.path().join("replay");
    let out = secfed(
        &[
            "run",
            echo.to_str().unwrap(),
            "--output-dir",
            second.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success());
    assert_eq!(original, sha(&second.join("metrics.csv")));
}

#[test]
fn malformed_rate_list_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = secfed(
        &["sweep", config.to_str().unwrap(), "--dropout-rates", "1.5"],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1.5"));
}

#[test]
fn selfcheck_passes_quickly() {
    let start = std::time::Instant::now();
    let out = secfed(&["selfcheck"], &[]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for check in [
        "ahe-roundtrip",
        "bhm-projection-optimality",
        "sigma-formula",
        "oracle-equivalence",
        "csr-pitfall",
    ] {
        assert!(stdout.contains(check), "missing {check}: {stdout}");
    }
    assert!(!stdout.contains("FAIL"));
    assert!(start.elapsed().as_secs() < 30, "selfcheck exceeded 30s");
}

#[test]
fn abort_dominated_run_exits_nonzero_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    // 4 clients, threshold 4, heavy dropout: most rounds abort.
    let config = write_config(
        tmp.path(),
        "num_clients = 4\nthreshold = 4\ndropout_rate = 0.6\nrounds = 8\n",
    );
    let out = secfed(&["run", config.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("abort-dominated"), "stderr: {stderr}");
}
