//! Binary-level tests: exit codes, subcommand behavior, fetch pipeline.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use logitgate::engine::mock::MockServer;
use logitgate::engine::toy::ToyModelSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_logitgate"))
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../logitgate/fixtures/ccp_sample.jsonl")
        .canonicalize()
        .unwrap()
}

fn toy_config(out_dir: &Path) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    write!(
        f,
        r#"
seed = 5
parallelism = 2
max_steps = 64
output_dir = {out:?}

[engine]
kind = "toy"

[sampler]
temperature = 1.0
top_p = 1.0
repetition_penalty = 1.0

[dataset]
path = {fixture:?}

[classifier]
kind = "rule_based"
"#,
        out = out_dir,
        fixture = fixture_path()
    )
    .unwrap();
    f
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

#[test]
fn validate_accepts_shipped_toy_config() {
    let config =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../logitgate/configs/toy_experiment.toml");
    let output = bin()
        .args(["validate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let out = stdout(&output);
    assert!(out.contains("baseline (0 rules)"), "{out}");
    assert!(out.contains("suppress-nn (1 rules)"), "{out}");
    assert!(out.contains("suppress-nn-eos (2 rules)"), "{out}");
    assert!(out.contains("think_open = 0"), "{out}");
    assert!(out.contains("60 records"), "{out}");
}

#[test]
fn validate_accepts_decay_example_config() {
    let config =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../logitgate/configs/decay_example.toml");
    let output = bin()
        .args(["validate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("suppress-nn-decay-close"),
        "{}",
        stdout(&output)
    );
}

#[test]
fn validate_rejects_missing_dataset_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config_text = std::fs::read_to_string(toy_config(&tmp.path().join("out")).path())
        .unwrap()
        .replace(
            &format!("{:?}", fixture_path()),
            "\"/no/such/dataset.jsonl\"",
        );
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    f.write_all(config_text.as_bytes()).unwrap();

    let output = bin()
        .args(["validate", "--config"])
        .arg(f.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
    assert!(
        stderr(&output).contains("dataset.jsonl"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn validate_rejects_zero_temperature_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config_text = std::fs::read_to_string(toy_config(&tmp.path().join("out")).path())
        .unwrap()
        .replace("temperature = 1.0", "temperature = 0.0");
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    f.write_all(config_text.as_bytes()).unwrap();

    let output = bin()
        .args(["validate", "--config"])
        .arg(f.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(
        stderr(&output).contains("temperature"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn run_produces_matrix_and_resume_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let config = toy_config(&out_dir);

    let output = bin()
        .args(["run", "--config"])
        .arg(config.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("180 total, 180 generated now"),
        "{}",
        stdout(&output)
    );

    let generations = std::fs::read_to_string(out_dir.join("generations.jsonl")).unwrap();
    assert_eq!(generations.lines().count(), 180);
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("timings.jsonl").exists());

    // Resume on a complete run generates nothing new.
    let output = bin()
        .args(["run", "--resume", "--config"])
        .arg(config.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("0 generated now"),
        "{}",
        stdout(&output)
    );
    assert!(
        stdout(&output).contains("180 reused"),
        "{}",
        stdout(&output)
    );

    // Re-running without --resume refuses to touch the directory.
    let output = bin()
        .args(["run", "--config"])
        .arg(config.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
}

#[test]
fn resume_after_interruption_runs_exactly_the_missing_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let config = toy_config(&out_dir);
    assert!(bin()
        .args(["run", "--config"])
        .arg(config.path())
        .output()
        .unwrap()
        .status
        .success());
    let full = std::fs::read_to_string(out_dir.join("generations.jsonl")).unwrap();
    assert_eq!(full.lines().count(), 180);

    // Simulate a kill at 100 of 180 pairs.
    let interrupted = tmp.path().join("interrupted");
    std::fs::create_dir_all(&interrupted).unwrap();
    std::fs::copy(
        out_dir.join("manifest.json"),
        interrupted.join("manifest.json"),
    )
    .unwrap();
    let first100: String = full.lines().take(100).map(|l| format!("{l}\n")).collect();
    std::fs::write(interrupted.join("generations.jsonl"), &first100).unwrap();
    let classifications = std::fs::read_to_string(out_dir.join("classifications.jsonl")).unwrap();
    let first100c: String = classifications
        .lines()
        .take(100)
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(interrupted.join("classifications.jsonl"), &first100c).unwrap();

    let output = bin()
        .args(["run", "--resume", "--config"])
        .arg(config.path())
        .arg("--out")
        .arg(&interrupted)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("80 generated now, 100 reused"),
        "{}",
        stdout(&output)
    );
    // And the resumed file equals the uninterrupted one byte for byte.
    let resumed = std::fs::read_to_string(interrupted.join("generations.jsonl")).unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn report_emits_tables_and_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let config = toy_config(&out_dir);
    assert!(bin()
        .args(["run", "--config"])
        .arg(config.path())
        .output()
        .unwrap()
        .status
        .success());

    let output = bin().arg("report").arg(&out_dir).output().unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    for file in [
        "answer_class_distribution.csv",
        "cot_class_distribution.csv",
        "answer_pvalues.csv",
        "cot_pvalues.csv",
        "raw_report.json",
    ] {
        assert!(
            out_dir.join("reports").join(file).exists(),
            "missing {file}"
        );
    }
    let pvalues = std::fs::read_to_string(out_dir.join("reports/answer_pvalues.csv")).unwrap();
    assert_eq!(
        pvalues.lines().count(),
        4,
        "header + 3 unordered pairs:\n{pvalues}"
    );

    // Tamper with one record: report must fail with exit 4 and name it.
    let path = out_dir.join("classifications.jsonl");
    let content = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, content.replacen("suppress-nn", "ssuppres-nn", 1)).unwrap();
    let output = bin().arg("report").arg(&out_dir).output().unwrap();
    assert_eq!(output.status.code(), Some(4), "{}", stderr(&output));
    assert!(stderr(&output).contains("integrity"), "{}", stderr(&output));
}

#[test]
fn classify_reclassifies_stored_generations() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let config = toy_config(&out_dir);
    assert!(bin()
        .args(["run", "--config"])
        .arg(config.path())
        .output()
        .unwrap()
        .status
        .success());

    let before = std::fs::read(out_dir.join("classifications.jsonl")).unwrap();
    let output = bin()
        .arg("classify")
        .arg(&out_dir)
        .args(["--config"])
        .arg(config.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("re-classified 180"),
        "{}",
        stdout(&output)
    );
    // Same classifier, same generations: identical bytes.
    let after = std::fs::read(out_dir.join("classifications.jsonl")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn run_with_single_arm_reports_empty_pvalue_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let base = std::fs::read_to_string(toy_config(&out_dir).path()).unwrap();
    let config_text = format!(
        "{base}\n[interventions]\nstandard = false\n\n[[interventions.custom]]\nname = \"baseline\"\n"
    );
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    f.write_all(config_text.as_bytes()).unwrap();

    let output = bin()
        .args(["run", "--config"])
        .arg(f.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("60 total"), "{}", stdout(&output));

    let output = bin().arg("report").arg(&out_dir).output().unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let pvalues = std::fs::read_to_string(out_dir.join("reports/answer_pvalues.csv")).unwrap();
    assert_eq!(pvalues.lines().count(), 1, "header only:\n{pvalues}");
    let dist =
        std::fs::read_to_string(out_dir.join("reports/answer_class_distribution.csv")).unwrap();
    assert!(dist.lines().count() > 1);
}

#[test]
fn remote_run_without_api_key_fails_fast_with_exit_3() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    write!(
        f,
        r#"
seed = 5
output_dir = {out:?}

[engine]
kind = "remote"
endpoint = {endpoint:?}
model = "toy"
api_key_env = "LOGITGATE_CLI_TEST_KEY_UNSET"

[sampler]
temperature = 1.0
top_p = 1.0
repetition_penalty = 1.0

[specials]
think_open = 0
think_close = 2
double_newline = 1
eos = 3

[dataset]
path = {fixture:?}

[classifier]
kind = "rule_based"
"#,
        out = tmp.path().join("run"),
        endpoint = server.url(),
        fixture = fixture_path()
    )
    .unwrap();

    let output = bin()
        .args(["run", "--config"])
        .arg(f.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", stderr(&output));
    assert!(
        stderr(&output).contains("LOGITGATE_CLI_TEST_KEY_UNSET"),
        "{}",
        stderr(&output)
    );
    // Fatal before any request reached the server.
    assert_eq!(server.request_count(), 0);
}

fn synthetic_ccp_csv() -> String {
    let mut csv = String::from("subject,prompt\n");
    for category in ["Hong Kong", "Taiwan", "Tibet", "Xinjiang", "Other"] {
        for i in 0..20 {
            csv.push_str(&format!("{category},Synthetic question {category} {i}?\n"));
        }
    }
    csv
}

#[test]
fn fetch_downloads_converts_and_samples() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    server.serve_static("/train.csv", synthetic_ccp_csv().into_bytes());
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join("ccp.jsonl");

    let output = bin()
        .args(["fetch", "ccp", "--out"])
        .arg(&dest)
        .args([
            "--url",
            &format!("{}/train.csv", server.url()),
            "--categories",
            "Hong Kong,Taiwan,Tibet,Xinjiang",
            "--sample-per-category",
            "15",
            "--seed",
            "11",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stdout(&output).contains("60 records"),
        "{}",
        stdout(&output)
    );

    let records = logitgate::harness::dataset::load_dataset(&dest).unwrap();
    assert_eq!(records.len(), 60);
    let counts = logitgate::harness::dataset::category_counts(&records);
    assert_eq!(counts.len(), 4);
    assert!(counts.values().all(|&c| c == 15));
}

#[test]
fn fetch_hash_mismatch_quarantines_and_exits_4() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    server.serve_static("/train.csv", synthetic_ccp_csv().into_bytes());
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join("ccp.jsonl");

    let output = bin()
        .args(["fetch", "ccp", "--out"])
        .arg(&dest)
        .args([
            "--url",
            &format!("{}/train.csv", server.url()),
            "--sha256",
            "deadbeefdeadbeefdeadbeefdeadbeefdeadbeefdeadbeefdeadbeefdeadbeef",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4), "{}", stderr(&output));
    assert!(!dest.exists());
    assert!(tmp.path().join("ccp.jsonl.quarantine").exists());
}

#[test]
fn fetch_with_correct_pinned_hash_succeeds() {
    let server = MockServer::start(ToyModelSpec::canonical()).unwrap();
    server.serve_static("/train.csv", synthetic_ccp_csv().into_bytes());
    let tmp = tempfile::tempdir().unwrap();
    let url = format!("{}/train.csv", server.url());

    // Trust-on-first-use: the first fetch reports the hash to pin.
    let first = tmp.path().join("first.jsonl");
    let output = bin()
        .args(["fetch", "ccp", "--out"])
        .arg(&first)
        .args(["--url", &url])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let out = stdout(&output);
    let hash = out
        .lines()
        .find_map(|l| l.strip_prefix("source sha256: "))
        .expect("hash line")
        .trim()
        .to_string();
    assert_eq!(hash.len(), 64);

    // Pinning that hash verifies the next fetch.
    let second = tmp.path().join("second.jsonl");
    let output = bin()
        .args(["fetch", "ccp", "--out"])
        .arg(&second)
        .args(["--url", &url, "--sha256", &hash])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}
