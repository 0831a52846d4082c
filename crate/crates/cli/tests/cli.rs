use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Stdio};

use assert_cmd::prelude::*;

const SMALL: [&str; 10] = [
    "--n",
    "1500",
    "--sizes",
    "200,300",
    "--init-size",
    "200",
    "--batch-size",
    "100",
    "--seeds",
    "1,2",
];

fn screen() -> Command {
    let mut cmd = Command::cargo_bin("screen").unwrap();
    cmd.env_remove("SCREEN_TOKEN").env_remove("RUST_LOG");
    cmd
}

fn stdout_of(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of_failure(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(!out.status.success(), "expected failure; stdout: {}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8(out.stderr).unwrap()
}

fn simulate(out: &Path, extra: &[&str]) -> String {
    stdout_of(screen().arg("simulate").args(SMALL).arg("--out").arg(out).args(extra))
}

#[test]
fn ingest_writes_snapshot_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("refs.csv");
    std::fs::write(
        &input,
        "id,title,abstract\n\
         a,Screening trial,Patients were randomized. Outcomes improved.\n\
         b,Second study,Cohort followed for a decade.\n\
         a,Screening trial,Patients were randomized. Outcomes improved.\n",
    )
    .unwrap();
    let out = dir.path().join("snap");
    let stdout = stdout_of(screen().arg("ingest").arg(&input).arg("--out").arg(&out));
    assert!(stdout.contains("documents          2"), "{stdout}");
    assert!(stdout.contains("duplicates         1"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["documents"], 2);
    assert_eq!(std::fs::read_to_string(out.join("corpus.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(std::fs::read_to_string(out.join("texts.jsonl")).unwrap().lines().count(), 2);

    let err = stderr_of_failure(screen().arg("ingest").arg(dir.path().join("absent.csv")));
    assert!(err.contains("absent.csv"), "{err}");
    let err = stderr_of_failure(screen().args(["ingest", "--format", "jsonl"]).arg(&input));
    assert!(err.starts_with("error:"), "{err}");
    let err = stderr_of_failure(screen().arg("ingest").arg(dir.path().join("refs.txt")));
    assert!(err.contains("--format"), "{err}");
}

#[test]
fn simulate_writes_a_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = simulate(&dir.path().join("one"), &["--id", "small"]);
    for strategy in ["random", "lc", "hp"] {
        assert!(stdout.lines().any(|l| l.starts_with(strategy)), "{strategy} row missing:\n{stdout}");
    }
    simulate(&dir.path().join("two"), &["--id", "small"]);
    let a = std::fs::read(dir.path().join("one/small/summary.json")).unwrap();
    let b = std::fs::read(dir.path().join("two/small/summary.json")).unwrap();
    assert_eq!(a, b, "same seeds, same bytes");
    let other = simulate(&dir.path().join("three"), &["--id", "small", "--seed", "8"]);
    assert!(!other.is_empty());
    assert_ne!(std::fs::read(dir.path().join("three/small/summary.json")).unwrap(), a);
}

#[test]
fn simulate_rejects_bad_settings() {
    let dir = tempfile::tempdir().unwrap();
    let err = stderr_of_failure(screen().args(["simulate", "--target-ir", "1.5"]).arg("--out").arg(dir.path()));
    assert!(err.contains("target_ir"), "{err}");
    let err = stderr_of_failure(screen().args(["simulate", "--strategies", "greedy"]));
    assert!(err.contains("greedy"), "{err}");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing written on error");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("sim.conf");
    std::fs::write(&conf, "# defaults\ntarget_ir = 1.5\nid = from-file\nsynthetic = true\n").unwrap();
    let err = stderr_of_failure(screen().args(["simulate", "--config"]).arg(&conf).args(SMALL));
    assert!(err.contains("target_ir"), "{err}");

    let out = dir.path().join("res");
    let stdout =
        stdout_of(screen().args(["simulate", "--config"]).arg(&conf).args(SMALL).args(["--target-ir", "0.7"]).arg("--out").arg(&out));
    assert!(stdout.contains("target IR 0.70"), "{stdout}");
    assert!(out.join("from-file/summary.json").exists());
}

#[test]
fn report_merges_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    simulate(&results, &["--id", "first"]);
    simulate(&results, &["--id", "second", "--seed", "3"]);
    let out = dir.path().join("report");
    let stdout = stdout_of(screen().arg("report").arg(&results).arg("--out").arg(&out));
    assert!(stdout.contains("2 experiment(s)"), "{stdout}");

    let mut long = csv::Reader::from_path(out.join("long.csv")).unwrap();
    assert_eq!(&long.headers().unwrap()[0], "experiment_id");
    let ids: std::collections::BTreeSet<String> = long.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), ["first", "second"]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    // 2 experiments x 3 strategies x 2 sizes, one best size per strategy
    assert_eq!(summary.lines().count(), 1 + 12);
    assert_eq!(summary.lines().filter(|l| l.ends_with(",true")).count(), 6);

    // a single experiment directory works too
    stdout_of(screen().arg("report").arg(results.join("first")).arg("--out").arg(dir.path().join("r1")));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let err = stderr_of_failure(screen().arg("report").arg(&empty));
    assert!(err.contains("no results"), "{err}");
}

#[test]
fn serve_answers_health_and_refuses_a_taken_port() {
    let mut child = screen()
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let health = reqwest::blocking::get(format!("{base}/health"));
    child.kill().unwrap();
    child.wait().unwrap();
    let health = health.unwrap();
    assert!(health.status().is_success());

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let err = stderr_of_failure(screen().args(["serve", "--addr", &addr]));
    assert!(err.contains("cannot listen"), "{err}");
}
