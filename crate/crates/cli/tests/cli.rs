use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn perishable(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perishable"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let scenario = repo("scenarios/dutch.toml");
    let r = perishable(&["run", scenario.to_str().unwrap(), "--out", out]);
    assert!(r.status.success(), "{}", text(&r.stderr));

    let trace = dir.path().join("trace.csv");
    let full = fs::read_to_string(&trace).unwrap();
    let public = fs::read_to_string(dir.path().join("public_trace.csv")).unwrap();
    assert!(full.starts_with("seq,time,kind,"));
    // The hidden bid's price shows up only in the private trace.
    assert!(full.contains(",bid_submit,13,,1,,0.4,0.4,"), "{full}");
    assert!(public.contains(",bid_submit,13,,1,,,,"), "{public}");

    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    let r = perishable(&["report", trace.to_str().unwrap()]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    assert_eq!(text(&r.stdout), summary);
    assert!(summary.contains("clearing_payout_gap = 0.0"), "{summary}");
}

#[test]
fn seeds_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo("scenarios/stochastic.toml");
    let mut traces = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = dir.path().join(name);
        let r = perishable(&["run", scenario.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", text(&r.stderr));
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_ne!(traces[0], traces[2]);
}

#[test]
fn bundled_scenarios_verify_clean() {
    for entry in fs::read_dir(repo("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let r = perishable(&["verify", path.to_str().unwrap()]);
        assert!(r.status.success(), "{}: {}", path.display(), text(&r.stdout));
        assert!(text(&r.stdout).contains("failures = 0"));
    }
}

#[test]
fn invalid_scenarios_fail_with_the_field_named() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(repo("scenarios/dutch.toml")).unwrap();

    let bad = dir.path().join("bounds.toml");
    fs::write(&bad, base.replace("bounds = [0.25, 4.0]", "bounds = [4.0, 0.25]")).unwrap();
    let r = perishable(&["verify", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(text(&r.stderr).contains("bounds"), "{}", text(&r.stderr));

    let bad = dir.path().join("mechanism.toml");
    fs::write(&bad, base.replace("mechanism = \"dutch\"", "mechanism = \"english\"")).unwrap();
    let r = perishable(&["run", bad.to_str().unwrap()]);
    let err = text(&r.stderr);
    assert_eq!(r.status.code(), Some(2));
    assert!(err.contains("dutch") && err.contains("matching"), "{err}");
}

#[test]
fn truncated_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let scenario = repo("scenarios/matching.toml");
    let r = perishable(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let full = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    let cut = dir.path().join("cut.csv");
    fs::write(&cut, lines[..lines.len() - 1].join("\n")).unwrap();
    let r = perishable(&["report", cut.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(text(&r.stderr).contains("incomplete"), "{}", text(&r.stderr));
}

#[test]
fn beliefs_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let experiment = repo("experiments/quick.toml");
    let r = perishable(&["beliefs", experiment.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let stdout = text(&r.stdout);
    assert!(stdout.contains("a,mean_honest,mean_misreport,se_honest,se_misreport,flag"));
    let table = fs::read_to_string(dir.path().join("honesty.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let density = fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert_eq!(density.lines().count(), 33);
}

#[test]
fn clearing_bench_sweeps_sizes() {
    let r = perishable(&["clearing-bench", "--max-size", "9", "--instances", "50"]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let stdout = text(&r.stdout);
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[7].ends_with("exhaustive"));
    assert!(rows[8].ends_with("hungarian"));
}

#[test]
fn missing_file_is_an_error() {
    let r = perishable(&["report", "/definitely/not/here.csv"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(text(&r.stderr).contains("not/here.csv"));
}
