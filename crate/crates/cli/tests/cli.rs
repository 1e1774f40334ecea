//! End-to-end tests for the command-line binary: exit codes, report files,
//! determinism, and the holonomy/example/list-checks subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pbglab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should run")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn exit_code(o: &Output) -> i32 {
    o.status.code().expect("no signal termination")
}

/// Write a bundled example spec into `dir` and return its path.
fn write_preset(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, pbglab::presets::named(name).expect("known preset")).unwrap();
    path
}

const FAST: &[&str] = &["--samples", "15", "--steps", "128"];

#[test]
fn verify_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let report = dir.path().join("report.json");
    let o = bin()
        .args(["verify", "--input"])
        .arg(&spec)
        .arg("--report")
        .arg(&report)
        .args(FAST)
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));

    let out = stdout(&o);
    assert!(out.contains("holonomy-square"), "{out}");
    assert!(out.contains("ok: 5 passed, 0 failed, 0 skipped"), "{out}");

    let loaded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(loaded["pass"].as_bool(), Some(true));
    assert_eq!(loaded["samples"].as_u64(), Some(15));
    assert_eq!(loaded["steps"].as_u64(), Some(128));
    assert_eq!(loaded["checks"].as_array().map(Vec::len), Some(5));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_caps() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let mut bytes = Vec::new();
    for (idx, threads) in [None, None, Some("1"), Some("2")].iter().enumerate() {
        let report = dir.path().join(format!("report-{idx}.json"));
        let mut cmd = bin();
        cmd.args(["verify", "--input"])
            .arg(&spec)
            .arg("--report")
            .arg(&report)
            .args(FAST);
        match threads {
            Some(t) => cmd.env("PBGLAB_THREADS", t),
            None => cmd.env_remove("PBGLAB_THREADS"),
        };
        let o = cmd.output().unwrap();
        assert_eq!(exit_code(&o), 0, "stderr: {}", stderr(&o));
        bytes.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "two plain runs must agree byte for byte");
    assert_eq!(bytes[0], bytes[2], "a single-threaded run must agree");
    assert_eq!(bytes[0], bytes[3], "a two-thread run must agree");
}

#[test]
fn seed_override_changes_and_stabilizes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let mut by_seed = Vec::new();
    for (idx, seed) in ["42", "42", "43"].iter().enumerate() {
        let report = dir.path().join(format!("report-{idx}.json"));
        let o = bin()
            .args(["verify", "--input"])
            .arg(&spec)
            .arg("--report")
            .arg(&report)
            .args(["--seed", seed])
            .args(FAST)
            .output()
            .unwrap();
        assert_eq!(exit_code(&o), 0, "stderr: {}", stderr(&o));
        by_seed.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(by_seed[0], by_seed[1], "equal seeds must reproduce the bytes");
    assert_ne!(by_seed[0], by_seed[2], "a different seed must move sampled residuals");
}

#[test]
fn failing_spec_exits_one_but_still_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "not-isometablic");
    let report = dir.path().join("report.json");
    let o = bin()
        .args(["verify", "--input"])
        .arg(&spec)
        .arg("--report")
        .arg(&report)
        .args(["--samples", "60", "--steps", "128"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 1, "stdout: {}", stdout(&o));

    let out = stdout(&o);
    assert!(out.contains("FAIL  isometablic"), "{out}");
    assert!(out.contains("FAILED:"), "{out}");

    let loaded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(loaded["pass"].as_bool(), Some(false));
    assert_eq!(loaded["checks"][0]["status"].as_str(), Some("fail"));
}

#[test]
fn tolerance_override_can_flip_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "not-isometablic");
    let o = bin()
        .args(["verify", "--input"])
        .arg(&spec)
        .args(["--tol", "isometablic=10", "--samples", "60", "--steps", "128"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS  isometablic"), "{}", stdout(&o));
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let spec = spec.to_str().unwrap();

    // Unreadable input file.
    let missing = dir.path().join("missing.json");
    let o = run(&["verify", "--input", missing.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));

    // A file that is not a valid spec.
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"pbglab_spec\": 1}").unwrap();
    let o = run(&["verify", "--input", broken.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));

    // Tolerance flag problems: unknown check, bad syntax, bad value.
    for tol in ["nope=1e-4", "isometablic", "isometablic=abc", "isometablic=0"] {
        let o = run(&["verify", "--input", spec, "--tol", tol]);
        assert_eq!(exit_code(&o), 2, "--tol {tol}: {}", stderr(&o));
    }

    // Degenerate sampling parameters.
    for args in [["--samples", "0"], ["--steps", "0"]] {
        let o = run(&["verify", "--input", spec, args[0], args[1]]);
        assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
    }

    // Missing required flag is a usage error.
    let o = run(&["verify"]);
    assert_eq!(exit_code(&o), 2);

    // Worker-pool cap must be an integer.
    let o = bin()
        .args(["list-checks"])
        .env("PBGLAB_THREADS", "abc")
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
}

#[test]
fn example_emits_the_bundled_documents() {
    // To stdout: exact bytes of the bundled document.
    let o = run(&["example", "hopf"]);
    assert_eq!(exit_code(&o), 0);
    assert_eq!(stdout(&o), pbglab::presets::named("hopf").unwrap());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(parsed["name"].as_str(), Some("hopf"));

    // To a file via --out.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex.json");
    let o = bin()
        .args(["example", "transition-pipeline", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        pbglab::presets::named("transition-pipeline").unwrap()
    );

    // Unknown name lists the available set.
    let o = run(&["example", "bogus"]);
    assert_eq!(exit_code(&o), 2);
    let err = stderr(&o);
    for (name, _) in pbglab::presets::all() {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn list_checks_names_every_check() {
    let o = run(&["list-checks"]);
    assert_eq!(exit_code(&o), 0);
    let out = stdout(&o);
    for def in pbglab::runner::registry() {
        assert!(out.contains(def.name), "missing {} in {out}", def.name);
    }
}

#[test]
fn holonomy_reproduces_the_square_log() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let o = bin()
        .args(["holonomy", "--input"])
        .arg(&spec)
        .args([
            "--loop",
            r#"{"kind":"rectangle","chart":0,"corner":[0,0],"plane":[0,1],"sides":[1,1],"expect_log":[-1.0,0.0,0.0]}"#,
            "--steps",
            "512",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("holonomy in SU(2):"), "{out}");
    assert!(out.contains("log coordinates: [-1.0000000"), "{out}");

    // The declared expectation is echoed back as a deviation.
    let dev_line = out
        .lines()
        .find(|l| l.contains("deviation from declared expect_log"))
        .unwrap_or_else(|| panic!("no deviation line in {out}"));
    let dev: f64 = dev_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(dev < 1e-6, "{dev_line}");
}

#[test]
fn holonomy_rejects_bad_loops_and_missing_connections() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_preset(dir.path(), "holonomy-square");
    let spec = spec.to_str().unwrap();
    let square = r#"{"kind":"rectangle","chart":0,"corner":[0,0],"plane":[0,1],"sides":[1,1]}"#;

    // Zero steps.
    let o = run(&["holonomy", "--input", spec, "--loop", square, "--steps", "0"]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));

    // A path that does not close.
    let open = r#"{"kind":"param","chart":0,"coords":["t","0.5"]}"#;
    let o = run(&["holonomy", "--input", spec, "--loop", open]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("does not close"), "{}", stderr(&o));

    // Not a loop description at all.
    let o = run(&["holonomy", "--input", spec, "--loop", "{\"kind\":\"wavy\"}"]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));

    // A chart index the bundle does not have.
    let far = r#"{"kind":"rectangle","chart":7,"corner":[0,0],"plane":[0,1],"sides":[1,1]}"#;
    let o = run(&["holonomy", "--input", spec, "--loop", far]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));

    // A spec with no connection block cannot lift anything.
    let no_conn = write_preset(dir.path(), "transition-pipeline");
    let o = run(&[
        "holonomy",
        "--input",
        no_conn.to_str().unwrap(),
        "--loop",
        square,
    ]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("no connection"), "{}", stderr(&o));
}
