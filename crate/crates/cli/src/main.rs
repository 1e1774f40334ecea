//! Command-line front end for the verification library: run the checks a
//! spec file declares, lift a single loop and print its holonomy, emit the
//! bundled example specs, and list the check registry.
//!
//! Exit codes: `0` when every requested check passes, `1` when verification
//! ran but a check failed, `2` for anything malformed (unreadable input,
//! invalid spec, bad flags).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbglab::holonomy::holonomy;
use pbglab::io::{self, CheckStatus, LoopSpec};
use pbglab::linalg::CMat;
use pbglab::{presets, runner};

#[derive(Parser)]
#[command(
    name = "pbglab",
    version,
    about = "Verify connection and transition data on charted principal bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks a spec file declares and summarize the outcome.
    Verify {
        /// Spec file (JSON).
        #[arg(long)]
        input: PathBuf,
        /// Write a machine-readable report here (canonical JSON; written
        /// whenever the spec loads, even if checks fail).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override a check tolerance as `name=value`; repeatable.
        #[arg(long = "tol", value_name = "NAME=VALUE")]
        tol: Vec<String>,
        /// Override the spec's sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spec's sample count per check.
        #[arg(long)]
        samples: Option<u64>,
        /// Override the spec's ODE step count per path segment.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Lift one loop through a spec's connection and print the holonomy.
    Holonomy {
        /// Spec file (JSON); must declare a connection.
        #[arg(long)]
        input: PathBuf,
        /// Loop description: a JSON object shaped like one entry of a
        /// spec's `loops` array.
        #[arg(long = "loop", value_name = "JSON")]
        loop_json: String,
        /// ODE steps per segment (defaults to the spec's `steps`).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Print a bundled example spec.
    Example {
        /// Example name; see the error message for the available set.
        name: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every check the runner knows, with defaults.
    ListChecks,
}

fn main() -> ExitCode {
    if let Err(msg) = configure_threads() {
        return fail2(msg);
    }
    match Cli::parse().command {
        Command::Verify {
            input,
            report,
            tol,
            seed,
            samples,
            steps,
        } => cmd_verify(&input, report.as_deref(), &tol, seed, samples, steps),
        Command::Holonomy {
            input,
            loop_json,
            steps,
        } => cmd_holonomy(&input, &loop_json, steps),
        Command::Example { name, out } => cmd_example(&name, out.as_deref()),
        Command::ListChecks => cmd_list_checks(),
    }
}

fn fail2(msg: impl AsRef<str>) -> ExitCode {
    eprintln!("error: {}", msg.as_ref());
    ExitCode::from(2)
}

/// Cap the worker pool from `PBGLAB_THREADS` (unset or `0`: one per core).
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("PBGLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("PBGLAB_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("could not configure the worker pool: {e}"))
}

fn cmd_verify(
    input: &Path,
    report_path: Option<&Path>,
    tol: &[String],
    seed: Option<u64>,
    samples: Option<u64>,
    steps: Option<u64>,
) -> ExitCode {
    let spec = match io::load_spec(input) {
        Ok(s) => s,
        Err(e) => return fail2(format!("{}: {e}", input.display())),
    };
    let compiled = match io::compile(&spec) {
        Ok(c) => c,
        Err(e) => return fail2(format!("{}: {e}", input.display())),
    };

    let mut opts = runner::RunOptions::from_spec(&spec);
    if let Some(s) = seed {
        opts.seed = s;
    }
    if let Some(s) = samples {
        opts.samples = s as usize;
    }
    if let Some(s) = steps {
        opts.steps = s as usize;
    }
    if opts.samples == 0 || opts.steps == 0 {
        return fail2("samples and steps must be positive");
    }
    for entry in tol {
        let Some((name, value)) = entry.split_once('=') else {
            return fail2(format!("--tol wants NAME=VALUE, got `{entry}`"));
        };
        let name = name.trim();
        if runner::lookup(name).is_none() {
            return fail2(format!(
                "--tol names an unknown check `{name}` (see `pbglab list-checks`)"
            ));
        }
        let value: f64 = match value.trim().parse() {
            Ok(v) => v,
            Err(_) => return fail2(format!("--tol value for `{name}` is not a number")),
        };
        if !(value.is_finite() && value > 0.0) {
            return fail2(format!("--tol value for `{name}` must be positive and finite"));
        }
        opts.tolerances.insert(name.to_string(), value);
    }

    let outcome = match runner::run(&spec, &compiled, &opts) {
        Ok(o) => o,
        Err(e) => return fail2(format!("{}: {e}", input.display())),
    };
    if let Some(path) = report_path {
        if let Err(e) = io::write_report(&outcome.report, path) {
            return fail2(format!("could not write {}: {e}", path.display()));
        }
    }
    print_summary(&outcome);
    if outcome.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_summary(outcome: &runner::RunOutcome) {
    let r = &outcome.report;
    println!("{}  (spec {})", r.name, &r.spec_hash[..12.min(r.spec_hash.len())]);
    println!("seed {}  samples {}  steps {}", r.seed, r.samples, r.steps);
    let width = r.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for (c, wall) in r.checks.iter().zip(&outcome.wall_seconds) {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        let mut line = format!(
            "  {status}  {:<width$}  residual {:>9.3e}  tol {:>7.1e}  {wall:6.2}s",
            c.name, c.residual, c.tolerance
        );
        if let Some(note) = &c.note {
            line.push_str("  (");
            line.push_str(note);
            line.push(')');
        }
        println!("{line}");
    }
    let passed = r.checks.iter().filter(|c| c.status == CheckStatus::Pass).count();
    let failed = r.checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
    let skipped = r.checks.iter().filter(|c| c.status == CheckStatus::Skipped).count();
    let total: f64 = outcome.wall_seconds.iter().sum();
    println!(
        "{}: {passed} passed, {failed} failed, {skipped} skipped in {total:.2}s",
        if r.pass { "ok" } else { "FAILED" }
    );
}

fn cmd_holonomy(input: &Path, loop_json: &str, steps: Option<u64>) -> ExitCode {
    let spec = match io::load_spec(input) {
        Ok(s) => s,
        Err(e) => return fail2(format!("{}: {e}", input.display())),
    };
    let compiled = match io::compile(&spec) {
        Ok(c) => c,
        Err(e) => return fail2(format!("{}: {e}", input.display())),
    };
    let Some(conn) = compiled.connection.as_ref() else {
        return fail2(format!(
            "{}: spec declares no connection to lift through",
            input.display()
        ));
    };
    let steps = steps.unwrap_or(spec.file.steps) as usize;
    if steps == 0 {
        return fail2("steps must be positive");
    }
    let lp: LoopSpec = match serde_json::from_str(loop_json) {
        Ok(l) => l,
        Err(e) => return fail2(format!("--loop is not a valid loop description: {e}")),
    };
    let compiled_loop = match io::compile_loop(&lp, &compiled.bundle, compiled.h_group.dim(), 0) {
        Ok(c) => c,
        Err(e) => return fail2(format!("--loop: {e}")),
    };
    let hol = match holonomy(conn, &compiled_loop.path, steps) {
        Ok(h) => h,
        Err(e) => return fail2(format!("holonomy failed: {e}")),
    };

    println!(
        "loop `{}` lifted with {steps} steps per segment",
        compiled_loop.name
    );
    println!("holonomy in {}:", compiled.h_group.name());
    print_matrix(hol.matrix());
    match hol.log() {
        Ok(log) => {
            let coords: Vec<String> = log.coords().iter().map(|v| format!("{v:+.12e}")).collect();
            println!("log coordinates: [{}]", coords.join(", "));
            if let Some(expected) = &compiled_loop.expect_log {
                let dev: f64 = log
                    .coords()
                    .iter()
                    .zip(expected)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                println!("deviation from declared expect_log: {dev:.3e}");
            }
        }
        Err(e) => println!("log coordinates unavailable: {e}"),
    }
    ExitCode::SUCCESS
}

fn print_matrix(m: &CMat) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| {
                let z = m[(r, c)];
                format!("{:+.9}{:+.9}i", z.re, z.im)
            })
            .collect();
        println!("  [ {} ]", row.join("  "));
    }
}

fn cmd_example(name: &str, out: Option<&Path>) -> ExitCode {
    let Some(text) = presets::named(name) else {
        let known: Vec<&str> = presets::all().iter().map(|(n, _)| *n).collect();
        return fail2(format!(
            "unknown example `{name}`; available: {}",
            known.join(", ")
        ));
    };
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                return fail2(format!("could not write {}: {e}", path.display()));
            }
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

fn cmd_list_checks() -> ExitCode {
    let defs = runner::registry();
    let width = defs.iter().map(|d| d.name.len()).max().unwrap_or(0);
    for def in defs {
        let needs: Vec<&str> = def.needs.iter().map(|b| b.label()).collect();
        let needs = if needs.is_empty() {
            "-".to_string()
        } else {
            needs.join(",")
        };
        println!(
            "{:<width$}  tol {:>7.0e}  needs {:<28}  {}",
            def.name, def.tolerance, needs, def.property
        );
    }
    ExitCode::SUCCESS
}
