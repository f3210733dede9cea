//! Command-line entry point: run configured studies, materialize presets,
//! and execute kernel self-tests.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 runtime
//! failure (partial artifacts are left on disk).

use clap::{Parser, Subcommand};
use sers::harness::{preset, run_study, ConvergenceReport, StudyConfig, StudyError, PRESET_NAMES};
use sers::selftest::{run_suite, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sers", version, about = "Strong-convergence studies for semilinear SPDEs with exponential integrators")]
struct Cli {
    /// Worker threads (overrides the config value; 0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed (overrides the config value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config value).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a key-value config file.
    Run { config: PathBuf },
    /// Materialize a built-in study to a config file and run it.
    Preset {
        /// One of: example1, example2, example1_full, example2_full, micro.
        name: String,
    },
    /// Run a kernel verification suite (krylov | noise | ou | assembly).
    Selftest { suite: String },
    /// Print the version string.
    Version,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn apply_overrides(cfg: &mut StudyConfig, cli: &Cli) {
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
}

fn dispatch(cli: Cli) -> Result<(), u8> {
    match &cli.command {
        Command::Version => {
            println!("sers {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Run { config } => {
            let text = std::fs::read_to_string(config).map_err(|e| {
                eprintln!("error: cannot read config {}: {e}", config.display());
                EXIT_CONFIG
            })?;
            let mut cfg = StudyConfig::parse(&text).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_CONFIG
            })?;
            apply_overrides(&mut cfg, &cli);
            execute(&cfg)
        }
        Command::Preset { name } => {
            let mut cfg = preset(name).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_CONFIG
            })?;
            apply_overrides(&mut cfg, &cli);
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
                eprintln!("error: cannot create {}: {e}", cfg.out_dir.display());
                EXIT_RUNTIME
            })?;
            let cfg_path = cfg.out_dir.join(format!("{name}.cfg"));
            std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| {
                eprintln!("error: cannot write {}: {e}", cfg_path.display());
                EXIT_RUNTIME
            })?;
            println!("config written to {}", cfg_path.display());
            if name.ends_with("_full") {
                eprintln!("note: {name} matches the production grids and runs for minutes to hours");
            }
            execute(&cfg)
        }
        Command::Selftest { suite } => {
            let suite: Suite = suite.parse().map_err(|e| {
                eprintln!("error: {e}");
                EXIT_CONFIG
            })?;
            let checks = run_suite(suite);
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                eprintln!("selftest {suite}: {} of {} checks failed",
                    checks.iter().filter(|c| !c.passed).count(), checks.len());
                Err(EXIT_RUNTIME)
            }
        }
    }
}

fn execute(cfg: &StudyConfig) -> Result<(), u8> {
    cfg.validate().map_err(|e| {
        eprintln!("error: {e}");
        eprintln!("available presets: {}", PRESET_NAMES.join(", "));
        EXIT_CONFIG
    })?;
    let report = run_study(cfg).map_err(|e| {
        let code = match &e {
            StudyError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        eprintln!("error: {e}");
        code
    })?;
    print_summary(&report, cfg);
    Ok(())
}

fn print_summary(report: &ConvergenceReport, cfg: &StudyConfig) {
    println!("study complete; artifacts in {}", cfg.out_dir.display());
    for row in &report.rows {
        let rms = row
            .rms_error
            .map(|v| format!("{v:.6e}"))
            .unwrap_or_else(|| "all samples failed".into());
        println!(
            "  {:13} dt={:<12} rms={rms} ({} ok, {} failed)",
            row.scheme,
            format!("{}", row.dt),
            row.n_samples,
            row.n_failures
        );
    }
    for fit in &report.fits {
        match fit.slope {
            Some(s) => println!(
                "  {:13} observed order {:.4} over {} stable step size(s)",
                fit.scheme,
                s,
                fit.stable_dts.len()
            ),
            None => println!("  {:13} no order fitted", fit.scheme),
        }
        for f in &fit.flags {
            println!("                note: {f}");
        }
    }
}
