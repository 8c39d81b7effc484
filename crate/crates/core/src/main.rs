use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use calmedns::io::{load_config, run_experiment, write_outputs, Experiment, IoError};

/// Calmed stochastic Navier–Stokes experiments on the periodic box.
#[derive(Parser)]
#[command(name = "calmedns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config with dotted keys.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed (replaces `noise.seed` and `experiment.seeds`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and check the energy bound.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint header written by this config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pullback family of terminal states.
    Pullback(Common),
    /// Absorbing-ball experiment.
    Absorb(Common),
    /// Spectral-tail flattening analysis.
    Flatten(Common),
    /// Pullback Cauchy test.
    Cauchy(Common),
    /// Sample the calming-function axioms.
    VerifyCalming(Common),
    /// Check the forcing and calming assumptions and print the constants.
    Validate(Common),
}

fn fail(kind: &str, messages: Vec<String>, code: u8) -> ExitCode {
    let report = json!({ "error": kind, "messages": messages });
    eprintln!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
    ExitCode::from(code)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("CALMEDNS_THREADS") else { return Ok(()) };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("CALMEDNS_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return fail("config", vec![e], 2);
    }
    let (kind, common, resume) = match cli.command {
        Command::Simulate { common, resume } => (Experiment::Simulate, common, resume),
        Command::Pullback(c) => (Experiment::Pullback, c, None),
        Command::Absorb(c) => (Experiment::Absorb, c, None),
        Command::Flatten(c) => (Experiment::Flatten, c, None),
        Command::Cauchy(c) => (Experiment::Cauchy, c, None),
        Command::VerifyCalming(c) => (Experiment::VerifyCalming, c, None),
        Command::Validate(c) => (Experiment::Validate, c, None),
    };
    let mut cfg = match load_config(&common.config, Some(kind)) {
        Ok(c) => c,
        Err(IoError::Config(errs)) => {
            return fail("config", errs.0.iter().map(|i| format!("{}: {}", i.key, i.message)).collect(), 2)
        }
        Err(e) => return fail(e.kind(), vec![e.to_string()], 2),
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    let dir = common.out.unwrap_or_else(|| cfg.output_dir.clone());
    let out = match run_experiment(&cfg, resume.as_deref()) {
        Ok(o) => o,
        Err(e) => {
            let code = fail(e.kind(), vec![e.to_string()], 3);
            let report = json!({ "error": e.kind(), "messages": [e.to_string()], "config_hash": cfg.config_hash });
            let _ = std::fs::create_dir_all(&dir)
                .and_then(|_| std::fs::write(dir.join("failure.json"), report.to_string() + "\n"));
            return code;
        }
    };
    if let Err(e) = write_outputs(&dir, &out) {
        return fail(e.kind(), vec![e.to_string()], 3);
    }
    for m in &out.monitors {
        println!("{} {}", if m.passed { "PASS" } else { "FAIL" }, m.name);
    }
    println!("{} -> {}", cfg.experiment.kind, dir.display());
    if out.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
