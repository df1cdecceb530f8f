use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qbm::scenario::{load_config, parse_engines, run_scenario, validate_config};

/// Run a damped-oscillator scenario and compare its engines.
#[derive(Parser, Debug)]
#[command(name = "qbm-run", version)]
struct Args {
    /// Scenario TOML file.
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ensemble seed (overrides `integrator.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated engines, e.g. `gaussian,fock,fp`.
    #[arg(long)]
    engines: Option<String>,
    /// Run engines concurrently.
    #[arg(long)]
    parallel: bool,
    /// Check the configuration and exit.
    #[arg(long)]
    validate_only: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn run(args: Args) -> qbm::Result<bool> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.integrator.seed = seed;
    }
    if let Some(list) = &args.engines {
        cfg.engines.run = parse_engines(list)?;
    }
    cfg.engines.parallel |= args.parallel;

    let v = validate_config(&cfg);
    for d in &v.diagnostics {
        eprintln!("{d}");
    }
    if args.validate_only || !v.is_ok() {
        return Ok(v.is_ok());
    }

    let summary = run_scenario(&cfg, args.out.as_deref())?;
    for e in &summary.engines {
        let m = e.final_moments;
        println!(
            "{:<14} {:>9.3} s  <x>={:.6} <p>={:.6} sxx={:.6} sxp={:.6} spp={:.6}",
            e.engine.name(),
            e.runtime_s,
            m[0],
            m[1],
            m[2],
            m[3],
            m[4]
        );
    }
    for c in &summary.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} = {:e} (limit {:e})", c.name, c.value, c.limit);
    }
    for e in &summary.errors {
        eprintln!("error [{}]: {}", e.timestamp, e.message);
    }
    Ok(summary.ok)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
