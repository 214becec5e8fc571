use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rfspin::runner::{self, Mode, RunConfig};

/// Verification suites, constants tables and disorder ensembles for the
/// continuous-spin random field model.
#[derive(Parser, Debug)]
#[command(name = "rfspin", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// verify, simulate, constants or extract; overrides the config.
    #[arg(long)]
    mode: Option<String>,
    /// Base seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config, then $RFSPIN_OUT, then ./rfspin-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance override NAME=VALUE; repeatable.
    #[arg(long = "tolerance", value_name = "K=V")]
    tolerances: Vec<String>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let mode: Option<Mode> = match &cli.mode {
        Some(m) => Some(m.parse().map_err(|e: rfspin::Error| e.to_string())?),
        None => None,
    };
    let mut config = match (&cli.config, mode) {
        (Some(path), _) => RunConfig::load(path).map_err(|e| e.to_string())?,
        (None, Some(m)) => RunConfig::for_mode(m),
        (None, None) => return Err("either --config or --mode is required".into()),
    };
    if let Some(m) = mode {
        config.mode = m;
    }
    if let Some(s) = cli.seed {
        config.seeds.base = s;
    }
    for t in &cli.tolerances {
        let (k, v) = t.split_once('=').ok_or_else(|| format!("--tolerance expects K=V, got `{t}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("--tolerance {k}: `{v}` is not a number"))?;
        config.tolerances.insert(k.trim().to_string(), v);
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = runner::resolve_output(cli.out.as_deref(), &config);
    match runner::run(&config, &out) {
        Ok(record) => {
            for c in &record.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for (k, v) in &record.summary {
                println!("{k} = {v}");
            }
            println!("run {} -> {}", record.run_id, out.display());
            if record.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, rfspin::Error::Config(_)) { 2 } else { 1 })
        }
    }
}
