use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use transonic_cli::{emit_plot_data, load_config, parse_grid, run, Mode, RunConfig, EXIT_INVARIANT};

/// Shock solver for expanding sector nozzles: background flows, free boundary
/// solves and exit pressure inversion.
#[derive(Parser, Debug)]
#[command(name = "transonic", version)]
struct Cli {
    /// What to run; falls back to `mode` in the config file.
    #[arg(value_enum)]
    mode: Option<Mode>,
    /// TOML or JSON run configuration; the standard geometry when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Grid size as NRxNT.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Number of cosine modes.
    #[arg(long)]
    modes: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRANSONIC_LOG", "warn")).init();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cli: &Cli) -> Result<i32, (i32, String)> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(|e| (e.exit_code(), e.to_string()))?,
        None => RunConfig::standard(),
    };
    if let Some((nr, nt)) = cli.grid {
        cfg.numerics.nr = nr;
        cfg.numerics.ntheta = nt;
        if cli.modes.is_none() {
            cfg.numerics.modes = cfg.numerics.modes.min(nt);
        }
    }
    if let Some(m) = cli.modes {
        cfg.numerics.modes = m;
    }
    if let Some(s) = cli.seed {
        cfg.numerics.seed = s;
    }
    cfg.validate().map_err(|e| (e.exit_code(), e.to_string()))?;
    let mode = cli
        .mode
        .or(cfg.mode)
        .ok_or((2, "no mode given on the command line or in the config".to_string()))?;
    cfg.mode = Some(mode);
    log::info!("running {} on a {}x{} grid", mode.label(), cfg.numerics.nr, cfg.numerics.ntheta);
    let out = run(&cfg, mode).map_err(|e| (e.exit_code(), e.to_string()))?;
    emit_plot_data(&out, &cli.out).map_err(|e| (e.exit_code(), e.to_string()))?;
    let report = &out.report;
    if !cli.quiet {
        for inv in &report.invariants {
            println!(
                "{} {} ({:e} {} {:e})",
                if inv.passed { "PASS" } else { "FAIL" },
                inv.name,
                inv.value,
                inv.relation,
                inv.limit
            );
        }
        println!("{} of {} invariants passed; output in {}", report.invariants.len() - report.failed, report.invariants.len(), cli.out.display());
    }
    Ok(if report.passed() { 0 } else { EXIT_INVARIANT })
}
