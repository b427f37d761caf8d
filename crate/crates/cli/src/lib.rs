//! Configuration loading, run orchestration and output for the `transonic` binary.

pub mod config;
pub mod report;
pub mod run;

pub use config::{load_config, ConfigError, Mode, RunConfig};
pub use report::RunReport;
pub use run::{emit_plot_data, run, RunError, RunOutput};

/// Exit code when every stage succeeded but some invariant failed.
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Io { .. } | ConfigError::Parse { .. } => EXIT_PARSE,
            ConfigError::Validation { .. } => EXIT_VALIDATION,
        }
    }
}

/// Parses `NRxNT`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NRxNT, got {s:?}"))?;
    let nr = a.trim().parse().map_err(|_| format!("bad radial size {a:?}"))?;
    let nt = b.trim().parse().map_err(|_| format!("bad angular size {b:?}"))?;
    Ok((nr, nt))
}
