use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use transonic_cli::*;

const MINIMAL: &str = r#"
mode = "background"
r_s = 1.5

[gas]
gamma = 1.4

[nozzle]
r0 = 1.0
r1 = 2.0
n = 2
theta = 0.5235987755982988

[inflow]
rho = 1.0
u = 2.0
p = 1.0
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn small_solve() -> RunConfig {
    let mut cfg = RunConfig::standard();
    cfg.target = Some(config::TargetConfig::Cosine { p_c: 2.78674003424642, amplitude: 1e-3, mode: 1 });
    cfg.perturbation.upstream = config::UpstreamConfig { amplitude: 1e-3, mode: 2 };
    cfg.numerics.nr = 24;
    cfg.numerics.ntheta = 12;
    cfg.numerics.modes = 12;
    cfg
}

fn transonic() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transonic"))
}

#[test]
fn minimal_config_loads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(&write(dir.path(), "run.toml", MINIMAL)).unwrap();
    assert_eq!(cfg.mode, Some(Mode::Background));
    assert_eq!(cfg.nozzle.n, 2);
    assert_eq!(cfg.r_s, Some(1.5));
    assert!((cfg.theta_half() - std::f64::consts::PI / 12.0).abs() < 1e-15);

    let json = serde_json::to_string(&cfg).unwrap();
    let back = load_config(&write(dir.path(), "run.json", &json)).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn subsonic_inflow_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("u = 2.0", "u = 0.5");
    match load_config(&write(dir.path(), "run.toml", &text)) {
        Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "inflow.u"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn negative_tolerance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[numerics.newton]\ntol_newton = -1e-9\n");
    let err = load_config(&write(dir.path(), "run.toml", &text)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(matches!(err, ConfigError::Validation { ref field, .. } if field == "numerics.newton.tol_newton"));
}

#[test]
fn unknown_keys_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("gamma = 1.4", "gamma = 1.4\ngama = 1.3");
    let err = load_config(&write(dir.path(), "run.toml", &text)).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }), "{err:?}");
    assert_eq!(err.exit_code(), EXIT_PARSE);
}

#[test]
fn out_of_range_shock_is_rejected() {
    let mut cfg = RunConfig::standard();
    cfg.r_s = Some(2.5);
    assert!(matches!(cfg.validate(), Err(ConfigError::Validation { ref field, .. }) if field == "r_s"));
}

#[test]
fn background_writes_branches_and_report() {
    let cfg = RunConfig::standard();
    let out = run(&cfg, Mode::Background).unwrap();
    assert!(out.report.passed());
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&out, dir.path()).unwrap();
    assert!(dir.path().join("branches.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], report::SCHEMA);
    assert_eq!(report["mode"], "background");
}

#[test]
fn solve_writes_profiles_and_is_deterministic() {
    let cfg = small_solve();
    let a = run(&cfg, Mode::Solve).unwrap();
    let b = run(&cfg, Mode::Solve).unwrap();
    for name in ["branches.csv", "front.csv", "exit_profiles.csv", "residuals.csv", "modes.csv"] {
        assert!(a.files.contains_key(name), "missing {name}");
    }
    assert!(a.report.passed(), "{:?}", a.report.invariants);
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.files, b.files);
}

#[test]
fn oversized_target_is_refused() {
    let mut cfg = small_solve();
    cfg.target = Some(config::TargetConfig::Cosine { p_c: 2.78674003424642, amplitude: 0.2, mode: 1 });
    let err = run(&cfg, Mode::Solve).unwrap_err();
    assert!(matches!(err, RunError::Pipeline { stage: "invert_p", .. }), "{err}");
}

#[test]
fn check_mode_passes_with_zero_perturbation() {
    let mut cfg = RunConfig::standard();
    cfg.numerics.nr = 32;
    cfg.numerics.ntheta = 16;
    cfg.numerics.modes = 16;
    let out = run(&cfg, Mode::Check).unwrap();
    let failed: Vec<_> = out.report.invariants.iter().filter(|i| !i.passed).collect();
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn invariant_names_are_unique() {
    for mode in [Mode::Background, Mode::DemoIsentropic] {
        let out = run(&RunConfig::standard(), mode).unwrap();
        let names: HashSet<_> = out.report.invariants.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names.len(), out.report.invariants.len());
    }
}

#[test]
fn exit_codes_are_distinct() {
    use transonic::Error as E;
    let pipeline = |source| RunError::Pipeline { stage: "x", source };
    let errors = vec![
        RunError::Usage(String::new()),
        RunError::Io { path: String::new(), source: std::io::Error::other("x") },
        pipeline(E::Domain(String::new())),
        pipeline(E::DegenerateShock),
        pipeline(E::NoRoot(String::new())),
        pipeline(E::SolverDivergence(String::new())),
        pipeline(E::ModeSolve(String::new())),
        pipeline(E::StepFailure(String::new())),
    ];
    let mut codes: Vec<i32> = errors.iter().map(RunError::exit_code).collect();
    codes.extend([EXIT_INVARIANT, EXIT_PARSE, EXIT_VALIDATION]);
    let unique: HashSet<_> = codes.iter().collect();
    assert_eq!(unique.len(), codes.len(), "{codes:?}");
    assert!(codes.iter().all(|&c| c != 0));
}

#[test]
fn grid_parsing() {
    assert_eq!(parse_grid("64x32"), Ok((64, 32)));
    assert_eq!(parse_grid("16X8"), Ok((16, 8)));
    assert!(parse_grid("64").is_err());
    assert!(parse_grid("ax8").is_err());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = transonic().arg("--quiet").arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let cfg = write(dir.path(), "run.toml", MINIMAL);
    let out = dir.path().join("out");
    let status = transonic().args(["--quiet", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("report.json").exists());

    let bad = write(dir.path(), "bad.toml", &MINIMAL.replace("u = 2.0", "u = 0.5"));
    let status = transonic().args(["--quiet", "--config"]).arg(&bad).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_VALIDATION));

    let status = transonic().args(["background", "--quiet", "--grid", "8x4", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_VALIDATION));
}
