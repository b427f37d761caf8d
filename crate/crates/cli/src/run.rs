//! Pipeline orchestration per mode.

use crate::config::{Mode, RunConfig, TargetConfig};
use crate::report::{sci, ExitProfiles, RunReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;
use transonic::elliptic_fbp::*;
use transonic::gas::*;
use transonic::inversion::*;
use transonic::jump::*;
use transonic::radial::*;
use transonic::transport::*;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("stage {stage} failed: {source}")]
    Pipeline { stage: &'static str, source: transonic::Error },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// Distinct nonzero exit code per failure kind.
    pub fn exit_code(&self) -> i32 {
        use transonic::Error as E;
        match self {
            RunError::Usage(_) => 2,
            RunError::Io { .. } => 5,
            RunError::Pipeline { source, .. } => match source {
                E::Cavitation { .. } => 10,
                E::SonicSingularity { .. } => 11,
                E::NotSupersonic { .. } => 12,
                E::PressureOutOfRange { .. } => 13,
                E::NoRoot(_) => 14,
                E::Domain(_) => 15,
                E::DegenerateShock => 16,
                E::EllipticityLoss { .. } => 17,
                E::Obliqueness { .. } => 18,
                E::SolverDivergence(_) => 19,
                E::TrustRegion { .. } => 20,
                E::FrontEscape { .. } => 21,
                E::NoConvergence { .. } => 22,
                E::NearSingular { .. } => 23,
                E::ModeSolve(_) => 24,
                E::RadialFloor { .. } => 25,
                E::StepFailure(_) => 26,
            },
        }
    }
}

type Res<T> = std::result::Result<T, RunError>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Res<T>;
}

impl<T> Stage<T> for transonic::Result<T> {
    fn stage(self, stage: &'static str) -> Res<T> {
        self.map_err(|source| RunError::Pipeline { stage, source })
    }
}

/// Report plus the CSV files to write next to it, and wall-clock stage timings.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub files: BTreeMap<&'static str, String>,
    pub timing: BTreeMap<String, f64>,
}

struct Setup {
    gas: GasModel,
    noz: NozzleRadial,
    inflow: FlowState,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Res<Self> {
        let inflow = cfg.inflow_state();
        let gas = GasModel::from_state(cfg.gas.gamma, &inflow).stage("setup")?;
        let noz = NozzleRadial::new(cfg.nozzle.r0, cfg.nozzle.r1, cfg.nozzle.n).stage("setup")?;
        Ok(Self { gas, noz, inflow })
    }

    fn background(&self, r_s: f64) -> Res<RadialSolution> {
        background_solution(&self.gas, &self.noz, &self.inflow, r_s).stage("background_solution")
    }
}

struct Timer {
    start: Instant,
    laps: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self { start: Instant::now(), laps: BTreeMap::new() }
    }

    fn lap(&mut self, name: &str) {
        self.laps.insert(name.to_string(), self.start.elapsed().as_secs_f64());
    }
}

pub fn run(cfg: &RunConfig, mode: Mode) -> Res<RunOutput> {
    let mut out = RunOutput { report: RunReport::new(mode.label(), cfg.clone()), files: BTreeMap::new(), timing: BTreeMap::new() };
    let mut timer = Timer::new();
    match mode {
        Mode::Background => run_background(cfg, &mut out)?,
        Mode::LocateShock => run_locate(cfg, &mut out)?,
        Mode::Solve => run_solve(cfg, &mut out, &mut timer)?,
        Mode::Sweep => run_sweep(cfg, &mut out, &mut timer)?,
        Mode::Check => run_check(cfg, &mut out, &mut timer)?,
        Mode::DemoIsentropic => run_isentropic(cfg, &mut out)?,
    }
    timer.lap("total");
    out.timing = timer.laps;
    Ok(out)
}

/// Writes `report.json`, the CSV files and `timing.json` into `dir`.
pub fn emit_plot_data(out: &RunOutput, dir: &Path) -> Res<()> {
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| RunError::Io { path: path.display().to_string(), source })
    };
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.display().to_string(), source })?;
    write("report.json", &out.report.to_json())?;
    for (name, text) in &out.files {
        write(name, text)?;
    }
    write("timing.json", &crate::report::to_json(&out.timing))
}

fn background_checks(sol: &RadialSolution, report: &mut RunReport) {
    let gas = &sol.gas;
    let j = &sol.jump;
    let (m, mo, e) = rh_residuals(gas, &j.upstream, &j.downstream, j.normal_speed_up, j.normal_speed_down);
    let up = j.upstream;
    let rel = (m / (up.rho * up.u)).abs().max((mo / (up.rho * up.u * up.u + up.p)).abs()).max((e / gas.b0()).abs());
    report.at_most("rh_residual", rel, 1e-12);
    report.holds("downstream_subsonic", downstream_is_subsonic(gas, j));
    report.holds("entropy_increase", entropy_measure(gas, &j.downstream) > entropy_measure(gas, &up));
    let (sup, sub) = (&sol.supersonic, &sol.subsonic);
    report.holds(
        "supersonic_branch_monotone",
        sup.u.windows(2).all(|w| w[1] > w[0]) && sup.p.windows(2).all(|w| w[1] < w[0]),
    );
    report.holds(
        "subsonic_branch_monotone",
        sub.u.windows(2).all(|w| w[1] < w[0]) && sub.p.windows(2).all(|w| w[1] > w[0]),
    );
    report.at_most("bernoulli_drift", sup.bernoulli_drift().max(sub.bernoulli_drift()), 1e-9);
    report.at_most("mass_flux_drift", sup.mass_flux_drift().max(sub.mass_flux_drift()), 1e-9);
    report.above("mu0", mu0(sol), 0.0);
    report.below("shock_pressure_slope_gap", shock_pressure_slope_gap(sol), 0.0);
}

fn background_values(sol: &RadialSolution, report: &mut RunReport) {
    report.value("r_s", sol.r_s);
    report.value("exit_pressure", sol.exit_pressure());
    report.value("mu0", mu0(sol));
    report.value("shock_pressure_slope_gap", shock_pressure_slope_gap(sol));
    report.value("k0", sol.gas.k0());
    report.value("b0", sol.gas.b0());
    report.value("u_minus_at_shock", sol.jump.upstream.u);
    report.value("u_plus_at_shock", sol.jump.downstream.u);
    report.value("entropy_minus", entropy_measure(&sol.gas, &sol.jump.upstream));
    report.value("entropy_plus", entropy_measure(&sol.gas, &sol.jump.downstream));
}

fn run_background(cfg: &RunConfig, out: &mut RunOutput) -> Res<()> {
    let s = Setup::new(cfg)?;
    let r_s = match cfg.r_s {
        Some(r) => r,
        None => locate_from_target(cfg, &s)?,
    };
    let sol = s.background(r_s)?;
    let (p_min, p_max) = pressure_bounds(&s.gas, &s.noz, &s.inflow).stage("pressure_bounds")?;
    out.report.value("p_min", p_min);
    out.report.value("p_max", p_max);
    background_values(&sol, &mut out.report);
    background_checks(&sol, &mut out.report);
    out.files.insert("branches.csv", sol.branches_csv());
    Ok(())
}

fn target_mean(cfg: &RunConfig) -> Res<f64> {
    match &cfg.target {
        Some(TargetConfig::Constant { p_c }) | Some(TargetConfig::Cosine { p_c, .. }) => Ok(*p_c),
        Some(TargetConfig::Sampled { samples }) => Ok(samples.iter().sum::<f64>() / samples.len() as f64),
        None => Err(RunError::Usage("this mode needs either `r_s` or a `target`".into())),
    }
}

fn locate_from_target(cfg: &RunConfig, s: &Setup) -> Res<f64> {
    let p_c = target_mean(cfg)?;
    locate_shock(&s.gas, &s.noz, &s.inflow, p_c, cfg.numerics.tol_r).stage("locate_shock")
}

fn run_locate(cfg: &RunConfig, out: &mut RunOutput) -> Res<()> {
    let s = Setup::new(cfg)?;
    let p_c = target_mean(cfg)?;
    let (p_min, p_max) = pressure_bounds(&s.gas, &s.noz, &s.inflow).stage("pressure_bounds")?;
    let r_s = locate_from_target(cfg, &s)?;
    let p = exit_pressure(&s.gas, &s.noz, &s.inflow, r_s).stage("exit_pressure")?;
    let sol = s.background(r_s)?;
    out.report.value("p_c", p_c);
    out.report.value("p_min", p_min);
    out.report.value("p_max", p_max);
    background_values(&sol, &mut out.report);
    // bisection bracket times the local slope bounds the forward residual
    let slope = (exit_pressure(&s.gas, &s.noz, &s.inflow, r_s - 1e-4).stage("exit_pressure")?
        - exit_pressure(&s.gas, &s.noz, &s.inflow, r_s + 1e-4).stage("exit_pressure")?)
        / 2e-4;
    out.report.at_most("forward_residual", (p - p_c).abs(), 2.0 * slope.abs() * cfg.numerics.tol_r + 1e-14 * p_c);
    out.report.stage("locate_shock", (p - p_c).abs());
    out.files.insert("branches.csv", sol.branches_csv());
    Ok(())
}

/// Linear resampling of `samples` (uniform on `[-h, h]`) at `theta`.
fn resample(samples: &[f64], h: f64, theta: f64) -> f64 {
    let n = samples.len() - 1;
    let y = ((theta + h) / (2.0 * h) * n as f64).clamp(0.0, n as f64);
    let j = (y.floor() as usize).min(n - 1);
    let t = y - j as f64;
    (1.0 - t) * samples[j] + t * samples[j + 1]
}

struct Problem {
    sol: RadialSolution,
    pipe: Pipeline,
    modes: ModeSystem,
    target: ExitProfile,
}

/// Background, grid, perturbation and target, with amplitudes scaled by `factor`.
fn problem(cfg: &RunConfig, s: &Setup, factor: f64) -> Res<Problem> {
    let r_s = match cfg.r_s {
        Some(r) => r,
        None => locate_from_target(cfg, s)?,
    };
    let sol = s.background(r_s)?;
    let h = cfg.theta_half();
    let n = &cfg.numerics;
    let grid = SectorGrid::new(&sol, n.nr, n.ntheta, h).stage("grid")?;
    let psi = match cfg.perturbation.psi {
        PsiMap::Identity => PsiMap::Identity,
        PsiMap::RadialStretch { amplitude, mode } => PsiMap::RadialStretch { amplitude: factor * amplitude, mode },
    };
    let up = cfg.perturbation.upstream;
    let a = factor * up.amplitude;
    let upstream = UpstreamPerturbation { phi_amplitude: a, p_amplitude: a, mode: up.mode };
    let vc = PerturbationData::background(&sol, &grid).v_ex;
    let base = PerturbationData::new(&sol, &grid, psi, upstream, vc).stage("perturbation")?;
    let p_c = sol.exit_pressure();
    let thetas = grid.thetas();
    let raw: Vec<f64> = match &cfg.target {
        None => vec![p_c; thetas.len()],
        Some(TargetConfig::Constant { p_c }) => vec![*p_c; thetas.len()],
        Some(TargetConfig::Cosine { p_c, amplitude, mode }) => {
            thetas.iter().map(|&t| p_c * (1.0 + amplitude * cosine_mode(*mode, h, t).0)).collect()
        }
        Some(TargetConfig::Sampled { samples }) => thetas.iter().map(|&t| resample(samples, h, t)).collect(),
    };
    let target = ExitProfile::new(raw.iter().map(|v| p_c + factor * (v - p_c)).collect(), h);
    let dev = target.samples.iter().map(|v| (v / p_c - 1.0).abs()).fold(0.0, f64::max);
    if dev > n.sigma {
        return Err(RunError::Pipeline {
            stage: "invert_p",
            source: transonic::Error::Domain(format!(
                "target deviates from p_c by {dev:e} (relative), above sigma = {:e}",
                n.sigma
            )),
        });
    }
    let modes = ModeSystem::new(&sol, h, n.modes).stage("mode_system")?;
    let pipe = Pipeline { sol: sol.clone(), grid, base, fbp: n.fbp, transport: n.transport };
    Ok(Problem { sol, pipe, modes, target })
}

struct Solved {
    inv: Inversion,
    field: CharField,
    e_init: Vec<f64>,
    p: Field2D,
    front_dev: f64,
    p_dev: f64,
}

fn solve_problem(pb: &Problem, newton: &NewtonOptions) -> Res<Solved> {
    let vc = pb.pipe.v_critical();
    let inv = invert_p(&pb.pipe, &pb.modes, &pb.target, &vc, newton).stage("invert_p")?;
    let (field, _e, p) = pb.pipe.fields(&inv.v_ex, &inv.forward.fbp).stage("transport")?;
    let data = pb.pipe.base.with_exit_flux(inv.v_ex.clone());
    let e_init = shock_e_init(&pb.sol, &pb.pipe.grid, &inv.forward.fbp, &data).stage("transport")?;
    let grid = &pb.pipe.grid;
    let front = inv.forward.fbp.front();
    let mut p_dev: f64 = 0.0;
    for i in 0..=grid.nr {
        for j in 0..=grid.ntheta {
            p_dev = p_dev.max((p.get(i, j) - pb.sol.p_plus(grid.radius_at(front, i, j))).abs());
        }
    }
    let front_dev = front.max_offset(pb.sol.r_s);
    Ok(Solved { inv, field, e_init, p, front_dev, p_dev })
}

fn residuals_csv(fbp: &FbpSolution, newton: &[f64]) -> String {
    let mut s = String::from("stage,iteration,residual,step\n");
    for r in &fbp.history {
        let _ = writeln!(s, "solve_fbp,{},{},{}", r.iteration, sci(r.residuals.max()), sci(r.step_psi));
    }
    for (k, v) in newton.iter().enumerate() {
        let _ = writeln!(s, "invert_p,{k},{},{}", sci(*v), sci(0.0));
    }
    s
}

fn exit_csv(p: &ExitProfiles) -> String {
    let mut s = String::from("theta,v_ex,p_ex,target\n");
    for k in 0..p.theta.len() {
        let _ = writeln!(s, "{},{},{},{}", sci(p.theta[k]), sci(p.v_ex[k]), sci(p.p_ex[k]), sci(p.target[k]));
    }
    s
}

fn solve_checks(cfg: &RunConfig, pb: &Problem, sv: &Solved, report: &mut RunReport) {
    let n = &cfg.numerics;
    let fw = &sv.inv.forward;
    let gas = &pb.sol.gas;
    report.at_most("newton_residual", *sv.inv.history.last().unwrap(), n.newton.tol_newton);
    report.at_most("newton_iterations", sv.inv.iterations() as f64, n.newton.max_newton as f64);
    report.at_most("fbp_residual", fw.fbp.residuals.max(), n.fbp.tol_outer);
    report.at_most("trace_step_halving", fw.trace_error, 1e-8);
    report.at_least("radial_speed_floor", sv.field.radial_speed_min, sv.field.omega0);
    report.above("map_slope_min", sv.field.map_slope_min, 0.0);
    report.at_least("mode_multiplier_floor", pb.modes.min_abs_multiplier(), pb.modes.kernel_floor);
    let data = pb.pipe.base.with_exit_flux(sv.inv.v_ex.clone());
    let entropy_ok = (0..=pb.pipe.grid.ntheta).all(|j| {
        upstream_at_shock(&pb.sol, &pb.pipe.grid, &fw.fbp, &data, j)
            .map(|up| entropy_from_e(gas, sv.e_init[j]) > up.p / up.rho.powf(gas.gamma()))
            .unwrap_or(false)
    });
    report.holds("entropy_increase", entropy_ok);
    report.holds("pressure_finite", sv.p.is_finite());
}

fn run_solve(cfg: &RunConfig, out: &mut RunOutput, timer: &mut Timer) -> Res<()> {
    let s = Setup::new(cfg)?;
    let pb = problem(cfg, &s, 1.0)?;
    timer.lap("setup");
    let sv = solve_problem(&pb, &cfg.numerics.newton)?;
    timer.lap("solve");
    let fw = &sv.inv.forward;
    let r = &mut out.report;
    background_values(&pb.sol, r);
    r.value("front_deviation", sv.front_dev);
    r.value("pressure_deviation", sv.p_dev);
    r.value("newton_iterations", sv.inv.iterations() as f64);
    r.value("wall_slip", sv.field.wall_slip);
    r.value("map_slope_min", sv.field.map_slope_min);
    r.value("perturbation_size", pb.pipe.base.size());
    r.stage("solve_fbp", fw.fbp.residuals.max());
    r.stage("invert_p", *sv.inv.history.last().unwrap());
    r.stage("transport", fw.trace_error);
    solve_checks(cfg, &pb, &sv, r);
    let profiles = ExitProfiles {
        theta: pb.pipe.grid.thetas(),
        v_ex: sv.inv.v_ex.clone(),
        p_ex: fw.p_ex.samples.clone(),
        target: pb.target.samples.clone(),
    };
    r.front = Some(fw.fbp.front().f.clone());
    out.files.insert("branches.csv", pb.sol.branches_csv());
    out.files.insert("front.csv", fw.fbp.front().to_csv());
    out.files.insert("exit_profiles.csv", exit_csv(&profiles));
    out.files.insert("residuals.csv", residuals_csv(&fw.fbp, &sv.inv.history));
    out.files.insert("modes.csv", pb.modes.to_csv());
    let grid = &pb.pipe.grid;
    let front = fw.fbp.front().clone();
    out.files.insert("pressure.csv", sv.p.to_csv(grid, |i, j| grid.radius_at(&front, i, j)));
    r.exit_profiles = Some(profiles);
    Ok(())
}

fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn run_sweep(cfg: &RunConfig, out: &mut RunOutput, timer: &mut Timer) -> Res<()> {
    let s = Setup::new(cfg)?;
    let mut csv = String::from("factor,perturbation_size,front_deviation,pressure_deviation,newton_iterations\n");
    let (mut fronts, mut pressures) = (Vec::new(), Vec::new());
    let factors = &cfg.sweep.factors;
    for &f in factors {
        let pb = problem(cfg, &s, f)?;
        let sv = solve_problem(&pb, &cfg.numerics.newton)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            sci(f),
            sci(pb.pipe.base.size()),
            sci(sv.front_dev),
            sci(sv.p_dev),
            sv.inv.iterations()
        );
        out.report.stage("invert_p", *sv.inv.history.last().unwrap());
        fronts.push(sv.front_dev);
        pressures.push(sv.p_dev);
        timer.lap(&format!("factor {f}"));
    }
    if factors.len() >= 2 && fronts.iter().chain(&pressures).all(|v| *v > 0.0) {
        let sf = log_slope(factors, &fronts);
        let sp = log_slope(factors, &pressures);
        out.report.value("front_slope", sf);
        out.report.value("pressure_slope", sp);
        out.report.at_most("front_slope_linear", (sf - 1.0).abs(), 0.15);
        out.report.at_most("pressure_slope_linear", (sp - 1.0).abs(), 0.15);
    } else {
        out.report.holds("sweep_nondegenerate", false);
    }
    out.files.insert("sweep.csv", csv);
    Ok(())
}

fn run_check(cfg: &RunConfig, out: &mut RunOutput, timer: &mut Timer) -> Res<()> {
    let s = Setup::new(cfg)?;
    let r = &mut out.report;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.numerics.seed);

    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..1000 {
        let g = s.gas.gamma();
        let rho = rng.gen_range(0.2..5.0);
        let p = rng.gen_range(0.2..5.0);
        let c = (g * p / rho as f64).sqrt();
        let up = FlowState { rho, u: c * rng.gen_range(1.05..4.0), p };
        let gas = GasModel::from_state(g, &up).stage("check")?;
        let j = rh_jump_radial(&gas, &up).stage("rh_jump_radial")?;
        let (m, mo, e) = rh_residuals(&gas, &up, &j.downstream, j.normal_speed_up, j.normal_speed_down);
        worst = worst.max((m / (up.rho * up.u)).abs().max((mo / (up.rho * up.u * up.u + up.p)).abs()).max((e / gas.b0()).abs()));
        ok &= downstream_is_subsonic(&gas, &j) && entropy_measure(&gas, &j.downstream) > entropy_measure(&gas, &up);
    }
    r.at_most("rh_random_residual", worst, 1e-12);
    r.holds("rh_random_admissible", ok);
    timer.lap("rh");

    let (r0, r1) = (s.noz.r0, s.noz.r1);
    let off = 1e-3 * (r1 - r0);
    let ps: Vec<f64> = (0..50)
        .map(|k| exit_pressure(&s.gas, &s.noz, &s.inflow, r0 + off + (r1 - r0 - 2.0 * off) * k as f64 / 49.0))
        .collect::<transonic::Result<_>>()
        .stage("exit_pressure")?;
    r.holds("exit_pressure_decreasing", ps.windows(2).all(|w| w[1] < w[0]));
    let mut trip: f64 = 0.0;
    for _ in 0..10 {
        let rs = rng.gen_range(r0 + 0.05 * (r1 - r0)..r1 - 0.05 * (r1 - r0));
        let p = exit_pressure(&s.gas, &s.noz, &s.inflow, rs).stage("exit_pressure")?;
        let back = locate_shock(&s.gas, &s.noz, &s.inflow, p, cfg.numerics.tol_r).stage("locate_shock")?;
        trip = trip.max((back - rs).abs());
    }
    r.at_most("locate_shock_round_trip", trip, 1e-8);
    timer.lap("background");

    let r_s = match cfg.r_s {
        Some(x) => x,
        None => locate_from_target(cfg, &s)?,
    };
    let zero = RunConfig { r_s: Some(r_s), target: None, perturbation: Default::default(), ..cfg.clone() };
    let pb = problem(&zero, &s, 1.0)?;
    background_checks(&pb.sol, r);
    let rs = pb.sol.r_s;
    let h = 1e-4;
    let q = |x: f64| pb.sol.gas.k0() / pb.sol.u_minus(x) - pb.sol.u_plus(x);
    let fd = (q(rs + h) - q(rs - h)) / (2.0 * h) / (pb.sol.u_minus(rs) - pb.sol.u_plus(rs));
    r.at_most("mu0_closed_form", (mu0(&pb.sol) - fd).abs() / fd.abs(), 1e-6);
    let gap = |x: f64| pb.sol.p_s0(x) - pb.sol.p_plus(x);
    let fd = (gap(rs + h) - gap(rs - h)) / (2.0 * h);
    r.at_most("slope_gap_closed_form", (shock_pressure_slope_gap(&pb.sol) - fd).abs() / fd.abs(), 1e-5);

    let grid = &pb.pipe.grid;
    let fbp = solve_fbp(&pb.sol, grid, &pb.pipe.base, &cfg.numerics.fbp).stage("solve_fbp")?;
    let (_, _, p) = pb.pipe.fields(&pb.pipe.base.v_ex, &fbp).stage("transport")?;
    let mut dp: f64 = 0.0;
    for i in 0..=grid.nr {
        for j in 0..=grid.ntheta {
            dp = dp.max((p.get(i, j) - pb.sol.p_plus(grid.radius_at(fbp.front(), i, j))).abs());
        }
    }
    r.at_most("zero_perturbation_psi", fbp.psi().max_abs(), 1e-10);
    r.at_most("zero_perturbation_front", fbp.front().max_offset(rs), 1e-10);
    r.at_most("zero_perturbation_pressure", dp, 1e-9);
    r.stage("solve_fbp", fbp.residuals.max());
    timer.lap("zero_perturbation");

    let vc = pb.pipe.v_critical();
    let p0 = forward_p(&pb.pipe, &vc).stage("forward_p")?;
    let w: Vec<f64> = grid.thetas().iter().map(|&t| vc[0] * cosine_mode(1, grid.theta_half, t).0).collect();
    let wp = ExitProfile::new(w.clone(), grid.theta_half);
    let d2 = dvp_apply_2d(&pb.sol, grid, &pb.modes, &wp).stage("dvp_apply_2d")?;
    let eps = [1e-2, 1e-3, 1e-4, 1e-5];
    let mut errs = Vec::new();
    for &e in &eps {
        let v: Vec<f64> = vc.iter().zip(&w).map(|(a, b)| a + e * b).collect();
        let pe = forward_p(&pb.pipe, &v).stage("forward_p")?;
        errs.push(
            pe.samples
                .iter()
                .zip(&p0.samples)
                .zip(&d2.samples)
                .map(|((a, b), d)| ((a - b) / e - d).abs())
                .fold(0.0, f64::max),
        );
    }
    r.at_least("frechet_slope", log_slope(&eps, &errs), 0.9);
    r.at_least("mode_multiplier_floor", pb.modes.min_abs_multiplier(), pb.modes.kernel_floor);
    let modal = dvp_apply(&pb.modes, &wp);
    r.value(
        "discrete_vs_modal_derivative",
        modal.samples.iter().zip(&d2.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / modal.max_abs(),
    );
    timer.lap("derivative");

    // transport oracles on the configured perturbation
    let pert = problem(&RunConfig { r_s: Some(r_s), target: None, ..cfg.clone() }, &s, 1.0)?;
    let fbp = solve_fbp(&pert.sol, &pert.pipe.grid, &pert.pipe.base, &cfg.numerics.fbp).stage("solve_fbp")?;
    let field = build_char_field(&pert.sol, &pert.pipe.grid, &fbp, &pert.pipe.base, &cfg.numerics.transport)
        .stage("build_char_field")?;
    let e0 = shock_e_init(&pert.sol, &pert.pipe.grid, &fbp, &pert.pipe.base).stage("transport")?;
    let lag = transport_e(&field, &e0).stage("transport_e")?;
    let eul = eulerian_upwind(&field, &e0, 4);
    let gap = lag.values.iter().zip(&eul.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.at_most("eulerian_gap", gap / pert.sol.e0_plus(), 5e-3);
    let th = pert.pipe.grid.theta_half;
    let mut ratio: f64 = 1.0;
    for _ in 0..100 {
        let x = rng.gen_range(pert.sol.r_s..pert.pipe.grid.r1);
        let t = rng.gen_range(-th..th);
        let c = trace_characteristic(&field, x, t).stage("trace_characteristic")?;
        ratio = ratio.max(c.wall_distance_ratio(th));
    }
    r.at_most("wall_distance_constant", ratio, 10.0);
    timer.lap("transport");
    Ok(())
}

fn run_isentropic(cfg: &RunConfig, out: &mut RunOutput) -> Res<()> {
    let s = Setup::new(cfg)?;
    let g = s.gas.gamma();
    // stagnation density 1
    let iso = GasModel::new(g, 1.0 / (g - 1.0)).stage("setup")?;
    let qs = isentropic_sonic_speed(&iso);
    let n = s.noz.n as i32;
    let choke = s.noz.r0.powi(n - 1) * isentropic_density(&iso, qs * qs).stage("setup")? * qs;
    let flux = 0.5 * choke;
    let (r0, r1) = (s.noz.r0, s.noz.r1);
    let mut csv = String::from("r_s,isentropic_exit_speed,isentropic_exit_pressure,exit_pressure\n");
    let mut speeds = Vec::new();
    let mut pressures = Vec::new();
    for k in 0..=12 {
        let rs = r0 + (0.2 + 0.6 * k as f64 / 12.0) * (r1 - r0);
        let (q, p_iso) = isentropic_radial_family(&iso, &s.noz, flux, rs).stage("isentropic_radial_family")?;
        let p = exit_pressure(&s.gas, &s.noz, &s.inflow, rs).stage("exit_pressure")?;
        let _ = writeln!(csv, "{},{},{},{}", sci(rs), sci(q), sci(p_iso), sci(p));
        speeds.push(q);
        pressures.push(p);
    }
    let spread = |v: &[f64]| v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) - v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let pmax = pressures.iter().fold(0.0f64, |m, x| m.max(*x));
    out.report.value("isentropic_flux", flux);
    out.report.at_most("isentropic_exit_speed_spread", spread(&speeds), 1e-12);
    out.report.at_least("exit_pressure_variation", spread(&pressures) / pmax, 0.01);
    out.files.insert("isentropic.csv", csv);
    Ok(())
}
