//! Batch pipeline behind the `stopvest` binary: config parsing, solve,
//! verification, simulation, and the CSV/JSON writers.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{extract_curve, g_terminal, h_terminal, map_to_g, verify_theorems, FreeBoundaryCurve};
use crate::dual::{DualDomain, Obstacle};
use crate::error::Error;
use crate::model::{MarketParams, ProblemSpec, Regime, UtilityParams};
use crate::montecarlo::{simulate_value, trace_paths, MCConfig, MCEstimate};
use crate::primal::{legendre_round_trip, verify_constraint, PolicySurface};
use crate::solver::{build_grid, solve_dual_linear, solve_dual_vi, DualGrid, DualSolution, SolverConfig};
use crate::verify::{surface_checks, Check, SurfaceTolerances};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(Error),
    #[error("{0}")]
    Run(Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// 2 for anything caught before computing, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Parse(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Verify,
    Mc,
    All,
}

impl Mode {
    fn verifies(self) -> bool {
        matches!(self, Mode::Verify | Mode::All)
    }

    fn writes_surface(self) -> bool {
        !matches!(self, Mode::Mc)
    }

    fn simulates(self) -> bool {
        matches!(self, Mode::Mc | Mode::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub r: f64,
    pub mu: Vec<f64>,
    /// Covariance matrix. Give either this or `volatility`.
    #[serde(rename = "Sigma", default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Volatility rows; the covariance is their Gram matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volatility: Option<Vec<Vec<f64>>>,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl ProblemConfig {
    pub fn to_spec(&self) -> crate::Result<ProblemSpec<f64>> {
        let market = match (&self.sigma, &self.volatility) {
            (Some(s), None) => MarketParams::new(self.r, self.mu.clone(), s.clone())?,
            (None, Some(v)) => MarketParams::from_volatility(self.r, self.mu.clone(), v)?,
            _ => {
                return Err(Error::Config(
                    "give exactly one of `Sigma` and `volatility`".into(),
                ))
            }
        };
        ProblemSpec::new(market, UtilityParams::new(self.gamma, self.k)?, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "GridConfig::default_factor")]
    pub y_min_factor: f64,
    #[serde(rename = "M", default = "GridConfig::default_size")]
    pub m: usize,
    #[serde(rename = "N", default = "GridConfig::default_size")]
    pub n: usize,
}

impl GridConfig {
    fn default_factor() -> f64 {
        1e-3
    }

    fn default_size() -> usize {
        400
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            y_min_factor: Self::default_factor(),
            m: Self::default_size(),
            n: Self::default_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub theta: f64,
    pub rannacher_steps: usize,
    pub psor_omega: f64,
    pub psor_tol: f64,
    pub psor_max_iter: usize,
    /// Defaults to `max(1e-8, 10 * psor_tol)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contact_tol: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::<f64>::default();
        Self {
            theta: d.theta,
            rannacher_steps: d.rannacher_steps,
            psor_omega: d.psor_omega,
            psor_tol: d.psor_tol,
            psor_max_iter: d.psor_max_iter,
            contact_tol: None,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self) -> SolverConfig<f64> {
        SolverConfig {
            theta: self.theta,
            rannacher_steps: self.rannacher_steps,
            psor_omega: self.psor_omega,
            psor_tol: self.psor_tol,
            psor_max_iter: self.psor_max_iter,
            contact_tol: self
                .contact_tol
                .unwrap_or_else(|| crate::solver::default_contact_tol(self.psor_tol)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub x0: f64,
    pub t0: f64,
    /// Number of paths written to `mc_trace.csv`; 0 disables the trace.
    pub trace_paths: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        let d = MCConfig::default();
        Self {
            n_paths: d.n_paths,
            dt_sim: d.dt_sim,
            seed: d.seed,
            antithetic: d.antithetic,
            x0: 2.0,
            t0: 0.0,
            trace_paths: 0,
        }
    }
}

impl McSettings {
    pub fn to_config(&self) -> MCConfig {
        MCConfig {
            n_paths: self.n_paths,
            dt_sim: self.dt_sim,
            seed: self.seed,
            antithetic: self.antithetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default = "RunConfig::default_outputs")]
    pub outputs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

impl RunConfig {
    fn default_outputs() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Everything needed to run, validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ProblemSpec<f64>,
    pub regime: Regime,
    pub grid: DualGrid<f64>,
    pub solver: SolverConfig<f64>,
    pub mc: MCConfig,
}

pub fn prepare(config: &RunConfig, mode: Mode) -> Result<Prepared, CliError> {
    let inner = || -> crate::Result<Prepared> {
        let spec = config.problem.to_spec()?;
        let regime = spec.regime()?;
        let domain = DualDomain::new(&spec, config.grid.y_min_factor)?;
        let grid = build_grid(domain, config.grid.m, config.grid.n)?;
        let solver = config.solver.to_config();
        solver.validate()?;
        let mc = config.mc.to_config();
        if mode.simulates() {
            mc.validate(spec.horizon)?;
            let (x0, t0) = (config.mc.x0, config.mc.t0);
            if !(x0 >= 0.0 && x0.is_finite()) {
                return Err(Error::Config(format!("mc.x0 must be nonnegative, got {x0}")));
            }
            if !(t0 >= 0.0 && t0 < spec.horizon) {
                return Err(Error::Config(format!(
                    "mc.t0 must lie in [0, T), got {t0}"
                )));
            }
        }
        Ok(Prepared {
            spec,
            regime,
            grid,
            solver,
            mc,
        })
    };
    inner().map_err(CliError::Validation)
}

/// Result of a pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub notices: Vec<String>,
    pub files: Vec<PathBuf>,
    pub mc: Option<McRecord>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.mc.as_ref().is_none_or(|m| m.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRecord {
    pub x0: f64,
    pub t0: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub dt_sim: f64,
    pub pde_value: f64,
    pub abs_diff: f64,
    pub passed: bool,
}

impl McRecord {
    /// Passes iff `|mean - pde| <= 3 stderr + 1% pde`.
    pub fn new(x0: f64, t0: f64, est: &MCEstimate, dt_sim: f64, pde_value: f64) -> Self {
        let abs_diff = (est.mean - pde_value).abs();
        Self {
            x0,
            t0,
            mean: est.mean,
            stderr: est.stderr,
            n_paths: est.n_paths,
            dt_sim,
            pde_value,
            abs_diff,
            passed: abs_diff <= 3.0 * est.stderr + 0.01 * pde_value.abs(),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    passed: bool,
    checks: &'a [Check],
    config: &'a RunConfig,
}

/// Seventeen significant digits; signed zero is written as `0`.
fn num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> io::Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    fn text(&mut self, name: &str, body: &str) -> io::Result<()> {
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()
    }
}

pub fn write_surface_csv<W: Write>(w: &mut W, sol: &DualSolution<f64>) -> io::Result<()> {
    writeln!(w, "t,y,u,phi,contact")?;
    for (k, row) in sol.u.iter().enumerate() {
        let t = num(sol.grid.t[k]);
        for (j, &u) in row.iter().enumerate() {
            writeln!(
                w,
                "{t},{},{},{},{}",
                num(sol.grid.y[j]),
                num(u),
                num(sol.phi[j]),
                bit(sol.contact[k][j])
            )?;
        }
    }
    Ok(())
}

pub fn write_boundary_csv<W: Write>(w: &mut W, curve: &FreeBoundaryCurve<f64>, h_t: f64, g_t: f64) -> io::Result<()> {
    writeln!(w, "t,h,g,hT_closed_form,gT_closed_form")?;
    let (h_t, g_t) = (num(h_t), num(g_t));
    for k in 0..curve.h.len() {
        writeln!(
            w,
            "{},{},{},{h_t},{g_t}",
            num(curve.t[k]),
            num(curve.h[k]),
            num(curve.g[k])
        )?;
    }
    Ok(())
}

fn slices_header(n_assets: usize) -> String {
    let mut h = String::from("t,x,V");
    for i in 1..=n_assets {
        let _ = write!(h, ",pi_{i}");
    }
    h.push_str(",in_exercise");
    h
}

pub fn write_slices_csv<W: Write>(w: &mut W, surface: &PolicySurface<f64>) -> io::Result<()> {
    writeln!(w, "{}", slices_header(surface.kelly.len()))?;
    for s in &surface.slices {
        let t = num(s.t);
        for i in 0..s.len() {
            write!(w, "{t},{},{}", num(s.x[i]), num(s.value[i]))?;
            for p in &s.pi[i] {
                write!(w, ",{}", num(*p))?;
            }
            writeln!(w, ",{}", bit(s.in_exercise[i]))?;
        }
    }
    Ok(())
}

/// Closed-form slices when stopping at once is optimal: `V = U(x + K)` at the
/// wealth images of the dual nodes, no investment.
fn write_stop_slices_csv<W: Write>(w: &mut W, prep: &Prepared) -> io::Result<()> {
    let u = &prep.spec.utility;
    let ob = Obstacle::new(u);
    writeln!(w, "{}", slices_header(prep.spec.market.dimension()))?;
    let zeros = vec![num(0.0); prep.spec.market.dimension()].join(",");
    for &t in &prep.grid.t {
        let t = num(t);
        for &y in prep.grid.y.iter().rev() {
            let x = (ob.wealth_shift(y) - u.k).max(0.0);
            writeln!(w, "{t},{},{},{zeros},1", num(x), num(u.stop_reward(x)))?;
        }
    }
    Ok(())
}

fn write_stop_surface_csv<W: Write>(w: &mut W, prep: &Prepared) -> io::Result<()> {
    let ob = Obstacle::new(&prep.spec.utility);
    let m = prep.grid.m();
    let corner = crate::dual::dual_boundary_value(&prep.spec.utility);
    writeln!(w, "t,y,u,phi,contact")?;
    for &t in &prep.grid.t {
        let t = num(t);
        for (j, &y) in prep.grid.y.iter().enumerate() {
            let phi = if j == m { corner } else { ob.value(y) };
            writeln!(w, "{t},{},{},{},1", num(y), num(phi), num(phi))?;
        }
    }
    Ok(())
}

fn write_trace_csv<W: Write>(w: &mut W, rows: &[crate::montecarlo::TraceRow]) -> io::Result<()> {
    writeln!(w, "path_id,step,t,X,pi_norm,stopped")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.path_id,
            r.step,
            num(r.t),
            num(r.x),
            num(r.pi_norm),
            bit(r.stopped)
        )?;
    }
    Ok(())
}

/// Checks of a solved surface, its boundary (if any) and the primal
/// certificates.
pub fn verification_checks(
    sol: &DualSolution<f64>,
    curve: Option<&FreeBoundaryCurve<f64>>,
    surface: &PolicySurface<f64>,
) -> crate::Result<Vec<Check>> {
    let mut checks = surface_checks(sol, &SurfaceTolerances::default());
    if let Some(curve) = curve {
        let report = verify_theorems(curve, &sol.spec, &sol.grid)?;
        checks.extend(report.checks().into_iter().cloned());
        checks.push(g_terminal_check(curve, sol)?);
    }

    let n = sol.grid.n();
    let tol = 1e-6;
    let (mut res, mut gap, mut contact) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    let (mut res_at, mut gap_at) = (0, 0);
    let mut legendre = (0.0f64, 0);
    for (k, slice) in surface.slices[..n].iter().enumerate() {
        let cert = verify_constraint(&sol.spec.utility, slice, tol);
        if !cert.undefined.is_empty() {
            res = f64::NEG_INFINITY;
            res_at = k;
        }
        if cert.min_residual < res {
            (res, res_at) = (cert.min_residual, k);
        }
        if cert.min_gap < gap {
            (gap, gap_at) = (cert.min_gap, k);
        }
        contact = contact.max(cert.max_contact_residual).max(cert.max_contact_gap);
        let (e, _) = legendre_round_trip(slice, 1)?;
        if e > legendre.0 {
            legendre = (e, k);
        }
    }
    checks.push(Check::at_least("dual_constraint", res, -tol).located(Some(res_at)));
    checks.push(Check::at_least("marginal_bound", gap, -tol).located(Some(gap_at)));
    checks.push(Check::at_most("contact_identities", contact, tol));
    checks.push(Check::at_most("legendre_round_trip", legendre.0, 1e-3).located(Some(legendre.1)));
    Ok(checks)
}

/// `|g(t_{N-1}) - g(T)|` against two dual cells around `h(T)` mapped to
/// wealth.
pub fn g_terminal_check(curve: &FreeBoundaryCurve<f64>, sol: &DualSolution<f64>) -> crate::Result<Check> {
    let h_t = h_terminal(&sol.spec)?;
    let g_t = g_terminal(&sol.spec)?;
    let grid = &sol.grid;
    let j = grid.locate_y(h_t);
    let cell = grid.y[j + 1] - grid.y[j];
    let lo = (h_t - 2.0 * cell).max(grid.y[0]);
    let hi = (h_t + 2.0 * cell).min(grid.domain.y0);
    let mapped = map_to_g(&[lo, hi], &sol.spec.utility)?;
    let tol = (mapped[0] - g_t).max(g_t - mapped[1]);
    let last = *curve.g.last().ok_or_else(|| Error::Inconsistent("empty boundary".into()))?;
    Ok(Check::at_most("g_terminal_limit", (last - g_t).abs(), tol).located(Some(curve.g.len() - 1)))
}

/// Runs `mode` and writes its artifacts into `out_dir`.
pub fn run(config: &RunConfig, mode: Mode, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let prep = prepare(config, mode)?;
    fs::create_dir_all(out_dir)?;
    let mut out = Out {
        dir: out_dir,
        files: Vec::new(),
    };
    let mut outcome = RunOutcome {
        checks: Vec::new(),
        notices: Vec::new(),
        files: Vec::new(),
        mc: None,
    };

    match prep.regime {
        Regime::StopImmediately => run_stop_immediately(config, mode, &prep, &mut out, &mut outcome)?,
        Regime::NeverStop | Regime::FreeBoundary => run_solved(config, mode, &prep, &mut out, &mut outcome)?,
    }

    if !outcome.notices.is_empty() {
        let mut body = outcome.notices.join("\n");
        body.push('\n');
        out.text("notice.txt", &body)?;
    }
    if mode.verifies() {
        let report = Report {
            passed: outcome.passed(),
            checks: &outcome.checks,
            config,
        };
        let mut body = serde_json::to_string_pretty(&report)?;
        body.push('\n');
        out.text("report.json", &body)?;
    }
    outcome.files = out.files;
    Ok(outcome)
}

fn write_mc(out: &mut Out<'_>, record: &McRecord) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(record)?;
    body.push('\n');
    out.text("mc.json", &body)?;
    Ok(())
}

fn run_stop_immediately(
    config: &RunConfig,
    mode: Mode,
    prep: &Prepared,
    out: &mut Out<'_>,
    outcome: &mut RunOutcome,
) -> Result<(), CliError> {
    outcome.notices.push(format!(
        "regime {}: stopping at once is optimal, V(x, t) = (x + K)^gamma / gamma; no free boundary",
        Regime::StopImmediately.name()
    ));
    if mode.writes_surface() {
        let mut w = out.create("surface.csv")?;
        write_stop_surface_csv(&mut w, prep)?;
        w.flush()?;
        let mut w = out.create("slices.csv")?;
        write_stop_slices_csv(&mut w, prep)?;
        w.flush()?;
    }
    if mode.simulates() {
        let (x0, t0) = (config.mc.x0, config.mc.t0);
        let v = prep.spec.utility.stop_reward(x0);
        let est = MCEstimate {
            mean: v,
            stderr: 0.0,
            n_paths: prep.mc.n_paths,
            n_stopped_early: prep.mc.n_paths,
            mean_tau: t0,
            started_in_exercise: true,
        };
        let record = McRecord::new(x0, t0, &est, prep.mc.dt_sim, v);
        write_mc(out, &record)?;
        outcome.mc = Some(record);
    }
    Ok(())
}

fn run_solved(
    config: &RunConfig,
    mode: Mode,
    prep: &Prepared,
    out: &mut Out<'_>,
    outcome: &mut RunOutcome,
) -> Result<(), CliError> {
    let (sol, curve) = match prep.regime {
        Regime::FreeBoundary => {
            let sol = solve_dual_vi(&prep.spec, &prep.grid, &prep.solver).map_err(CliError::Run)?;
            let curve = extract_curve(&sol).map_err(CliError::Run)?;
            (sol, Some(curve))
        }
        _ => {
            outcome.notices.push(format!(
                "regime {}: no free boundary; investing until the horizon is optimal",
                Regime::NeverStop.name()
            ));
            let sol = solve_dual_linear(&prep.spec, &prep.grid, &prep.solver).map_err(CliError::Run)?;
            (sol, None)
        }
    };
    let surface = PolicySurface::assemble(&sol, curve.as_ref()).map_err(CliError::Run)?;

    if mode.writes_surface() {
        let mut w = out.create("surface.csv")?;
        write_surface_csv(&mut w, &sol)?;
        w.flush()?;
        if let Some(curve) = &curve {
            let h_t = h_terminal(&prep.spec).map_err(CliError::Run)?;
            let g_t = g_terminal(&prep.spec).map_err(CliError::Run)?;
            let mut w = out.create("boundary.csv")?;
            write_boundary_csv(&mut w, curve, h_t, g_t)?;
            w.flush()?;
        }
        let mut w = out.create("slices.csv")?;
        write_slices_csv(&mut w, &surface)?;
        w.flush()?;
    }

    if mode.verifies() {
        outcome.checks = verification_checks(&sol, curve.as_ref(), &surface).map_err(CliError::Run)?;
    }

    if mode.simulates() {
        let (x0, t0) = (config.mc.x0, config.mc.t0);
        let pde = surface.value_at(x0, t0).map_err(CliError::Run)?;
        let est = simulate_value(&surface, x0, t0, &prep.spec, &prep.mc).map_err(CliError::Run)?;
        let record = McRecord::new(x0, t0, &est, prep.mc.dt_sim, pde);
        write_mc(out, &record)?;
        if config.mc.trace_paths > 0 {
            let rows = trace_paths(&surface, x0, t0, &prep.spec, &prep.mc, config.mc.trace_paths)
                .map_err(CliError::Run)?;
            let mut w = out.create("mc_trace.csv")?;
            write_trace_csv(&mut w, &rows)?;
            w.flush()?;
        }
        if mode.verifies() {
            outcome.checks.push(Check::at_most(
                "mc_cross_validation",
                record.abs_diff,
                3.0 * record.stderr + 0.01 * record.pde_value.abs(),
            ));
        }
        outcome.mc = Some(record);
    }
    Ok(())
}
