//! Run configuration and the experiment drivers behind the CLI: single
//! solves, alpha sweeps and the mesh-refinement study.
//!
//! Drivers write into an output directory. Every CSV starts with a comment
//! line `# mvheat-<kind> v<version>` naming its schema, followed by a header
//! row; each data row carries its scheme. Output is a pure function of the
//! configuration (no timestamps, fixed iteration order).

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DataError, RunError, SolveError};
use crate::fem::{DiscreteSystem, Scheme, SymTridiag};
use crate::grid::{ControlRegion, SpaceTimeGrid};
use crate::newton::{critical_bounds, newton_solve, unconstrained_adjoint, Bounds, IterationRecord, PredualIterate, SolverConfig};
use crate::oracle::{manufactured_desired_state, sample_fourier_dirac, DesiredState, PointSource, DEFAULT_TERMS};
use crate::recovery::{
    alpha_zero_control, duality_gap, measure_norm, recover_control, solve_state, support_from_adjoint, tracking_error, Atom, InitialAtom,
    MeasureControl,
};
use crate::sparse::CsrMatrix;

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// How the time step follows the mesh size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    #[serde(rename = "tau=h/2")]
    HalfH,
    #[serde(rename = "tau=h^2/2")]
    HalfHSquared,
    #[serde(rename = "explicit")]
    Explicit,
}

impl Coupling {
    pub fn label(self) -> &'static str {
        match self {
            Coupling::HalfH => "tau=h/2",
            Coupling::HalfHSquared => "tau=h^2/2",
            Coupling::Explicit => "explicit",
        }
    }

    /// Step size for mesh size `h`, if the coupling fixes one.
    pub fn tau(self, h: f64) -> Option<f64> {
        match self {
            Coupling::HalfH => Some(0.5 * h),
            Coupling::HalfHSquared => Some(0.5 * h * h),
            Coupling::Explicit => None,
        }
    }
}

fn default_a() -> f64 {
    0.0
}
fn default_b() -> f64 {
    1.0
}
fn default_t() -> f64 {
    1.5
}
fn default_coupling() -> Coupling {
    Coupling::Explicit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(rename = "T", default = "default_t")]
    pub t_end: f64,
    #[serde(rename = "Nh")]
    pub n_h: usize,
    #[serde(rename = "Ntau", default, skip_serializing_if = "Option::is_none")]
    pub n_tau: Option<usize>,
    #[serde(default = "default_coupling")]
    pub coupling: Coupling,
    /// Explicit time points; only with `coupling = "explicit"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_points: Option<Vec<f64>>,
    pub control_region: ControlRegion,
}

/// Number of equal steps of size `tau` covering `(0, t_end)`.
fn steps_for(t_end: f64, tau: f64) -> Result<usize, ConfigError> {
    let n = (t_end / tau).round();
    if n < 1.0 || ((n * tau - t_end) / t_end).abs() > 1e-9 {
        return Err(ConfigError::Invalid(format!("T = {t_end} is not a multiple of tau = {tau}")));
    }
    Ok(n as usize)
}

impl GridConfig {
    pub fn build(&self) -> Result<SpaceTimeGrid, ConfigError> {
        let grid = match self.coupling {
            Coupling::Explicit => match (&self.time_points, self.n_tau) {
                (Some(_), Some(_)) => return Err(ConfigError::Invalid("give either time_points or Ntau, not both".into())),
                (Some(tp), None) => SpaceTimeGrid::new(self.a, self.b, self.n_h, tp)?,
                (None, Some(nt)) => SpaceTimeGrid::equidistant(self.a, self.b, self.t_end, self.n_h, nt)?,
                (None, None) => return Err(ConfigError::Invalid("explicit coupling needs Ntau or time_points".into())),
            },
            c => {
                if self.time_points.is_some() {
                    return Err(ConfigError::Invalid(format!("time_points conflict with coupling {}", c.label())));
                }
                if !(self.b > self.a) {
                    return Err(crate::error::GridError::BadInterval { a: self.a, b: self.b }.into());
                }
                let h = (self.b - self.a) / (self.n_h + 1) as f64;
                let nt = steps_for(self.t_end, c.tau(h).expect("coupled"))?;
                if let Some(given) = self.n_tau {
                    if given != nt {
                        return Err(ConfigError::Invalid(format!("Ntau = {given} contradicts {} (needs {nt})", c.label())));
                    }
                }
                SpaceTimeGrid::equidistant(self.a, self.b, self.t_end, self.n_h, nt)?
            }
        };
        if (grid.t_end - self.t_end).abs() > 1e-12 * self.t_end.abs().max(1.0) {
            return Err(ConfigError::Invalid(format!("time points end at {} but T = {}", grid.t_end, self.t_end)));
        }
        self.control_region.validate(&grid)?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Vd,
    Dg,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeChoice::Vd => vec![Scheme::Vd],
            SchemeChoice::Dg => vec![Scheme::Dg],
            SchemeChoice::Both => vec![Scheme::Vd, Scheme::Dg],
        }
    }
}

impl std::str::FromStr for SchemeChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vd" => Ok(SchemeChoice::Vd),
            "dg" => Ok(SchemeChoice::Dg),
            "both" => Ok(SchemeChoice::Both),
            _ => Err(format!("unknown scheme '{s}' (expected vd, dg or both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaKeyword {
    #[serde(rename = "disabled")]
    Disabled,
}

/// `beta = "disabled"` fixes the initial control to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    Keyword(BetaKeyword),
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Keyword(BetaKeyword::Disabled)
    }
}

impl BetaSpec {
    pub fn value(self) -> Option<f64> {
        match self {
            BetaSpec::Value(b) => Some(b),
            BetaSpec::Keyword(_) => None,
        }
    }
}

fn default_half() -> f64 {
    0.5
}
fn default_weight() -> f64 {
    1.0
}
fn default_terms() -> usize {
    DEFAULT_TERMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Heat state of a point source, sampled on the dual time grid.
    FourierDirac {
        #[serde(default = "default_half")]
        x0: f64,
        #[serde(default = "default_half")]
        t0: f64,
        #[serde(default = "default_weight")]
        weight: f64,
        #[serde(default = "default_terms")]
        n_terms: usize,
    },
    /// Point-source state shifted so that the manufactured adjoint with
    /// peak `abar` is optimal at `alpha = abar`.
    Manufactured {
        abar: f64,
        #[serde(default = "default_half")]
        x0: f64,
        #[serde(default = "default_half")]
        t0: f64,
        #[serde(default = "default_weight")]
        weight: f64,
        #[serde(default = "default_terms")]
        n_terms: usize,
    },
    /// A desired-state CSV in the format written by `--dump-ydensity`.
    File { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::FourierDirac { x0: 0.5, t0: 0.5, weight: 1.0, n_terms: DEFAULT_TERMS }
    }
}

impl DataSource {
    fn point_source(&self) -> Option<(PointSource, usize)> {
        match *self {
            DataSource::FourierDirac { x0, t0, weight, n_terms } | DataSource::Manufactured { x0, t0, weight, n_terms, .. } => {
                Some((PointSource { x0, t0, weight }, n_terms))
            }
            DataSource::File { .. } => None,
        }
    }
}

fn default_points() -> usize {
    40
}
fn default_alpha_min() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    /// Start of the sweep; defaults to the critical `alpha` of each scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    /// Explicit descending list; overrides the log-spaced grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { points: default_points(), alpha_min: default_alpha_min(), alpha_max: None, alphas: None }
    }
}

fn default_levels() -> Vec<usize> {
    vec![8, 16, 32, 64, 128]
}
fn default_couplings() -> Vec<Coupling> {
    vec![Coupling::HalfH, Coupling::HalfHSquared]
}
fn default_abar() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Mesh levels as `1/h` on the unit interval.
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_couplings")]
    pub couplings: Vec<Coupling>,
    #[serde(default = "default_abar")]
    pub abar: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { levels: default_levels(), couplings: default_couplings(), abar: default_abar() }
    }
}

fn default_q() -> f64 {
    4.0 / 3.0
}
fn default_scheme() -> SchemeChoice {
    SchemeChoice::Both
}
fn default_recovery_tol() -> f64 {
    1e-8
}
fn default_support_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeChoice,
    /// Cost of the distributed control; required by `solve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: BetaSpec,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    /// Off-index recovery residual allowed, relative to `1 + |r|_inf`.
    #[serde(default = "default_recovery_tol")]
    pub recovery_tol: f64,
    /// Support threshold relative to `alpha` for the adjoint-based prediction.
    #[serde(default = "default_support_tol")]
    pub support_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.build()?;
        // d = 1: q in (1, min(2, 1 + 2/d)]
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(ConfigError::Invalid(DataError::Exponent(self.q).to_string()));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(ConfigError::Invalid(format!("alpha must be nonnegative, got {a}")));
            }
        }
        if let Some(b) = self.beta.value() {
            if !(b > 0.0 && b.is_finite()) {
                return Err(ConfigError::Invalid(format!("beta must be positive or \"disabled\", got {b}")));
            }
        }
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.recovery_tol > 0.0 && self.support_tol > 0.0) {
            return Err(ConfigError::Invalid("recovery_tol and support_tol must be positive".into()));
        }
        match &self.data {
            DataSource::File { .. } => {}
            d => {
                let (src, n) = d.point_source().expect("analytic source");
                if self.grid.a != 0.0 || self.grid.b != 1.0 {
                    return Err(ConfigError::Invalid("analytic data are defined on (0, 1) only".into()));
                }
                if n == 0 || !(src.x0 > 0.0 && src.x0 < 1.0) || !src.weight.is_finite() {
                    return Err(ConfigError::Invalid("point source needs x0 in (0, 1), finite weight, n_terms >= 1".into()));
                }
                if let DataSource::Manufactured { abar, .. } = d {
                    if !(*abar > 0.0) {
                        return Err(ConfigError::Invalid("manufactured data need abar > 0".into()));
                    }
                }
            }
        }
        let s = &self.sweep;
        if let Some(list) = &s.alphas {
            if list.is_empty() || list.windows(2).any(|w| !(w[0] > w[1])) || list.iter().any(|&a| !(a > 0.0)) {
                return Err(ConfigError::Invalid("sweep.alphas must be positive and strictly descending".into()));
            }
        } else if s.points < 2 || !(s.alpha_min > 0.0) || s.alpha_max.is_some_and(|m| !(m > s.alpha_min)) {
            return Err(ConfigError::Invalid("sweep needs points >= 2 and 0 < alpha_min < alpha_max".into()));
        }
        let c = &self.convergence;
        if c.levels.is_empty() || c.levels.iter().any(|&l| l < 2) || c.couplings.contains(&Coupling::Explicit) {
            return Err(ConfigError::Invalid("convergence needs levels >= 2 and couplings tau=h/2 or tau=h^2/2".into()));
        }
        if !(c.abar > 0.0) {
            return Err(ConfigError::Invalid("convergence.abar must be positive".into()));
        }
        Ok(())
    }

    pub fn bounds(&self, alpha: f64) -> Bounds {
        Bounds { alpha, beta: self.beta.value() }
    }
}

/// The desired state of `data` on `grid`.
pub fn desired_state(data: &DataSource, grid: &SpaceTimeGrid, q: f64) -> Result<DesiredState, RunError> {
    let p = q / (q - 1.0);
    Ok(match data {
        DataSource::FourierDirac { x0, t0, weight, n_terms } => {
            sample_fourier_dirac(grid, &PointSource { x0: *x0, t0: *t0, weight: *weight }, *n_terms)?
        }
        DataSource::Manufactured { abar, x0, t0, weight, n_terms } => {
            manufactured_desired_state(grid, *abar, &PointSource { x0: *x0, t0: *t0, weight: *weight }, *n_terms, p)?
        }
        DataSource::File { path } => read_desired_state(path, grid)?,
    })
}

#[derive(Debug, Deserialize)]
struct YdRow {
    j: usize,
    k: usize,
    value: f64,
}

/// Reads a desired-state CSV (`j, k, x, t, value`, 1-based `j` and `k`).
pub fn read_desired_state(path: &Path, grid: &SpaceTimeGrid) -> Result<DesiredState, RunError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut yd = DesiredState::zeros(grid);
    let mut seen = vec![false; yd.values.len()];
    for row in rdr.deserialize() {
        let r: YdRow = row?;
        if r.j == 0 || r.j > grid.n_h() || r.k == 0 || r.k > grid.n_tau() {
            return Err(RunError::Config(ConfigError::Invalid(format!("desired state entry (j={}, k={}) outside the grid", r.j, r.k))));
        }
        let i = (r.k - 1) * grid.n_h() + r.j - 1;
        yd.values[i] = r.value;
        seen[i] = true;
    }
    let got = seen.iter().filter(|&&s| s).count();
    if got != seen.len() {
        return Err(DataError::Dimension { expected: seen.len(), got }.into());
    }
    if let Some(i) = yd.values.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite { j: i % grid.n_h() + 1, k: i / grid.n_h() + 1 }.into());
    }
    Ok(yd)
}

/// Per-run scalars written as `report_<scheme>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub scheme: Scheme,
    pub n_h: usize,
    pub n_tau: usize,
    pub h: f64,
    pub tau_max: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: Option<f64>,
    /// `alpha = 0`: control read off `Lt y_d`, no Newton iterations.
    pub closed_form: bool,
    /// Smallest `alpha` with zero optimal control.
    pub alpha_critical: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub measure_norm: f64,
    pub tracking_error: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    /// Atoms with nonzero mass.
    pub support: Vec<Atom>,
    pub initial_support: Vec<InitialAtom>,
    /// Grid points where the adjoint touches `-alpha` / `+alpha`.
    pub predicted_positive: usize,
    pub predicted_negative: usize,
    /// How DG interval densities map to Dirac atoms in `support`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirac_view: Option<String>,
}

pub struct SolveOutcome {
    pub sys: DiscreteSystem,
    pub yd: DesiredState,
    pub iterate: PredualIterate,
    pub log: Vec<IterationRecord>,
    pub control: MeasureControl,
    pub state: Vec<f64>,
    pub report: RunReport,
}

/// Mass below which a recovered coefficient counts as zero.
fn atom_threshold(control: &MeasureControl) -> f64 {
    let max =
        control.atoms.iter().map(|a| a.coefficient.abs()).chain(control.initial.iter().map(|a| a.coefficient.abs())).fold(0.0f64, f64::max);
    1e-7 * (1.0 + max)
}

/// Assembles, solves and recovers one run. `warm` replaces the default
/// initial iterate (zero, or the unconstrained adjoint when it is already
/// feasible).
pub fn solve_one(
    cfg: &RunConfig,
    sys: DiscreteSystem,
    yd: DesiredState,
    alpha: f64,
    warm: Option<&PredualIterate>,
) -> Result<SolveOutcome, RunError> {
    let bounds = cfg.bounds(alpha);
    let q = sys.q();
    let (alpha_critical, beta_critical) = critical_bounds(&sys, &yd)?;
    let with_initial = bounds.beta.is_some();

    let (iterate, log, control, closed_form) = if alpha == 0.0 {
        let it = PredualIterate::zeros(&sys, &bounds);
        let u = alpha_zero_control(&sys, &yd, with_initial);
        (it, Vec::new(), u, true)
    } else {
        let start = match warm {
            Some(w) => Some(w.clone()),
            None if alpha >= alpha_critical && bounds.beta.is_none_or(|b| b >= beta_critical) => {
                let mut it = PredualIterate::zeros(&sys, &bounds);
                it.w = unconstrained_adjoint(&sys, &yd)?;
                Some(it)
            }
            None => None,
        };
        let (it, log) = newton_solve(&sys, &yd, &bounds, &cfg.solver, start.as_ref())?;
        let u = recover_control(&sys, &yd, &it.w, with_initial, cfg.recovery_tol)?;
        (it, log, u, false)
    };

    let state = solve_state(&sys, &control);
    let (j, k, gap) = duality_gap(&sys, &yd, &control, &iterate.w, &bounds)?;
    let thr = atom_threshold(&control);
    let support: Vec<Atom> = control.support(thr);
    let initial_support = control.initial.iter().copied().filter(|a| a.coefficient.abs() > thr).collect();
    let pred = support_from_adjoint(&sys, &iterate.w, &bounds, cfg.support_tol * alpha);
    let grid = &sys.grid;
    let report = RunReport {
        schema: format!("mvheat-report v{CSV_SCHEMA_VERSION}"),
        scheme: sys.scheme,
        n_h: grid.n_h(),
        n_tau: grid.n_tau(),
        h: grid.h,
        tau_max: grid.tau.iter().copied().fold(0.0, f64::max),
        q,
        alpha,
        beta: bounds.beta,
        closed_form,
        alpha_critical,
        iterations: log.len().saturating_sub(1),
        final_residual: log.last().map_or(0.0, |r| r.residual),
        measure_norm: measure_norm(&control),
        tracking_error: tracking_error(&sys, &state, &yd.values, q),
        primal_objective: j,
        dual_objective: k,
        duality_gap: gap,
        support,
        initial_support,
        predicted_positive: pred.positive.len(),
        predicted_negative: pred.negative.len(),
        dirac_view: (sys.scheme == Scheme::Dg)
            .then(|| "interval densities shown as Dirac atoms at the right interval endpoint t_k".to_string()),
    };
    Ok(SolveOutcome { sys, yd, iterate, log, control, state, report })
}

/// Grid, system and data for one scheme of a configuration.
pub fn setup(cfg: &RunConfig, scheme: Scheme) -> Result<(DiscreteSystem, DesiredState), RunError> {
    let grid = cfg.grid.build()?;
    let sys = DiscreteSystem::assemble(scheme, &grid, &cfg.grid.control_region, cfg.q)?;
    let yd = desired_state(&cfg.data, &grid, cfg.q)?;
    Ok((sys, yd))
}

/// Extra artifacts of `solve`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOutputs {
    pub iteration_log: bool,
    pub matrices: bool,
    pub desired_state: bool,
}

fn csv_writer(path: &Path, kind: &str) -> Result<csv::Writer<File>, RunError> {
    let mut f = File::create(path)?;
    writeln!(f, "# mvheat-{kind} v{CSV_SCHEMA_VERSION}")?;
    Ok(csv::Writer::from_writer(f))
}

/// `solve`: one run per scheme.
pub fn cmd_solve(cfg: &RunConfig, schemes: &[Scheme], out: &Path, extra: SolveOutputs) -> Result<Vec<RunReport>, RunError> {
    let alpha = cfg.alpha.ok_or_else(|| ConfigError::Invalid("solve needs alpha".into()))?;
    fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    for &scheme in schemes {
        let (sys, yd) = setup(cfg, scheme)?;
        if extra.matrices {
            write_matrices(out, &sys)?;
        }
        if extra.desired_state && reports.is_empty() {
            write_desired_state(&out.join("desired_state.csv"), &sys.grid, &yd)?;
        }
        let res = solve_one(cfg, sys, yd, alpha, None);
        if extra.iteration_log {
            let log: &[IterationRecord] = match &res {
                Ok(o) => &o.log,
                Err(RunError::Solve(SolveError::MaxIter { log, .. })) => log,
                Err(_) => &[],
            };
            write_iterations(&out.join(format!("iterations_{scheme}.csv")), scheme, alpha, log)?;
        }
        let o = res?;
        write_atoms(&out.join(format!("atoms_{scheme}.csv")), &o.sys, &o.control, atom_threshold(&o.control))?;
        fs::write(out.join(format!("report_{scheme}.json")), serde_json::to_string_pretty(&o.report)? + "\n")?;
        reports.push(o.report);
    }
    Ok(reports)
}

pub fn write_iterations(path: &Path, scheme: Scheme, alpha: f64, log: &[IterationRecord]) -> Result<(), RunError> {
    let mut w = csv_writer(path, "iterations")?;
    w.write_record(["scheme", "alpha", "iter", "residual", "step", "active_upper", "active_lower"])?;
    for r in log {
        w.write_record([
            scheme.name().to_string(),
            alpha.to_string(),
            r.iter.to_string(),
            r.residual.to_string(),
            r.step.to_string(),
            r.active_upper.to_string(),
            r.active_lower.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Atoms with `|coefficient| > threshold`. VD rows are Dirac atoms at
/// `(x, t)`; DG rows are densities over `(t_start, t]`; `initial` rows belong
/// to the initial control at `t = 0`.
pub fn write_atoms(path: &Path, sys: &DiscreteSystem, u: &MeasureControl, threshold: f64) -> Result<(), RunError> {
    let mut w = csv_writer(path, "atoms")?;
    w.write_record(["scheme", "kind", "j", "k", "x", "t", "t_start", "coefficient", "density"])?;
    let (kind, scheme) = match u.scheme {
        Scheme::Vd => ("dirac", "vd"),
        Scheme::Dg => ("interval", "dg"),
    };
    for a in u.support(threshold) {
        let t_start = match u.scheme {
            Scheme::Vd => a.t,
            Scheme::Dg => sys.grid.t[a.k - 1],
        };
        w.write_record([
            scheme.to_string(),
            kind.to_string(),
            a.j.to_string(),
            a.k.to_string(),
            a.x.to_string(),
            a.t.to_string(),
            t_start.to_string(),
            a.coefficient.to_string(),
            a.density.to_string(),
        ])?;
    }
    for a in u.initial.iter().filter(|a| a.coefficient.abs() > threshold) {
        w.write_record([
            scheme.to_string(),
            "initial".to_string(),
            a.j.to_string(),
            "0".to_string(),
            a.x.to_string(),
            "0".to_string(),
            "0".to_string(),
            a.coefficient.to_string(),
            a.coefficient.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_desired_state(path: &Path, grid: &SpaceTimeGrid, yd: &DesiredState) -> Result<(), RunError> {
    let mut w = csv_writer(path, "desired-state")?;
    w.write_record(["j", "k", "x", "t", "value"])?;
    for k in 1..=grid.n_tau() {
        let t = grid.midpoint(k);
        for (j, &x) in grid.x.iter().enumerate() {
            w.write_record([(j + 1).to_string(), k.to_string(), x.to_string(), t.to_string(), yd.get(j + 1, k).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn tridiag_csr(t: &SymTridiag) -> CsrMatrix {
    let n = t.n();
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        for j in i.saturating_sub(1)..(i + 2).min(n) {
            trip.push((i, j, t.get(i, j)));
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

/// MatrixMarket dumps: `M_h`, `A_h`, the (reduced) `Lt`, and for DG the full
/// system including the initial block row.
pub fn write_matrices(out: &Path, sys: &DiscreteSystem) -> Result<(), RunError> {
    let s = sys.scheme;
    let write = |name: String, m: &CsrMatrix| -> Result<(), RunError> {
        let mut f = std::io::BufWriter::new(File::create(out.join(name))?);
        m.write_matrix_market(&mut f)?;
        f.flush()?;
        Ok(())
    };
    write("mass.mtx".into(), &tridiag_csr(&sys.mass))?;
    write("stiffness.mtx".into(), &tridiag_csr(&sys.stiffness))?;
    write(format!("lt_{s}.mtx"), &sys.lt_matrix())?;
    if s == Scheme::Dg {
        write("lt_dg_full.mtx".into(), &sys.full_matrix())?;
    }
    Ok(())
}

/// `n` log-spaced values from `hi` down to `lo`, both included.
pub fn log_spaced_descending(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    let (lh, ll) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| match i {
            0 => hi,
            i if i + 1 == n => lo,
            i => (lh + (ll - lh) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub scheme: Scheme,
    pub measure_norm: f64,
    pub tracking_error: f64,
    pub iters: usize,
    pub duality_gap: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema: String,
    pub scheme: Scheme,
    /// Critical alpha: the control vanishes for every alpha at or above it.
    pub alpha_critical: f64,
    /// Norm and tracking error of the `alpha = 0` closed-form control.
    pub alpha_zero_norm: f64,
    pub alpha_zero_tracking_error: f64,
    pub rows: usize,
}

/// `sweep-alpha`: a descending continuation in `alpha` per scheme, each solve
/// warm-started from the previous one and retried cold if that fails. Rows are
/// flushed as they are computed, so a failure leaves the completed part of
/// the CSV in place.
pub fn cmd_alpha_sweep(cfg: &RunConfig, schemes: &[Scheme], out: &Path) -> Result<(Vec<SweepRow>, Vec<SweepSummary>), RunError> {
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("sweep.csv"), "sweep")?;
    w.write_record(["alpha", "scheme", "measure_norm", "tracking_error", "iters", "duality_gap", "support_size"])?;
    w.flush()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &scheme in schemes {
        let (sys, yd) = setup(cfg, scheme)?;
        let (alpha_critical, _) = critical_bounds(&sys, &yd)?;
        let alphas = match &cfg.sweep.alphas {
            Some(list) => list.clone(),
            None => {
                let hi = cfg.sweep.alpha_max.unwrap_or(alpha_critical);
                if !(hi > cfg.sweep.alpha_min) {
                    return Err(ConfigError::Invalid(format!("sweep start {hi} not above alpha_min {}", cfg.sweep.alpha_min)).into());
                }
                log_spaced_descending(hi, cfg.sweep.alpha_min, cfg.sweep.points)
            }
        };
        let zero = solve_one(cfg, sys.clone(), yd.clone(), 0.0, None)?;
        let mut warm: Option<PredualIterate> = None;
        for &alpha in &alphas {
            // a large step in alpha can leave the previous solution a poor
            // start; the cold start is the reference behaviour
            let o = match solve_one(cfg, sys.clone(), yd.clone(), alpha, warm.as_ref()) {
                Err(RunError::Solve(_)) if warm.is_some() => solve_one(cfg, sys.clone(), yd.clone(), alpha, None)?,
                r => r?,
            };
            let row = SweepRow {
                alpha,
                scheme,
                measure_norm: o.report.measure_norm,
                tracking_error: o.report.tracking_error,
                iters: o.report.iterations,
                duality_gap: o.report.duality_gap,
                support_size: o.report.support.len() + o.report.initial_support.len(),
            };
            w.write_record([
                alpha.to_string(),
                scheme.name().to_string(),
                row.measure_norm.to_string(),
                row.tracking_error.to_string(),
                row.iters.to_string(),
                row.duality_gap.to_string(),
                row.support_size.to_string(),
            ])?;
            w.flush()?;
            rows.push(row);
            warm = Some(o.iterate);
        }
        summaries.push(SweepSummary {
            schema: format!("mvheat-sweep-summary v{CSV_SCHEMA_VERSION}"),
            scheme,
            alpha_critical,
            alpha_zero_norm: zero.report.measure_norm,
            alpha_zero_tracking_error: zero.report.tracking_error,
            rows: alphas.len(),
        });
    }
    fs::write(out.join("sweep_summary.json"), serde_json::to_string_pretty(&summaries)? + "\n")?;
    Ok((rows, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub tau: f64,
    pub scheme: Scheme,
    pub coupling: Coupling,
    /// `| |u_h| - |u_true| |` with `|u_true| = weight`.
    pub norm_error: f64,
    /// Lumped `L^q` distance of the discrete state to the Fourier state.
    pub y_error: f64,
    pub iters: usize,
    pub measure_norm: f64,
    /// `ok`, or the failure message of this level.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub scheme: Scheme,
    pub coupling: Coupling,
    pub quantity: String,
    /// Least-squares slope of `log(error)` against `log(h)`.
    pub slope: f64,
    pub levels: usize,
    /// Errors strictly decrease from each level to the next finer one.
    pub monotone: bool,
}

/// Least-squares slope of `log y` over `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One level of the refinement study.
pub fn convergence_level(cfg: &RunConfig, scheme: Scheme, coupling: Coupling, level: usize) -> ConvergenceRow {
    let h = 1.0 / level as f64;
    let tau = coupling.tau(h).expect("coupled");
    let mut row = ConvergenceRow {
        h,
        tau,
        scheme,
        coupling,
        norm_error: f64::NAN,
        y_error: f64::NAN,
        iters: 0,
        measure_norm: f64::NAN,
        status: String::new(),
    };
    match run_level(cfg, scheme, coupling, level) {
        Ok((norm_error, y_error, iters, norm)) => {
            row.norm_error = norm_error;
            row.y_error = y_error;
            row.iters = iters;
            row.measure_norm = norm;
            row.status = "ok".into();
        }
        Err(e) => row.status = e.to_string(),
    }
    row
}

fn run_level(cfg: &RunConfig, scheme: Scheme, coupling: Coupling, level: usize) -> Result<(f64, f64, usize, f64), RunError> {
    let conv = &cfg.convergence;
    let (x0, t0, weight, n_terms) = match cfg.data {
        DataSource::FourierDirac { x0, t0, weight, n_terms } | DataSource::Manufactured { x0, t0, weight, n_terms, .. } => {
            (x0, t0, weight, n_terms)
        }
        DataSource::File { .. } => (0.5, 0.5, 1.0, DEFAULT_TERMS),
    };
    let src = PointSource { x0, t0, weight };
    let level_cfg = RunConfig {
        grid: GridConfig {
            a: 0.0,
            b: 1.0,
            t_end: cfg.grid.t_end,
            n_h: level - 1,
            n_tau: None,
            coupling,
            time_points: None,
            control_region: cfg.grid.control_region,
        },
        data: DataSource::Manufactured { abar: conv.abar, x0, t0, weight, n_terms },
        alpha: Some(conv.abar),
        ..cfg.clone()
    };
    let (sys, yd) = setup(&level_cfg, scheme)?;
    let y_true = sample_fourier_dirac(&sys.grid, &src, n_terms)?;
    let o = solve_one(&level_cfg, sys, yd, conv.abar, None)?;
    let norm = o.report.measure_norm;
    let y_err = tracking_error(&o.sys, &o.state, &y_true.values, o.sys.q());
    Ok(((norm - weight.abs()).abs(), y_err, o.report.iterations, norm))
}

/// Slopes of each (scheme, coupling, quantity) curve over its successful levels.
pub fn convergence_slopes(rows: &[ConvergenceRow]) -> Vec<SlopeRow> {
    let mut out = Vec::new();
    let mut keys: Vec<(Scheme, Coupling)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.scheme, r.coupling)) {
            keys.push((r.scheme, r.coupling));
        }
    }
    for (scheme, coupling) in keys {
        let mut sel: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.scheme == scheme && r.coupling == coupling).collect();
        sel.sort_by(|a, b| b.h.total_cmp(&a.h));
        let all_ok = sel.iter().all(|r| r.status == "ok");
        for (name, get) in [("norm_error", (|r: &ConvergenceRow| r.norm_error) as fn(&ConvergenceRow) -> f64), ("y_error", |r| r.y_error)] {
            let pts: Vec<(f64, f64)> = sel.iter().filter(|r| r.status == "ok" && get(r) > 0.0).map(|r| (r.h, get(r))).collect();
            let (hs, es): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let slope = if pts.len() >= 2 { loglog_slope(&hs, &es) } else { f64::NAN };
            let monotone = all_ok && pts.len() == sel.len() && es.windows(2).all(|w| w[1] < w[0]);
            out.push(SlopeRow { scheme, coupling, quantity: name.to_string(), slope, levels: pts.len(), monotone });
        }
    }
    out
}

/// `convergence`: the manufactured problem with `alpha = abar` on a ladder of
/// meshes for each coupling and scheme. A failing level is recorded in its
/// row and the ladder continues. `progress` sees every row as it finishes.
pub fn cmd_convergence(
    cfg: &RunConfig,
    schemes: &[Scheme],
    out: &Path,
    mut progress: impl FnMut(&ConvergenceRow),
) -> Result<(Vec<ConvergenceRow>, Vec<SlopeRow>), RunError> {
    if cfg.grid.t_end <= 0.0 {
        return Err(ConfigError::Invalid("T must be positive".into()).into());
    }
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("convergence.csv"), "convergence")?;
    w.write_record(["h", "tau", "scheme", "coupling", "norm_error", "y_error", "iters", "measure_norm", "status"])?;
    w.flush()?;
    let mut rows = Vec::new();
    for &coupling in &cfg.convergence.couplings {
        for &scheme in schemes {
            for &level in &cfg.convergence.levels {
                let r = convergence_level(cfg, scheme, coupling, level);
                w.write_record([
                    r.h.to_string(),
                    r.tau.to_string(),
                    scheme.name().to_string(),
                    coupling.label().to_string(),
                    r.norm_error.to_string(),
                    r.y_error.to_string(),
                    r.iters.to_string(),
                    r.measure_norm.to_string(),
                    r.status.clone(),
                ])?;
                w.flush()?;
                progress(&r);
                rows.push(r);
            }
        }
    }
    let slopes = convergence_slopes(&rows);
    let mut sw = csv_writer(&out.join("convergence_slopes.csv"), "convergence-slopes")?;
    sw.write_record(["scheme", "coupling", "quantity", "slope", "levels", "monotone"])?;
    for s in &slopes {
        sw.write_record([
            s.scheme.name().to_string(),
            s.coupling.label().to_string(),
            s.quantity.clone(),
            s.slope.to_string(),
            s.levels.to_string(),
            s.monotone.to_string(),
        ])?;
    }
    sw.flush()?;
    fs::write(out.join("convergence_slopes.json"), serde_json::to_string_pretty(&slopes)? + "\n")?;
    Ok((rows, slopes))
}
