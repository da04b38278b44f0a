//! Time integration.
//!
//! The radial scheme is a cell-centered finite-volume method on the flux form
//! `∂_t f = ∇·(a∇f − f∇a)`. Face fluxes telescope, so the discrete mass
//! `4π Σ V_i f_i` is conserved to rounding. Each step freezes `a[f]`, solves
//! the diffusion part implicitly with one tridiagonal solve and adds the drift
//! part explicitly. The outer face is closed; what an open boundary would have
//! let through is accumulated as the leaked-flux budget.

use std::f64::consts::PI;

use crate::diagnostics::{self, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::fields::{radial_laplacian, CartesianField3, Checkpoint, RadialField, RadialGrid, Trajectory};
use crate::kernels::{cartesian_convolve, CoefficientOperator, Potential};

const FOUR_PI: f64 = 4.0 * PI;
/// Largest allowed `dt · max(−(2+γ)h)`.
pub const REACTION_GUARD: f64 = 0.5;
const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SemiImplicitFv,
    ExplicitFv,
    ExplicitCartesian,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "semi-implicit-fv" => Ok(Scheme::SemiImplicitFv),
            "explicit-fv" => Ok(Scheme::ExplicitFv),
            "explicit-cartesian" => Ok(Scheme::ExplicitCartesian),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SemiImplicitFv => "semi-implicit-fv",
            Scheme::ExplicitFv => "explicit-fv",
            Scheme::ExplicitCartesian => "explicit-cartesian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityPolicy {
    /// Any negative value aborts the step.
    Assert,
    /// Negative values are set to zero and counted.
    ClipAndLog,
}

impl PositivityPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "assert" => Ok(PositivityPolicy::Assert),
            "clip-and-log" => Ok(PositivityPolicy::ClipAndLog),
            other => Err(Error::invalid(format!("unknown positivity policy '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PositivityPolicy::Assert => "assert",
            PositivityPolicy::ClipAndLog => "clip-and-log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub potential: Potential,
    pub n_cells: usize,
    pub r_max: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Steps between diagnostics rows.
    pub output_stride: u64,
    pub positivity: PositivityPolicy,
    pub seed: u64,
    /// Keep a field snapshot with every diagnostics row.
    pub keep_snapshots: bool,
    /// Steps between checkpoints; `None` disables them.
    pub checkpoint_stride: Option<u64>,
}

impl SolverConfig {
    /// The reference run: unit Gaussian, `n = 512`, `r_max = 12`, `dt = 10⁻⁴`, `t_end = 0.5`.
    pub fn reference(gamma: f64) -> Result<Self> {
        Ok(Self {
            potential: Potential::power_law(gamma)?,
            n_cells: 512,
            r_max: 12.0,
            dt: 1e-4,
            t_end: 0.5,
            scheme: Scheme::SemiImplicitFv,
            output_stride: 50,
            positivity: PositivityPolicy::Assert,
            seed: 0,
            keep_snapshots: false,
            checkpoint_stride: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.output_stride == 0 {
            return Err(Error::invalid("output_stride must be at least 1"));
        }
        if self.checkpoint_stride == Some(0) {
            return Err(Error::invalid("checkpoint_stride must be at least 1"));
        }
        if let Some(g) = self.potential.gamma() {
            if !(-3.0..=-2.0).contains(&g) {
                return Err(Error::invalid(format!("evolution runs need gamma in [-3, -2], got {g}")));
            }
        }
        if self.scheme == Scheme::ExplicitCartesian && (self.n_cells > 64 || self.n_cells % 2 == 1) {
            return Err(Error::invalid("Cartesian runs need an even n_cells of at most 64"));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.n_cells, self.r_max)
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub time: f64,
    /// Smallest substep taken.
    pub dt_used: f64,
    pub halvings: u32,
    pub max_value: f64,
    /// `(M − M₀)/M₀`, zero for empty data.
    pub mass_drift: f64,
    pub clips: usize,
    /// Leaked-flux budget accumulated in this step.
    pub leaked: f64,
}

/// Right-hand side of the flux form, `∇·(a[f]∇f − f∇a[f])`, with a closed outer face.
pub fn flux_form_rhs(f: &RadialField, pot: &Potential) -> Result<RadialField> {
    f.check_finite()?;
    let ops = CoefficientOperator::new(*f.grid(), pot)?;
    let a = ops.a_values(f.values());
    let geo = Geometry::new(*f.grid());
    let mut out = vec![0.0; f.len()];
    geo.divergence(f.values(), &a, true, true, &mut out);
    RadialField::signed(*f.grid(), out)
}

/// Pointwise `a[f]Δf − (2+γ)h[f]f`.
pub fn nondivergence_rhs(f: &RadialField, pot: &Potential) -> Result<RadialField> {
    let gamma = match pot.gamma() {
        Some(g) if (-3.0..=-2.0).contains(&g) => g,
        _ => return Err(Error::invalid("non-divergence form needs a power law with gamma in [-3, -2]")),
    };
    f.check_finite()?;
    let ops = CoefficientOperator::new(*f.grid(), pot)?;
    let a = ops.a_values(f.values());
    let h = ops.h_values(f.values())?;
    let lap = radial_laplacian(f)?;
    let out = (0..f.len()).map(|i| a[i] * lap.values()[i] - (2.0 + gamma) * h[i] * f.values()[i]).collect();
    RadialField::signed(*f.grid(), out)
}

/// `Δu + u²`.
pub fn semilinear_heat_rhs(u: &RadialField) -> Result<RadialField> {
    let lap = radial_laplacian(u)?;
    let out = lap.values().iter().zip(u.values()).map(|(l, v)| l + v * v).collect();
    RadialField::signed(*u.grid(), out)
}

/// Cell volumes and face areas (without the 4π).
#[derive(Debug, Clone)]
struct Geometry {
    grid: RadialGrid,
    volume: Vec<f64>,
    /// `area[i]` belongs to the face between cells `i` and `i+1`.
    area: Vec<f64>,
}

impl Geometry {
    fn new(grid: RadialGrid) -> Self {
        let n = grid.n_cells();
        let volume = (0..n).map(|i| grid.cell_volume(i)).collect();
        let area = (0..n).map(|i| grid.face(i + 1).powi(2)).collect();
        Self { grid, volume, area }
    }

    /// Adds `(1/V_i) Σ_faces ±A F` for the selected flux parts to `out`.
    fn divergence(&self, f: &[f64], a: &[f64], diffusion: bool, drift: bool, out: &mut [f64]) {
        let n = f.len();
        let dr = self.grid.dr();
        let mut left = 0.0;
        for i in 0..n {
            let right = if i + 1 < n {
                let mut flux = 0.0;
                if diffusion {
                    flux += 0.5 * (a[i] + a[i + 1]) * (f[i + 1] - f[i]) / dr;
                }
                if drift {
                    flux -= 0.5 * (f[i] + f[i + 1]) * (a[i + 1] - a[i]) / dr;
                }
                self.area[i] * flux
            } else {
                0.0
            };
            out[i] += (right - left) / self.volume[i];
            left = right;
        }
    }

    fn mass(&self, f: &[f64]) -> f64 {
        FOUR_PI * f.iter().zip(&self.volume).map(|(v, w)| v * w).sum::<f64>()
    }

    /// Flux an open outer face would carry against a zero exterior value.
    fn leak_rate(&self, f: &[f64], a: &[f64]) -> f64 {
        let n = f.len();
        FOUR_PI * self.grid.r_max().powi(2) * (a[n - 1] * f[n - 1]).abs() / self.grid.dr()
    }

    /// Solves `(V_i + c_{i−½} + c_{i+½})x_i − c_{i−½}x_{i−1} − c_{i+½}x_{i+1} = rhs_i`
    /// with `c` the face conductances. Returns `None` if a pivot vanishes.
    fn implicit_solve(&self, conductance: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
        let n = rhs.len();
        let mut upper = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let c = if i + 1 < n { conductance[i] } else { 0.0 };
            let diag = self.volume[i] + prev_c + c;
            let (denom, carry) = if i == 0 { (diag, 0.0) } else { (diag + prev_c * upper[i - 1], y[i - 1]) };
            if !(denom.abs() > 0.0) || !denom.is_finite() {
                return None;
            }
            upper[i] = -c / denom;
            y[i] = (rhs[i] + prev_c * carry) / denom;
            prev_c = c;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            y[i] -= upper[i] * y[i + 1];
        }
        Some(y)
    }
}

/// Coefficients frozen at the start of a (sub)step.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a: Vec<f64>,
    /// `h[f]`, when the potential defines it and it was requested.
    pub h: Option<Vec<f64>>,
    /// `max(−(2+γ)h)`, or `max(−Δa)` for general potentials.
    pub reaction_rate: f64,
}

/// Reusable radial stepper holding the precomputed convolution operators.
#[derive(Debug, Clone)]
pub struct Stepper {
    config: SolverConfig,
    geo: Geometry,
    ops: CoefficientOperator,
    gamma: Option<f64>,
}

/// Mutable state of a radial run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub f: Vec<f64>,
    pub time: f64,
    pub step: u64,
    pub initial_mass: f64,
    pub leaked: f64,
}

impl Stepper {
    pub fn new(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        if config.scheme == Scheme::ExplicitCartesian {
            return Err(Error::invalid("the radial stepper does not run the Cartesian scheme"));
        }
        let grid = config.grid()?;
        Ok(Self {
            config: config.clone(),
            geo: Geometry::new(grid),
            ops: CoefficientOperator::new(grid, &config.potential)?,
            gamma: config.potential.gamma(),
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.geo.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn mass(&self, f: &[f64]) -> f64 {
        self.geo.mass(f)
    }

    pub fn initial_state(&self, f_in: &RadialField) -> Result<RunState> {
        if f_in.grid() != self.grid() {
            return Err(Error::invalid("initial data grid does not match the solver grid"));
        }
        if f_in.is_signed() {
            return Err(Error::invalid("initial data must be a nonnegative field"));
        }
        f_in.check_finite()?;
        Ok(RunState {
            f: f_in.values().to_vec(),
            time: 0.0,
            step: 0,
            initial_mass: self.geo.mass(f_in.values()),
            leaked: 0.0,
        })
    }

    /// `a[f]` and, when `with_h` or the reaction guard needs it, `h[f]`.
    pub fn coefficients(&self, f: &[f64], with_h: bool) -> Result<Coefficients> {
        let a = self.ops.a_values(f);
        match self.gamma {
            Some(g) => {
                let need = with_h || g != -2.0;
                let h = if need { Some(self.ops.h_values(f)?) } else { None };
                let rate = h
                    .as_ref()
                    .map(|h| h.iter().map(|v| -(2.0 + g) * v).fold(0.0, f64::max))
                    .unwrap_or(0.0);
                Ok(Coefficients { a, h, reaction_rate: rate })
            }
            None => {
                // Δa = (2+γ)h holds for any potential.
                let field = RadialField::signed(*self.grid(), a.clone())?;
                let lap = radial_laplacian(&field)?;
                let rate = lap.values().iter().map(|v| -v).fold(0.0, f64::max);
                Ok(Coefficients { a, h: None, reaction_rate: rate })
            }
        }
    }

    /// Advances by one configured `dt`, halving as the reaction guard requires.
    /// `frozen` may carry coefficients already computed for `state.f`.
    pub fn step(&self, state: &mut RunState, frozen: Option<Coefficients>) -> Result<StepReport> {
        let mut report = StepReport { dt_used: self.config.dt, ..Default::default() };
        self.advance(state, self.config.dt, frozen, 0, &mut report)?;
        state.step += 1;
        state.time = state.step as f64 * self.config.dt;
        report.time = state.time;
        report.max_value = state.f.iter().copied().fold(0.0, f64::max);
        report.mass_drift = if state.initial_mass > 0.0 {
            (self.geo.mass(&state.f) - state.initial_mass) / state.initial_mass
        } else {
            0.0
        };
        Ok(report)
    }

    fn advance(
        &self,
        state: &mut RunState,
        dt: f64,
        frozen: Option<Coefficients>,
        depth: u32,
        report: &mut StepReport,
    ) -> Result<()> {
        let coef = match frozen {
            Some(c) => c,
            None => self.coefficients(&state.f, false)?,
        };
        if dt * coef.reaction_rate > REACTION_GUARD {
            if depth >= MAX_HALVINGS {
                return Err(Error::Solver(format!(
                    "reaction guard still violated after {MAX_HALVINGS} halvings (rate {})",
                    coef.reaction_rate
                )));
            }
            report.halvings = report.halvings.max(depth + 1);
            report.dt_used = report.dt_used.min(0.5 * dt);
            self.advance(state, 0.5 * dt, Some(coef), depth + 1, report)?;
            return self.advance(state, 0.5 * dt, None, depth + 1, report);
        }
        let next = self.single(&state.f, &coef.a, dt)?;
        let leak = dt * self.geo.leak_rate(&state.f, &coef.a);
        state.leaked += leak;
        report.leaked += leak;
        state.f = self.enforce_positivity(next, report)?;
        Ok(())
    }

    fn single(&self, f: &[f64], a: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = f.len();
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite diffusion coefficient at cell {i}")));
        }
        match self.config.scheme {
            Scheme::ExplicitFv => {
                let mut rate = vec![0.0; n];
                self.geo.divergence(f, a, true, true, &mut rate);
                Ok(f.iter().zip(&rate).map(|(v, r)| v + dt * r).collect())
            }
            _ => {
                let dr = self.grid().dr();
                let mut conductance = vec![0.0; n.saturating_sub(1)];
                for (i, c) in conductance.iter_mut().enumerate() {
                    let af = 0.5 * (a[i] + a[i + 1]);
                    if af < 0.0 {
                        return Err(Error::Solver(format!(
                            "degenerate diffusion: a = {af} < 0 on face {} (r = {})",
                            i + 1,
                            self.grid().face(i + 1)
                        )));
                    }
                    *c = dt * self.geo.area[i] * af / dr;
                }
                let mut drift = vec![0.0; n];
                self.geo.divergence(f, a, false, true, &mut drift);
                let rhs: Vec<f64> =
                    (0..n).map(|i| self.geo.volume[i] * (f[i] + dt * drift[i])).collect();
                self.geo
                    .implicit_solve(&conductance, &rhs)
                    .ok_or_else(|| Error::Solver("tridiagonal solve hit a zero pivot".into()))
            }
        }
    }

    fn enforce_positivity(&self, mut f: Vec<f64>, report: &mut StepReport) -> Result<Vec<f64>> {
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for (i, v) in f.iter_mut().enumerate() {
            if *v < 0.0 {
                match self.config.positivity {
                    PositivityPolicy::Assert => {
                        return Err(Error::Solver(format!("negative value {v:e} at cell {i} under the assert policy")))
                    }
                    PositivityPolicy::ClipAndLog => {
                        *v = 0.0;
                        report.clips += 1;
                    }
                }
            }
        }
        Ok(f)
    }

    /// Diagnostics row for the current state using already-computed coefficients.
    pub fn row(&self, state: &RunState, coef: &Coefficients) -> Result<DiagnosticsRow> {
        let field = RadialField::from_parts_unchecked(*self.grid(), state.f.clone(), false);
        diagnostics::row_from_state(state.time, &field, &coef.a, coef.h.as_deref(), self.gamma, state.leaked)
    }

    pub fn checkpoint(&self, state: &RunState) -> Checkpoint {
        Checkpoint {
            field: RadialField::from_parts_unchecked(*self.grid(), state.f.clone(), false),
            gamma: self.gamma.unwrap_or(f64::NAN),
            time: state.time,
            step: state.step,
            initial_mass: state.initial_mass,
            leaked: state.leaked,
        }
    }

    pub fn restore(&self, cp: &Checkpoint) -> Result<RunState> {
        if cp.field.grid() != self.grid() {
            return Err(Error::invalid("checkpoint grid does not match the solver grid"));
        }
        let g = self.gamma.unwrap_or(f64::NAN);
        if !(cp.gamma == g || (cp.gamma.is_nan() && g.is_nan())) {
            return Err(Error::invalid(format!("checkpoint gamma {} does not match config gamma {g}", cp.gamma)));
        }
        Ok(RunState {
            f: cp.field.values().to_vec(),
            time: cp.time,
            step: cp.step,
            initial_mass: cp.initial_mass,
            leaked: cp.leaked,
        })
    }
}

/// One step of the configured scheme from `f`, with a fresh stepper.
pub fn step(f: &RadialField, config: &SolverConfig) -> Result<(RadialField, StepReport)> {
    let stepper = Stepper::new(config)?;
    let mut state = stepper.initial_state(f)?;
    let report = stepper.step(&mut state, None)?;
    Ok((RadialField::from_parts_unchecked(*f.grid(), state.f, false), report))
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub reports: Vec<StepReport>,
    pub checkpoints: Vec<Checkpoint>,
    /// Most recent state known to be finite.
    pub last_good: Checkpoint,
    /// Set when the run stopped early; the trajectory covers the finished part.
    pub failure: Option<Error>,
}

impl RunOutput {
    pub fn total_clips(&self) -> usize {
        self.reports.iter().map(|r| r.clips).sum()
    }

    pub fn max_halvings(&self) -> u32 {
        self.reports.iter().map(|r| r.halvings).max().unwrap_or(0)
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.reports.iter().map(|r| r.mass_drift.abs()).fold(0.0, f64::max)
    }
}

/// Runs to `t_end`; errors carry the failure but lose the partial output.
pub fn run(config: &SolverConfig, f_in: &RadialField) -> Result<Trajectory> {
    let out = run_detailed(config, f_in)?;
    match out.failure {
        Some(e) => Err(e),
        None => Ok(out.trajectory),
    }
}

pub fn run_detailed(config: &SolverConfig, f_in: &RadialField) -> Result<RunOutput> {
    let stepper = Stepper::new(config)?;
    let state = stepper.initial_state(f_in)?;
    drive(&stepper, state)
}

/// Continues a run from a checkpoint up to the configured `t_end`.
pub fn resume(config: &SolverConfig, checkpoint: &Checkpoint) -> Result<RunOutput> {
    let stepper = Stepper::new(config)?;
    let state = stepper.restore(checkpoint)?;
    drive(&stepper, state)
}

fn drive(stepper: &Stepper, mut state: RunState) -> Result<RunOutput> {
    let cfg = stepper.config();
    let n_steps = cfg.n_steps();
    let mut trajectory = Trajectory::default();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_good = stepper.checkpoint(&state);
    let mut failure = None;
    while state.step <= n_steps {
        let output_now = state.step % cfg.output_stride == 0 || state.step == n_steps;
        let coef = match stepper.coefficients(&state.f, output_now) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if output_now {
            let row = stepper.row(&state, &coef)?;
            let snap = cfg
                .keep_snapshots
                .then(|| RadialField::from_parts_unchecked(*stepper.grid(), state.f.clone(), false));
            trajectory.push(state.time, snap, row)?;
        }
        if cfg.checkpoint_stride.is_some_and(|s| state.step % s == 0) {
            checkpoints.push(stepper.checkpoint(&state));
        }
        if state.step == n_steps {
            break;
        }
        match stepper.step(&mut state, Some(coef)) {
            Ok(r) => {
                reports.push(r);
                last_good = stepper.checkpoint(&state);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    diagnostics::finalize_rows(&mut trajectory.rows);
    Ok(RunOutput { trajectory, reports, checkpoints, last_good, failure })
}

/// Max-value history of a run with a blow-up detector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxTrace {
    pub times: Vec<f64>,
    pub max_values: Vec<f64>,
    /// First time the maximum crossed the threshold.
    pub detector_time: Option<f64>,
    pub mass: Vec<f64>,
}

/// `∂_t u = Δu + u²`: implicit diffusion, explicit reaction with
/// `dt ≤ 0.5 / max u`, until `horizon` or the detector fires.
pub fn semilinear_run(u0: &RadialField, dt: f64, horizon: f64, threshold: f64) -> Result<MaxTrace> {
    if !(dt > 0.0 && horizon > 0.0 && threshold > 0.0) {
        return Err(Error::invalid("semilinear run needs positive dt, horizon and threshold"));
    }
    u0.check_finite()?;
    let geo = Geometry::new(*u0.grid());
    let n = u0.len();
    let mut u = u0.values().to_vec();
    let mut t = 0.0;
    let mut trace = MaxTrace::default();
    let record = |trace: &mut MaxTrace, t: f64, u: &[f64]| {
        trace.times.push(t);
        trace.max_values.push(u.iter().copied().fold(0.0, f64::max));
        trace.mass.push(geo.mass(u));
    };
    record(&mut trace, t, &u);
    let dr = u0.grid().dr();
    while t < horizon * (1.0 - 1e-12) {
        let peak = u.iter().copied().fold(0.0, f64::max);
        if peak >= threshold {
            trace.detector_time = Some(t);
            break;
        }
        let mut h = dt.min(horizon - t);
        while h * peak > REACTION_GUARD {
            h *= 0.5;
        }
        let conductance: Vec<f64> = (0..n - 1).map(|i| h * geo.area[i] / dr).collect();
        let rhs: Vec<f64> = (0..n).map(|i| geo.volume[i] * (u[i] + h * u[i] * u[i])).collect();
        u = geo
            .implicit_solve(&conductance, &rhs)
            .ok_or_else(|| Error::Solver("tridiagonal solve hit a zero pivot".into()))?;
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        t += h;
        record(&mut trace, t, &u);
    }
    Ok(trace)
}

/// Max-value history of a Krieger-Strain run (radial flux scheme).
pub fn ks_max_trace(config: &SolverConfig, f_in: &RadialField, threshold: f64) -> Result<MaxTrace> {
    let stepper = Stepper::new(config)?;
    let mut state = stepper.initial_state(f_in)?;
    let mut trace = MaxTrace::default();
    let n_steps = config.n_steps();
    loop {
        let peak = state.f.iter().copied().fold(0.0, f64::max);
        trace.times.push(state.time);
        trace.max_values.push(peak);
        trace.mass.push(stepper.mass(&state.f));
        if peak >= threshold {
            trace.detector_time = Some(state.time);
            break;
        }
        if state.step == n_steps {
            break;
        }
        stepper.step(&mut state, None)?;
    }
    Ok(trace)
}

/// `a[f]Δf − (2+γ)h[f]f` on a Cartesian box, with zero values outside.
pub fn cartesian_rhs(f: &CartesianField3, gamma: f64) -> Result<CartesianField3> {
    if !(-3.0..=-2.0).contains(&gamma) {
        return Err(Error::invalid(format!("Cartesian evolution needs gamma in [-3, -2], got {gamma}")));
    }
    let grid = *f.grid();
    let n = grid.n();
    let h = grid.spacing();
    let a = cartesian_convolve(f, 2.0 + gamma)?;
    let hfield: Vec<f64> = if gamma == -3.0 {
        f.values().iter().map(|v| FOUR_PI * v).collect()
    } else {
        cartesian_convolve(f, gamma)?.values().iter().map(|v| (3.0 + gamma) * v).collect()
    };
    let at = |i: isize, j: isize, k: isize| {
        let inside = |q: isize| q >= 0 && (q as usize) < n;
        if inside(i) && inside(j) && inside(k) {
            f.at(i as usize, j as usize, k as usize)
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; grid.len()];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (ii, jj, kk) = (i as isize, j as isize, k as isize);
                let centre = f.at(i, j, k);
                let lap = (at(ii + 1, jj, kk) + at(ii - 1, jj, kk) + at(ii, jj + 1, kk) + at(ii, jj - 1, kk)
                    + at(ii, jj, kk + 1)
                    + at(ii, jj, kk - 1)
                    - 6.0 * centre)
                    / (h * h);
                let idx = grid.index(i, j, k);
                out[idx] = a.values()[idx] * lap - (2.0 + gamma) * hfield[idx] * centre;
            }
        }
    }
    CartesianField3::new(grid, out)
}

/// Forward-Euler Cartesian run; returns the field every `output_stride` steps.
pub fn run_cartesian(config: &SolverConfig, f_in: &CartesianField3) -> Result<Vec<(f64, CartesianField3)>> {
    config.validate()?;
    let gamma = config
        .potential
        .gamma()
        .ok_or_else(|| Error::invalid("Cartesian runs need a power-law potential"))?;
    if f_in.grid().n() > 64 {
        return Err(Error::invalid("Cartesian runs are limited to n <= 64"));
    }
    let mut f = f_in.clone();
    let mut out = vec![(0.0, f.clone())];
    let n_steps = config.n_steps();
    for s in 1..=n_steps {
        let rhs = cartesian_rhs(&f, gamma)?;
        for (v, r) in f.values_mut().iter_mut().zip(rhs.values()) {
            *v += config.dt * r;
            if *v < 0.0 {
                if config.positivity == PositivityPolicy::Assert {
                    return Err(Error::Solver(format!("negative value {v:e} in Cartesian step {s}")));
                }
                *v = 0.0;
            }
        }
        if let Some(i) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if s % config.output_stride == 0 || s == n_steps {
            out.push((s as f64 * config.dt, f.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gaussian_field, integrate_radial};
    use proptest::prelude::*;

    fn cfg(gamma: f64, n: usize, dt: f64, t_end: f64) -> SolverConfig {
        SolverConfig { n_cells: n, dt, t_end, output_stride: 1, ..SolverConfig::reference(gamma).unwrap() }
    }

    fn gaussian(n: usize) -> RadialField {
        gaussian_field(RadialGrid::new(n, 12.0).unwrap(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(-3.0, 64, 1e-3, 0.1);
        assert!(c.validate().is_ok());
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let c = SolverConfig { potential: Potential::power_law(-1.0).unwrap(), ..cfg(-3.0, 64, 1e-3, 0.1) };
        assert!(c.validate().is_err());
        let c = SolverConfig { output_stride: 0, ..cfg(-3.0, 64, 1e-3, 0.1) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn heat_case_matches_laplacian() {
        let f = gaussian(512);
        let rhs = flux_form_rhs(&f, &Potential::power_law(-2.0).unwrap()).unwrap();
        let lap = radial_laplacian(&f).unwrap();
        let mass = integrate_radial(&f, 0.0).unwrap();
        let scale = lap.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (r, l) in rhs.values().iter().zip(lap.values()) {
            assert!((r - mass * l).abs() < 1e-3 * scale);
        }
    }

    #[test]
    fn flux_form_telescopes() {
        for gamma in [-3.0, -2.5, -2.0] {
            let f = gaussian(256);
            let rhs = flux_form_rhs(&f, &Potential::power_law(gamma).unwrap()).unwrap();
            let total = integrate_radial(&rhs, 0.0).unwrap();
            let l1: f64 = rhs.values().iter().enumerate().map(|(i, v)| v.abs() * f.grid().cell_volume(i)).sum();
            assert!(total.abs() <= 1e-12 * 4.0 * PI * l1, "gamma {gamma}: {total}");
        }
        let zero = RadialField::zeros(RadialGrid::new(32, 4.0).unwrap());
        assert!(flux_form_rhs(&zero, &Potential::power_law(-3.0).unwrap()).unwrap().is_zero());
    }

    #[test]
    fn forms_agree_under_refinement() {
        let err = |n: usize| {
            let f = gaussian(n);
            let pot = Potential::power_law(-2.5).unwrap();
            let a = flux_form_rhs(&f, &pot).unwrap();
            let b = nondivergence_rhs(&f, &pot).unwrap();
            let w = |i: usize| f.grid().cell_volume(i);
            let diff: f64 = (0..n).map(|i| (a.values()[i] - b.values()[i]).abs() * w(i)).sum();
            let norm: f64 = (0..n).map(|i| a.values()[i].abs() * w(i)).sum();
            diff / norm
        };
        let (coarse, fine) = (err(128), err(256));
        assert!(fine < coarse && fine < 1e-2, "{coarse} -> {fine}");
    }

    #[test]
    fn coulomb_reaction_is_four_pi_f_squared() {
        let f = gaussian(256);
        let h = crate::kernels::coeff_h(&f, &Potential::power_law(-3.0).unwrap()).unwrap();
        for (hv, fv) in h.values().iter().zip(f.values()) {
            let reaction = -(2.0 - 3.0) * hv * fv;
            assert!((reaction - 4.0 * PI * fv * fv).abs() <= 1e-15 * reaction.max(1e-300) && reaction >= 0.0);
        }
    }

    #[test]
    fn one_step_conserves_mass() {
        let f = gaussian(256);
        let (g, rep) = step(&f, &cfg(-3.0, 256, 1e-3, 1.0)).unwrap();
        let (m0, m1) = (integrate_radial(&f, 0.0).unwrap(), integrate_radial(&g, 0.0).unwrap());
        assert!(((m1 - m0) / m0).abs() < 1e-13);
        assert!(rep.mass_drift.abs() < 1e-13 && rep.clips == 0 && rep.halvings == 0);
    }

    #[test]
    fn reaction_guard_halves_the_step() {
        let grid = RadialGrid::new(128, 6.0).unwrap();
        let f = gaussian_field(grid, 1.0, 1.0).unwrap().scaled(400.0);
        let c = SolverConfig { n_cells: 128, r_max: 6.0, dt: 1e-3, ..cfg(-3.0, 128, 1e-3, 1.0) };
        let (_, rep) = step(&f, &c).unwrap();
        // 4π · 400 · (2π)^{-3/2} ≈ 320, so 1e-3 · 320 < 0.5: no halving
        assert_eq!(rep.halvings, 0);
        let c = SolverConfig { dt: 1e-2, ..c };
        let (_, rep) = step(&f, &c).unwrap();
        assert!(rep.halvings >= 3 && rep.dt_used <= 1e-2 / 8.0);
    }

    #[test]
    fn zero_data_stay_zero() {
        let c = cfg(-3.0, 64, 1e-3, 0.01);
        let f = RadialField::zeros(c.grid().unwrap());
        let out = run_detailed(&SolverConfig { keep_snapshots: true, ..c }, &f).unwrap();
        assert!(out.failure.is_none());
        assert!(out.trajectory.snapshots.iter().all(|s| s.is_zero()));
    }

    #[test]
    fn clip_policy_counts_and_assert_policy_fails() {
        // explicit scheme far beyond its diffusion limit oscillates into negatives
        let grid = RadialGrid::new(64, 4.0).unwrap();
        let f = gaussian_field(grid, 0.3, 1.0).unwrap();
        let base = SolverConfig {
            n_cells: 64,
            r_max: 4.0,
            scheme: Scheme::ExplicitFv,
            ..cfg(-2.0, 64, 5e-2, 1.0)
        };
        assert!(step(&f, &base).is_err());
        let clip = SolverConfig { positivity: PositivityPolicy::ClipAndLog, ..base };
        let (g, rep) = step(&f, &clip).unwrap();
        assert!(rep.clips > 0 && g.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn semilinear_small_data_is_heat_like() {
        let u = gaussian(256).scaled(1e-6);
        let rhs = semilinear_heat_rhs(&u).unwrap();
        let lap = radial_laplacian(&u).unwrap();
        for (a, b) in rhs.values().iter().zip(lap.values()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
        let zero = RadialField::zeros(*u.grid());
        assert!(semilinear_heat_rhs(&zero).unwrap().is_zero());
    }

    #[test]
    fn cartesian_rhs_is_radial_for_centred_data() {
        let grid = crate::fields::CartesianGrid3::new(16, 8.0).unwrap();
        let f = CartesianField3::from_fn(grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()).unwrap();
        let r = cartesian_rhs(&f, -3.0).unwrap();
        // symmetric under swapping axes
        assert!((r.at(9, 7, 8) - r.at(7, 8, 9)).abs() < 1e-9 * r.at(9, 7, 8).abs().max(1e-12));
        assert!(cartesian_rhs(&f, -1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mass_is_conserved_for_random_blobs(w in 0.3f64..2.0, c in 0.0f64..3.0, amp in 0.1f64..5.0, gamma in -3.0f64..-2.0) {
            let grid = RadialGrid::new(96, 10.0).unwrap();
            let f = RadialField::from_fn(grid, |r| amp * (-(r - c).powi(2) / (2.0 * w * w)).exp()).unwrap();
            let c = SolverConfig { n_cells: 96, r_max: 10.0, ..cfg(gamma, 96, 1e-4, 1.0) };
            let (g, _) = step(&f, &c).unwrap();
            let (m0, m1) = (integrate_radial(&f, 0.0).unwrap(), integrate_radial(&g, 0.0).unwrap());
            prop_assert!(((m1 - m0) / m0).abs() < 1e-12);
        }
    }
}
