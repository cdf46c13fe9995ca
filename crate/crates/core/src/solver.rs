//! Semi-implicit conservative time stepping for the radial system
//!
//! ```text
//! u_t = ∇·(D(u,v)∇u - S(u,v)∇v)
//! v_t = Δv - v + g(u)
//! ```
//!
//! and its truncated variant in which `S` and `g` see `G_ε(u)` instead of
//! `u`. Each step first solves an implicit linear problem for `v`, then one
//! for `u` with the diffusivity frozen at the previous iterate and the
//! chemotactic flux upwinded explicitly against the new `∇v`. Both solves
//! are conservative finite-volume assemblies, so the reduced mass of `u`
//! only changes by round-off.

use crate::grid::{kahan_sum, RadialGrid};
use crate::kinetics::{Kinetics, Regularization};
use crate::profile;
use crate::tridiag::{TridiagError, Tridiagonal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(#[from] TridiagError),
    #[error("clipped mass {clipped:e} exceeds budget {budget:e}")]
    PositivityViolation { clipped: f64, budget: f64 },
    #[error("non-finite state after step")]
    NonFiniteState,
    #[error("invalid step input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("blow-up time requested for a run with verdict {0}")]
    WrongVerdict(String),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Discrete `(u, v)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
    pub step_count: u64,
}

impl FieldState {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        FieldState {
            u,
            v,
            t: 0.0,
            step_count: 0,
        }
    }

    pub fn sup_u(&self) -> f64 {
        self.u.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mass(&self, grid: &RadialGrid) -> f64 {
        grid.integrate(&self.u)
    }

    pub fn validate(&self, grid: &RadialGrid) -> Result<(), StepError> {
        let n = grid.cells();
        if self.u.len() != n || self.v.len() != n {
            return Err(StepError::InvalidInput(format!(
                "state has {}/{} cells, grid has {n}",
                self.u.len(),
                self.v.len()
            )));
        }
        if self
            .u
            .iter()
            .chain(&self.v)
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(StepError::InvalidInput(
                "state must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Radial Gaussian bump `u₀ = A exp(-r²/w²)` scaled to the given reduced
/// mass, with constant `v₀`.
pub fn gaussian_bump(grid: &RadialGrid, mass: f64, width: f64, v0: f64) -> FieldState {
    let shape: Vec<f64> = grid
        .centers()
        .iter()
        .map(|r| (-(r / width).powi(2)).exp())
        .collect();
    let scale = if mass > 0.0 {
        mass / grid.integrate(&shape)
    } else {
        0.0
    };
    FieldState::new(
        shape.iter().map(|s| s * scale).collect(),
        vec![v0; grid.cells()],
    )
}

/// Per-step numerical controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    /// Relative max-norm residual accepted from each linear solve.
    pub linear_tol: f64,
    /// Diffusivity fixed-point sweeps (1 = frozen at the old state).
    pub picard_iters: usize,
    /// Absolute clipped mass tolerated in this step.
    pub clip_budget: f64,
}

impl Default for StepControls {
    fn default() -> Self {
        StepControls {
            linear_tol: 1e-13,
            picard_iters: 1,
            clip_budget: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: FieldState,
    /// Mass removed by clipping negative undershoots.
    pub clipped: f64,
    /// `dt` times the largest upwind outflow rate; above 1 the explicit
    /// chemotaxis update is not positivity preserving.
    pub cfl_number: f64,
}

/// The system on a fixed grid with fixed constitutive functions.
#[derive(Debug, Clone, Copy)]
pub struct KsSolver<'a> {
    pub grid: &'a RadialGrid,
    pub kinetics: &'a dyn Kinetics,
    pub regularization: Option<Regularization>,
}

impl<'a> KsSolver<'a> {
    pub fn new(grid: &'a RadialGrid, kinetics: &'a dyn Kinetics) -> Self {
        KsSolver {
            grid,
            kinetics,
            regularization: None,
        }
    }

    pub fn regularized(mut self, reg: Option<Regularization>) -> Self {
        self.regularization = reg;
        self
    }

    fn truncate(&self, u: f64) -> f64 {
        match &self.regularization {
            Some(r) => r.cutoff(u),
            None => u,
        }
    }

    /// `S(G(u), v)/u`, the drift speed factor of the cell.
    fn speed_factor(&self, u: f64, v: f64) -> f64 {
        match &self.regularization {
            Some(r) if u > 0.0 && r.cutoff(u) != u => self.kinetics.sensitivity(r.cutoff(u), v) / u,
            _ => self.kinetics.sensitivity_ratio(u, v),
        }
    }

    /// Largest upwind outflow rate of the explicit chemotaxis update for
    /// the given face gradients of `v`.
    fn outflow_rate(&self, u: &[f64], v: &[f64], grad_v: &[f64]) -> f64 {
        let g = self.grid;
        (0..g.cells())
            .map(|k| {
                let out = g.areas()[k + 1] * grad_v[k + 1].max(0.0)
                    + g.areas()[k] * (-grad_v[k]).max(0.0);
                out * self.speed_factor(u[k], v[k]) / g.volumes()[k]
            })
            .fold(0.0, f64::max)
    }

    /// Largest `dt` for which the chemotaxis update at the current signal
    /// keeps `u` nonnegative.
    pub fn positivity_dt(&self, state: &FieldState) -> f64 {
        let gv = self
            .grid
            .face_gradient(&state.v)
            .expect("state matches grid");
        let rate = self.outflow_rate(&state.u, &state.v, &gv);
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }

    /// One semi-implicit step of size `dt`.
    pub fn step(
        &self,
        state: &FieldState,
        dt: f64,
        controls: &StepControls,
    ) -> Result<StepOutcome, StepError> {
        let g = self.grid;
        let n = g.cells();
        state.validate(g)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StepError::InvalidInput(format!("dt = {dt}")));
        }
        let vol = g.volumes();
        let trans = g.transmissibility();

        // v-step: implicit diffusion with the linear decay integrated
        // exactly over the step (exponential fitting of the -v term).
        let growth = dt.exp_m1();
        let mut a = Tridiagonal::zeros(n);
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            a.diag[k] = vol[k] * (1.0 + growth) + dt * (trans[k] + trans[k + 1]);
            a.lower[k] = -dt * trans[k];
            a.upper[k] = -dt * trans[k + 1];
            let production = self.kinetics.production(self.truncate(state.u[k]));
            rhs[k] = vol[k] * state.v[k] + growth * vol[k] * production;
        }
        let v_new = a.solve_refined(&rhs, controls.linear_tol, 3)?;

        // chemotactic face fluxes, upwinded in the drift direction
        let grad_v = g.face_gradient(&v_new).expect("sizes match");
        let mut drift = vec![0.0; n + 1];
        for j in 1..n {
            let c = grad_v[j];
            let up = if c > 0.0 { j - 1 } else { j };
            drift[j] = c * self
                .kinetics
                .sensitivity(self.truncate(state.u[up]), v_new[up]);
        }
        let cfl_number = dt * self.outflow_rate(&state.u, &v_new, &grad_v);

        let explicit: Vec<f64> = (0..n)
            .map(|k| {
                vol[k] * state.u[k]
                    - dt * (g.areas()[k + 1] * drift[k + 1] - g.areas()[k] * drift[k])
            })
            .collect();

        // u-step: implicit diffusion, D frozen at the previous iterate
        let mut iterate = state.u.clone();
        let sweeps = controls.picard_iters.max(1);
        for sweep in 0..sweeps {
            let d: Vec<f64> = (0..n)
                .map(|k| self.kinetics.diffusivity(iterate[k], v_new[k]))
                .collect();
            let mut a = Tridiagonal::zeros(n);
            for k in 0..n {
                let inner = if k > 0 {
                    trans[k] * harmonic_mean(d[k - 1], d[k])
                } else {
                    0.0
                };
                let outer = if k + 1 < n {
                    trans[k + 1] * harmonic_mean(d[k], d[k + 1])
                } else {
                    0.0
                };
                a.diag[k] = vol[k] + dt * (inner + outer);
                a.lower[k] = -dt * inner;
                a.upper[k] = -dt * outer;
            }
            let next = a.solve_refined(&explicit, controls.linear_tol, 3)?;
            let change = next
                .iter()
                .zip(&iterate)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let scale = next
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            iterate = next;
            if sweep > 0 && change <= controls.linear_tol * scale {
                break;
            }
        }

        let mut clipped = 0.0;
        for (k, x) in iterate.iter_mut().enumerate() {
            if *x < 0.0 {
                clipped += -*x * vol[k];
                *x = 0.0;
            }
        }
        if clipped > controls.clip_budget {
            return Err(StepError::PositivityViolation {
                clipped,
                budget: controls.clip_budget,
            });
        }
        let v_new: Vec<f64> = v_new.into_iter().map(|x| x.max(0.0)).collect();
        if iterate.iter().chain(&v_new).any(|x| !x.is_finite()) {
            return Err(StepError::NonFiniteState);
        }
        Ok(StepOutcome {
            state: FieldState {
                u: iterate,
                v: v_new,
                t: state.t + dt,
                step_count: state.step_count + 1,
            },
            clipped,
            cfl_number,
        })
    }

    /// Adaptive run; see [`run_observed`](Self::run_observed).
    pub fn run(
        &self,
        initial: &FieldState,
        config: &SolverConfig,
        monitors: &MonitorSpec,
    ) -> Result<RunReport, SolverError> {
        self.run_observed(initial, config, monitors, &mut |_| {})
    }

    /// Adaptive run from `initial` until blow-up is declared, `t_end` is
    /// reached, or the run fails. `observer` sees the initial state and
    /// every accepted state.
    pub fn run_observed(
        &self,
        initial: &FieldState,
        config: &SolverConfig,
        monitors: &MonitorSpec,
        observer: &mut dyn FnMut(&FieldState),
    ) -> Result<RunReport, SolverError> {
        config.validate()?;
        initial.validate(self.grid)?;
        let sup0 = initial.sup_u();
        if !(config.blowup_threshold > sup0) {
            return Err(SolverError::InvalidConfig(format!(
                "blow-up threshold {} does not exceed the initial sup-norm {sup0}",
                config.blowup_threshold
            )));
        }
        let mass0 = initial.mass(self.grid);
        let budget = config.positivity_budget * mass0;

        let mut rec = Recorder::new(self.grid, monitors, config, initial);
        observer(initial);

        let mut state = initial.clone();
        let mut dt = config.dt_init;
        let mut clipped_total = 0.0;
        let mut max_drift: f64 = 0.0;
        let mut rejected = 0u64;
        let mut dt_history = Vec::new();
        let mut sup_history = vec![sup0];
        let controls = |clip_budget| StepControls {
            linear_tol: config.linear_tol,
            picard_iters: config.picard_iters,
            clip_budget,
        };

        let (verdict, cause) = loop {
            if state.t >= config.t_end {
                break (Verdict::Completed, "reached t_end".to_string());
            }
            if state.step_count >= config.max_steps {
                break (Verdict::Failed, format!("step limit {}", config.max_steps));
            }
            let limit = config.cfl_safety * self.positivity_dt(&state);
            let remaining = config.t_end - state.t;
            dt = dt.min(config.dt_max).min(limit);
            let final_step = dt >= remaining;
            if final_step {
                dt = remaining;
            }
            if dt < config.dt_min && !final_step {
                break self.exhausted(&sup_history, dt);
            }
            let sup_old = state.sup_u();
            let outcome = self.step(&state, dt, &controls(budget - clipped_total));
            let rejection = match &outcome {
                Err(e) => Some(e.to_string()),
                Ok(o) if o.cfl_number > 1.0 => Some(format!("cfl {}", o.cfl_number)),
                Ok(o) if sup_old > 0.0 && o.state.sup_u() > 1.1 * sup_old => {
                    Some("sup-norm growth above 10%".into())
                }
                Ok(_) => None,
            };
            if let Some(reason) = rejection {
                rejected += 1;
                dt *= 0.5;
                if dt < config.dt_min {
                    let (v, c) = self.exhausted(&sup_history, dt);
                    break (v, format!("{c}; last rejection: {reason}"));
                }
                continue;
            }
            let outcome = outcome.expect("accepted step");
            clipped_total += outcome.clipped;
            state = outcome.state;
            dt_history.push(dt);
            let sup = state.sup_u();
            sup_history.push(sup);
            if mass0 > 0.0 {
                max_drift = max_drift.max((state.mass(self.grid) - mass0).abs() / mass0);
            }
            observer(&state);
            rec.after_step(&state, dt);
            if sup >= config.blowup_threshold {
                break (
                    Verdict::BlownUp,
                    format!("sup-norm {sup:e} reached threshold"),
                );
            }
            dt = if final_step { config.dt_init } else { dt * 1.1 };
        };

        let min_u = rec.min_u;
        let min_v = rec.min_v;
        let min_dt = rec.min_dt;
        let (series, snapshots) = rec.finish(&state, dt_history.last().copied().unwrap_or(0.0));
        Ok(RunReport {
            verdict,
            cause,
            t_final: state.t,
            series,
            snapshots,
            dt_history,
            stats: RunStats {
                accepted: state.step_count,
                rejected,
                initial_mass: mass0,
                final_mass: state.mass(self.grid),
                max_mass_drift: max_drift,
                clipped_mass: clipped_total,
                min_u,
                min_v,
                dt_min_used: min_dt,
            },
            final_state: state,
        })
    }

    /// Verdict when the step size cannot be reduced further.
    fn exhausted(&self, sup_history: &[f64], dt: f64) -> (Verdict, String) {
        let k = sup_history.len();
        let growing = k >= 2 && sup_history[k - 1] > sup_history[k.saturating_sub(11)];
        if growing {
            (
                Verdict::BlownUp,
                format!("dt {dt:e} below dt_min while the sup-norm grows"),
            )
        } else {
            (Verdict::Failed, format!("dt {dt:e} below dt_min"))
        }
    }

    /// Applies the given step sizes without adaptation, calling `observer`
    /// on the initial and every subsequent state.
    pub fn replay(
        &self,
        initial: &FieldState,
        dts: &[f64],
        controls: &StepControls,
        observer: &mut dyn FnMut(&FieldState),
    ) -> Result<FieldState, StepError> {
        let mut state = initial.clone();
        observer(&state);
        for &dt in dts {
            state = self.step(&state, dt, controls)?.state;
            observer(&state);
        }
        Ok(state)
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Fraction of the positivity-preserving step actually taken.
    pub cfl_safety: f64,
    pub blowup_threshold: f64,
    pub t_end: f64,
    pub linear_tol: f64,
    /// Time between series records.
    pub record_every: f64,
    /// Clipped-mass budget relative to the initial mass.
    pub positivity_budget: f64,
    pub picard_iters: usize,
    /// Snapshots are taken whenever the sup-norm passes another power of
    /// this factor times its initial value.
    pub snapshot_factor: f64,
    pub max_steps: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt_init: 1e-6,
            dt_min: 1e-16,
            dt_max: 1e-2,
            cfl_safety: 0.5,
            blowup_threshold: 1e10,
            t_end: 1.0,
            linear_tol: 1e-13,
            record_every: 1e-3,
            positivity_budget: 1e-8,
            picard_iters: 1,
            snapshot_factor: 10.0,
            max_steps: 2_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: String| Err(SolverError::InvalidConfig(s));
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_init && self.dt_init <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min < dt_init <= dt_max, got {} {} {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return bad(format!("cfl_safety {} outside (0, 1)", self.cfl_safety));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end {}", self.t_end));
        }
        if !(self.linear_tol > 0.0) {
            return bad("linear_tol must be positive".into());
        }
        if !(self.record_every > 0.0) {
            return bad("record_every must be positive".into());
        }
        if !(self.positivity_budget >= 0.0) {
            return bad("positivity_budget must be nonnegative".into());
        }
        if !(1..=5).contains(&self.picard_iters) {
            return bad(format!("picard_iters {} outside 1..=5", self.picard_iters));
        }
        if !(self.snapshot_factor > 1.0) {
            return bad("snapshot_factor must exceed 1".into());
        }
        Ok(())
    }
}

/// Which weighted monitors to record.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSpec {
    pub alphas: Vec<f64>,
    pub theta: f64,
    pub beta: f64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        MonitorSpec {
            alphas: vec![],
            theta: 12.0,
            beta: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    BlownUp,
    Completed,
    Failed,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::BlownUp => "BlownUp",
            Verdict::Completed => "Completed",
            Verdict::Failed => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    pub step: u64,
    pub dt: f64,
    pub sup_u: f64,
    pub mass: f64,
    /// `sup r^α u` for each monitored `α`.
    pub weighted_sup: Vec<f64>,
    pub grad_norm: f64,
    pub v_grad_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: u64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub accepted: u64,
    pub rejected: u64,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest relative deviation of the reduced mass from its initial value.
    pub max_mass_drift: f64,
    pub clipped_mass: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub dt_min_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub verdict: Verdict,
    pub cause: String,
    pub t_final: f64,
    pub series: Vec<SeriesPoint>,
    pub snapshots: Vec<Snapshot>,
    /// Every accepted step size, in order.
    pub dt_history: Vec<f64>,
    pub stats: RunStats,
    pub final_state: FieldState,
}

struct Recorder<'g> {
    grid: &'g RadialGrid,
    monitors: MonitorSpec,
    record_every: f64,
    next_record: f64,
    snapshot_factor: f64,
    next_snapshot_sup: f64,
    series: Vec<SeriesPoint>,
    snapshots: Vec<Snapshot>,
    min_u: f64,
    min_v: f64,
    min_dt: f64,
}

impl<'g> Recorder<'g> {
    fn new(
        grid: &'g RadialGrid,
        monitors: &MonitorSpec,
        config: &SolverConfig,
        initial: &FieldState,
    ) -> Self {
        let sup0 = initial.sup_u();
        let mut rec = Recorder {
            grid,
            monitors: monitors.clone(),
            record_every: config.record_every,
            next_record: initial.t + config.record_every,
            snapshot_factor: config.snapshot_factor,
            next_snapshot_sup: if sup0 > 0.0 {
                sup0 * config.snapshot_factor
            } else {
                f64::INFINITY
            },
            series: Vec::new(),
            snapshots: Vec::new(),
            min_u: f64::INFINITY,
            min_v: f64::INFINITY,
            min_dt: f64::INFINITY,
        };
        rec.record(initial, 0.0);
        rec.snapshot(initial);
        rec
    }

    fn point(&self, state: &FieldState, dt: f64) -> SeriesPoint {
        let g = self.grid;
        SeriesPoint {
            t: state.t,
            step: state.step_count,
            dt,
            sup_u: state.sup_u(),
            mass: state.mass(g),
            weighted_sup: self
                .monitors
                .alphas
                .iter()
                .map(|&a| profile::weighted_sup(g, &state.u, a))
                .collect(),
            grad_norm: profile::weighted_gradient_norm(
                g,
                &state.v,
                self.monitors.theta,
                self.monitors.beta,
            )
            .unwrap_or(f64::NAN),
            v_grad_sup: profile::v_grad_sup(g, &state.v, self.monitors.beta),
        }
    }

    fn record(&mut self, state: &FieldState, dt: f64) {
        let p = self.point(state, dt);
        self.series.push(p);
    }

    fn snapshot(&mut self, state: &FieldState) {
        self.snapshots.push(Snapshot {
            t: state.t,
            step: state.step_count,
            u: state.u.clone(),
            v: state.v.clone(),
        });
    }

    fn after_step(&mut self, state: &FieldState, dt: f64) {
        self.min_dt = self.min_dt.min(dt);
        for &x in &state.u {
            self.min_u = self.min_u.min(x);
        }
        for &x in &state.v {
            self.min_v = self.min_v.min(x);
        }
        if state.t >= self.next_record {
            self.record(state, dt);
            while self.next_record <= state.t {
                self.next_record += self.record_every;
            }
        }
        let sup = state.sup_u();
        if sup >= self.next_snapshot_sup {
            self.snapshot(state);
            while self.next_snapshot_sup <= sup {
                self.next_snapshot_sup *= self.snapshot_factor;
            }
        }
    }

    fn finish(mut self, state: &FieldState, dt: f64) -> (Vec<SeriesPoint>, Vec<Snapshot>) {
        if self.series.last().map(|p| p.t) != Some(state.t) {
            self.record(state, dt);
        }
        if self.snapshots.last().map(|s| s.t) != Some(state.t) {
            self.snapshot(state);
        }
        (self.series, self.snapshots)
    }
}

/// Brackets the blow-up time of a `BlownUp` run: `t_low` is the final time
/// and `t_high` adds twice the sum of the geometric continuation of the
/// trailing non-increasing run of accepted step sizes (or, when that run
/// does not shrink, its length times the last step).
pub fn estimate_blowup_time(report: &RunReport) -> Result<(f64, f64), SolverError> {
    if report.verdict != Verdict::BlownUp {
        return Err(SolverError::WrongVerdict(report.verdict.as_str().into()));
    }
    let t_low = report.t_final;
    let tail = cascade_tail(&report.dt_history);
    Ok((t_low, t_low + 2.0 * tail))
}

fn cascade_tail(dts: &[f64]) -> f64 {
    let Some(&last) = dts.last() else {
        return f64::MIN_POSITIVE;
    };
    let mut start = dts.len() - 1;
    while start > 0 && dts[start] <= dts[start - 1] {
        start -= 1;
    }
    let len = dts.len() - start;
    let tail = if len >= 2 {
        let ratio = (last / dts[start]).powf(1.0 / (len - 1) as f64);
        if ratio < 1.0 - 1e-12 {
            last * ratio / (1.0 - ratio)
        } else {
            len as f64 * last
        }
    } else {
        last
    };
    tail.max(last).max(f64::MIN_POSITIVE)
}

/// Reduced `L²` norm `(Σ ω_k φ_k²)^{1/2}`.
pub fn l2_norm(grid: &RadialGrid, field: &[f64]) -> f64 {
    kahan_sum(grid.volumes().iter().zip(field).map(|(w, x)| w * x * x)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{Constant, Prototype};

    fn grid(n: usize) -> RadialGrid {
        RadialGrid::graded(3, 1.0, n, 1.0).unwrap()
    }

    #[test]
    fn decoupled_constant_data_is_exact() {
        let g = grid(128);
        let kin = Constant {
            diffusivity: 1.0,
            chi: 0.0,
        };
        let solver = KsSolver::new(&g, &kin);
        let (c, vbar) = (2.0, 0.5);
        let mut s = FieldState::new(vec![c; 128], vec![vbar; 128]);
        let controls = StepControls::default();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            s = solver.step(&s, 1e-4, &controls).unwrap().state;
            let exact = c + (vbar - c) * (-s.t).exp();
            for (&u, &v) in s.u.iter().zip(&s.v) {
                assert!((u - c).abs() < 1e-12);
                worst = worst.max((v - exact).abs());
            }
        }
        assert!((s.t - 1.0).abs() < 1e-10);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn zero_state_is_fixed() {
        let g = grid(64);
        let kin = Prototype { m: 1.0, q: 1.0 };
        let solver = KsSolver::new(&g, &kin);
        let mut s = FieldState::new(vec![0.0; 64], vec![0.0; 64]);
        for _ in 0..100 {
            s = solver
                .step(&s, 1e-3, &StepControls::default())
                .unwrap()
                .state;
        }
        assert!(s.u.iter().chain(&s.v).all(|&x| x == 0.0));
    }

    #[test]
    fn heat_equation_conserves_and_equilibrates() {
        let g = RadialGrid::graded(3, 1.0, 64, 1.02).unwrap();
        let kin = Constant {
            diffusivity: 1.0,
            chi: 0.0,
        };
        let solver = KsSolver::new(&g, &kin);
        let mut s = gaussian_bump(&g, 1.0, 0.2, 0.0);
        let m0 = s.mass(&g);
        let mean = m0 / g.ball_measure();
        let controls = StepControls::default();
        for _ in 0..10_000 {
            let out = solver.step(&s, 1e-3, &controls).unwrap();
            // discrete maximum principle
            assert!(out.state.sup_u() <= s.sup_u() * (1.0 + 1e-14));
            let min_old = s.u.iter().cloned().fold(f64::INFINITY, f64::min);
            let min_new = out.state.u.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min_new >= min_old * (1.0 - 1e-14));
            s = out.state;
        }
        assert!(((s.mass(&g) - m0) / m0).abs() < 1e-12);
        for &u in &s.u {
            assert!((u - mean).abs() < 1e-6 * mean);
        }
    }

    #[test]
    fn chemotaxis_step_is_conservative_and_positive() {
        let g = RadialGrid::graded(3, 1.0, 128, 1.01).unwrap();
        let kin = Prototype { m: 1.0, q: 1.0 };
        let solver = KsSolver::new(&g, &kin);
        let mut s = gaussian_bump(&g, 5.0, 0.2, 0.0);
        let m0 = s.mass(&g);
        for _ in 0..200 {
            let dt = 0.5 * solver.positivity_dt(&s).min(1e-3);
            let out = solver.step(&s, dt, &StepControls::default()).unwrap();
            assert_eq!(out.clipped, 0.0);
            s = out.state;
            assert!(s.u.iter().chain(&s.v).all(|&x| x >= 0.0));
        }
        assert!(((s.mass(&g) - m0) / m0).abs() < 1e-13);
    }

    #[test]
    fn step_rejects_bad_input() {
        let g = grid(16);
        let kin = Constant {
            diffusivity: 1.0,
            chi: 1.0,
        };
        let solver = KsSolver::new(&g, &kin);
        let s = FieldState::new(vec![1.0; 16], vec![0.0; 16]);
        assert!(solver.step(&s, 0.0, &StepControls::default()).is_err());
        let bad = FieldState::new(vec![-1.0; 16], vec![0.0; 16]);
        assert!(solver.step(&bad, 1e-3, &StepControls::default()).is_err());
        let short = FieldState::new(vec![1.0; 3], vec![0.0; 3]);
        assert!(solver.step(&short, 1e-3, &StepControls::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let c = SolverConfig {
            dt_min: 1.0,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            cfl_safety: 1.0,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            picard_iters: 6,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn synthetic_report(verdict: Verdict, t_final: f64, dts: Vec<f64>) -> RunReport {
        let state = FieldState::new(vec![], vec![]);
        RunReport {
            verdict,
            cause: String::new(),
            t_final,
            series: vec![],
            snapshots: vec![],
            dt_history: dts,
            stats: RunStats {
                accepted: 0,
                rejected: 0,
                initial_mass: 0.0,
                final_mass: 0.0,
                max_mass_drift: 0.0,
                clipped_mass: 0.0,
                min_u: 0.0,
                min_v: 0.0,
                dt_min_used: 0.0,
            },
            final_state: state,
        }
    }

    #[test]
    fn blowup_bracket_synthetic_singularity() {
        // ||u|| = 1/(T - t), T = 1, steps limited to 10% growth
        let big_t = 1.0;
        let mut t = 0.0;
        let mut dts = Vec::new();
        while 1.0 / (big_t - t) < 1e10 {
            let dt = 0.1 * (big_t - t) / 1.1;
            dts.push(dt);
            t += dt;
        }
        let r = synthetic_report(Verdict::BlownUp, t, dts);
        let (lo, hi) = estimate_blowup_time(&r).unwrap();
        assert!(lo < hi);
        assert!(lo <= big_t && big_t <= hi, "{lo} {hi}");
        assert!(hi - lo < 1e-3);
    }

    #[test]
    fn blowup_bracket_wrong_verdict_and_flat_cascade() {
        let r = synthetic_report(Verdict::Completed, 1.0, vec![1e-3]);
        assert!(matches!(
            estimate_blowup_time(&r),
            Err(SolverError::WrongVerdict(_))
        ));
        let k = 17;
        let r = synthetic_report(Verdict::BlownUp, 0.5, vec![1e-12; k]);
        let (lo, hi) = estimate_blowup_time(&r).unwrap();
        assert!(hi - lo >= k as f64 * 1e-12);
    }
}
