//! Experiment orchestration behind the `kslab` subcommands.
//!
//! Every command has a pure form returning a [`KvRecord`] and the data it
//! summarizes, and a `cmd_*` form that also writes the output files.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::exponents::{derive_exponents, ExponentError};
use crate::grid::RadialGrid;
use crate::kinetics::{Kinetics, Prototype, Regularization, Tabulated};
use crate::profile::{
    check_profile_bounds, extract_profile, fit_decay_exponent, BoundCheck, Profile, ProfileError,
    ProfileFit, ProfileOptions,
};
use crate::real::{ExtReal, Real};
use crate::report::{csv, fmt_num, KvRecord};
use crate::scenario::{
    parse_scenario, validate, KineticsSpec, Mode, Scenario, ScenarioError, TwinTarget,
    ValidationError,
};
use crate::solver::{
    estimate_blowup_time, gaussian_bump, l2_norm, FieldState, KsSolver, RunReport, SolverError,
    StepControls, Verdict,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_ADMISSIBLE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Scenario(ScenarioError::Parse(_)) => EXIT_PARSE,
            RunnerError::Scenario(ScenarioError::Validation(_)) => EXIT_VALIDATION,
            RunnerError::Solver(_) => EXIT_SOLVER,
            RunnerError::Io { .. } => EXIT_IO,
        }
    }

    fn validation(msg: impl Into<String>) -> Self {
        RunnerError::Scenario(ScenarioError::Validation(ValidationError(msg.into())))
    }
}

impl From<ValidationError> for RunnerError {
    fn from(e: ValidationError) -> Self {
        RunnerError::Scenario(e.into())
    }
}

impl From<SolverError> for RunnerError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidConfig(msg) => RunnerError::validation(msg),
            other => RunnerError::Solver(other.to_string()),
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunnerError {
    let context = context.into();
    move |source| RunnerError::Io { context, source }
}

/// Reads and parses a scenario file. A relative `kinetics.table` path is
/// resolved against the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let mut s = parse_scenario(&text)?;
    if let KineticsSpec::Table(table) = &s.kinetics {
        if table.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            s.kinetics = KineticsSpec::Table(base.join(table));
        }
    }
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), RunnerError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

pub fn make_grid(s: &Scenario) -> Result<RadialGrid, RunnerError> {
    RadialGrid::graded(s.params.n, s.params.radius, s.grid.cells, s.grid.grading)
        .map_err(|e| RunnerError::validation(e.to_string()))
}

pub fn make_kinetics(s: &Scenario) -> Result<Box<dyn Kinetics>, RunnerError> {
    match &s.kinetics {
        KineticsSpec::Prototype => Ok(Box::new(Prototype {
            m: s.params.m.to_f64(),
            q: s.params.q.to_f64(),
        })),
        KineticsSpec::Table(path) => {
            let text =
                fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
            let table = Tabulated::from_csv(&text)
                .map_err(|e| RunnerError::validation(format!("{}: {e}", path.display())))?;
            Ok(Box::new(table))
        }
    }
}

pub fn initial_state(s: &Scenario, grid: &RadialGrid) -> FieldState {
    gaussian_bump(grid, s.initial.mass, s.initial.width, s.initial.v0)
}

/// Smallest diffusivity over `u ∈ {0} ∪ [1e-6, 1e8]` (log-spaced) and a few
/// signal levels.
pub fn sampled_diffusivity_floor(kin: &dyn Kinetics) -> f64 {
    let mut floor = f64::INFINITY;
    for i in 0..=1400 {
        let u = if i == 0 {
            0.0
        } else {
            1e-6 * 10f64.powf((i - 1) as f64 / 100.0)
        };
        for v in [0.0, 1.0, 10.0] {
            floor = floor.min(kin.diffusivity(u, v));
        }
    }
    floor
}

// ---------------------------------------------------------------- exponents

pub struct ExponentsOutcome {
    pub record: KvRecord,
    pub admissible: bool,
}

fn ext(x: ExtReal) -> String {
    x.to_string()
}

fn triple(xs: &[f64; 3]) -> String {
    xs.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(",")
}

fn put_result(r: &mut KvRecord, key: &str, v: &Result<f64, ExponentError>) {
    match v {
        Ok(x) => r.num(key, *x),
        Err(e) => r.put(key, "undefined").put(format!("{key}.error"), e),
    };
}

/// Every derived exponent as `key=value` lines; admissible means the
/// Keller–Segel window holds.
pub fn cmd_exponents(s: &Scenario) -> ExponentsOutcome {
    let d = derive_exponents(&s.params, &s.exponents);
    let mut r = KvRecord::new();
    put_result(&mut r, "critical_alpha", &d.critical_alpha);
    r.put("lower_bound_alpha", ext(d.lower_bound_alpha))
        .put("admissible_ks", d.admissible_ks)
        .put("admissible_scalar", d.admissible_scalar);
    put_result(&mut r, "scalar_alpha_threshold", &d.scalar_threshold);
    match d.alpha {
        Some(a) => r.num("alpha", a),
        None => r.put("alpha", "undefined"),
    };
    r.num("beta_used", d.beta_used);
    match &d.iteration {
        Ok(it) => {
            r.put("mu", triple(&it.mu))
                .put("gamma", triple(&it.gamma))
                .put("kappa", triple(&it.kappa))
                .put(
                    "lambda",
                    it.lambda
                        .iter()
                        .map(|&l| ext(l))
                        .collect::<Vec<_>>()
                        .join(","),
                )
                .put(
                    "sobolev_ratio",
                    (0..3)
                        .map(|i| it.sobolev_ratio(i).map_or("inf".into(), fmt_num))
                        .collect::<Vec<_>>()
                        .join(","),
                )
                .put(
                    "sobolev_exponent",
                    ext(crate::exponents::sobolev_exponent(s.params.n)),
                );
        }
        Err(e) => {
            r.put("iteration", "undefined").put("iteration.error", e);
        }
    }
    match &d.moser {
        Ok(ms) => {
            r.num("moser.s", ms.s)
                .put("moser.s0", ext(ms.s0))
                .num("moser.p0", ms.p0)
                .nums("moser.p_seq", &ms.p_seq)
                .num("moser.a", ms.a)
                .num("moser.nu", ms.nu);
        }
        Err(e) => {
            r.put("moser", "undefined").put("moser.error", e);
        }
    }
    ExponentsOutcome {
        admissible: d.admissible_ks,
        record: r,
    }
}

// ---------------------------------------------------------------- simulate

/// Profile analysis of a blown-up run.
#[derive(Debug, Clone)]
pub struct ProfileOutcome {
    /// `Ok` when the Cauchy check passed.
    pub profile: Result<Profile, ProfileError>,
    /// Field used for the fit: the extracted profile, or the last snapshot
    /// when the check failed.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub fits: Vec<Result<ProfileFit, ProfileError>>,
    pub bounds: Vec<Option<BoundCheck>>,
}

pub struct Simulation {
    pub grid: RadialGrid,
    pub report: RunReport,
    pub bracket: Option<(f64, f64)>,
    pub profile: Option<ProfileOutcome>,
    pub agreement: Option<Agreement>,
    pub record: KvRecord,
}

/// Plain or regularized run with monitors and, on blow-up, the profile.
pub fn simulate(s: &Scenario) -> Result<Simulation, RunnerError> {
    validate(s)?;
    let grid = make_grid(s)?;
    let kin = make_kinetics(s)?;
    let init = initial_state(s, &grid);
    let (report, agreement) = match s.mode {
        Mode::Regularized { epsilon } => {
            let a = regularized_agreement(s, &grid, kin.as_ref(), &init, epsilon)?;
            (a.regularized.clone(), Some(a))
        }
        _ => {
            let solver = KsSolver::new(&grid, kin.as_ref());
            (solver.run(&init, &s.solver, &s.monitors())?, None)
        }
    };
    let bracket = estimate_blowup_time(&report).ok();
    let profile = (report.verdict == Verdict::BlownUp).then(|| analyze_profile(s, &grid, &report));

    let mut r = KvRecord::new();
    r.nest("scenario", &s.echo());
    r.put("kinetics.describe", kin.describe());
    let floor = sampled_diffusivity_floor(kin.as_ref());
    let nondegenerate = floor >= s.params.eta;
    r.num("hypotheses.diffusivity_floor", floor)
        .put("hypotheses.nondegenerate", nondegenerate);
    if !nondegenerate {
        r.put(
            "hypotheses.note",
            "D >= eta fails on the sampled range; the profile existence hypotheses are not all met",
        );
    }
    r.put("mesh.cells", grid.cells())
        .num("mesh.grading", grid.grading())
        .num("mesh.h_min", grid.width(0))
        .num("mesh.h_max", grid.width(grid.cells() - 1));
    run_record(&mut r, "run", &report);
    if let Some((lo, hi)) = bracket {
        r.num("blowup.t_low", lo).num("blowup.t_high", hi);
    }
    monitor_record(&mut r, s, &report);
    if let Some(p) = &profile {
        profile_record(&mut r, s, p);
    }
    if let Some(a) = &agreement {
        r.nest("agreement", &a.record());
    }
    Ok(Simulation {
        grid,
        report,
        bracket,
        profile,
        agreement,
        record: r,
    })
}

fn run_record(r: &mut KvRecord, prefix: &str, rep: &RunReport) {
    let st = &rep.stats;
    r.put(format!("{prefix}.verdict"), rep.verdict.as_str())
        .put(format!("{prefix}.cause"), &rep.cause)
        .num(format!("{prefix}.t_final"), rep.t_final)
        .num(format!("{prefix}.sup_final"), rep.final_state.sup_u())
        .put(format!("{prefix}.steps_accepted"), st.accepted)
        .put(format!("{prefix}.steps_rejected"), st.rejected)
        .num(format!("{prefix}.mass_initial"), st.initial_mass)
        .num(format!("{prefix}.mass_final"), st.final_mass)
        .num(format!("{prefix}.mass_drift_max"), st.max_mass_drift)
        .num(format!("{prefix}.clipped_mass"), st.clipped_mass)
        .num(format!("{prefix}.min_u"), st.min_u)
        .num(format!("{prefix}.min_v"), st.min_v)
        .num(format!("{prefix}.dt_min_used"), st.dt_min_used)
        .put(format!("{prefix}.series_points"), rep.series.len())
        .put(format!("{prefix}.snapshots"), rep.snapshots.len());
}

/// Final value over median of a series.
pub fn final_over_median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    xs[k - 1] / median
}

fn monitor_record(r: &mut KvRecord, s: &Scenario, rep: &RunReport) {
    let sups: Vec<f64> = rep.series.iter().map(|p| p.sup_u).collect();
    r.num("monitors.sup_ratio", final_over_median(&sups));
    for (i, a) in s.analysis.alphas.iter().enumerate() {
        let w: Vec<f64> = rep.series.iter().map(|p| p.weighted_sup[i]).collect();
        let key = format!("monitors.weighted_sup.{}", fmt_num(*a));
        r.num(format!("{key}.max"), w.iter().cloned().fold(0.0, f64::max))
            .num(format!("{key}.final"), *w.last().unwrap_or(&f64::NAN))
            .num(format!("{key}.ratio"), final_over_median(&w));
    }
    let k_f = rep.series.iter().map(|p| p.grad_norm).fold(0.0, f64::max);
    let vg = rep.series.iter().map(|p| p.v_grad_sup).fold(0.0, f64::max);
    r.num("monitors.grad_norm_max", k_f)
        .num("monitors.v_grad_sup_max", vg);
    for (k, sn) in rep.snapshots.iter().enumerate() {
        r.num(format!("snapshot.{k}.t"), sn.t)
            .put(format!("snapshot.{k}.step"), sn.step);
    }
}

fn analyze_profile(s: &Scenario, grid: &RadialGrid, rep: &RunReport) -> ProfileOutcome {
    let opts = ProfileOptions {
        r_cut: s.analysis.r_cut,
        profile_tol: s.analysis.profile_tol,
    };
    let profile = extract_profile(grid, rep, &opts);
    let last = rep.snapshots.last().expect("runs keep a final snapshot");
    let (u, v) = match &profile {
        Ok(p) => (p.u.clone(), p.v.clone()),
        Err(_) => (last.u.clone(), last.v.clone()),
    };
    let alphas = if s.analysis.alphas.is_empty() {
        vec![0.0]
    } else {
        s.analysis.alphas.clone()
    };
    let fits: Vec<_> = alphas
        .iter()
        .map(|&a| fit_decay_exponent(grid, &u, s.analysis.annulus, a))
        .collect();
    let bounds = fits
        .iter()
        .map(|f| {
            f.as_ref()
                .ok()
                .map(|f| check_profile_bounds(f, &s.params, s.analysis.margin))
        })
        .collect();
    ProfileOutcome {
        profile,
        u,
        v,
        fits,
        bounds,
    }
}

pub fn fit_record(p: &ProfileOutcome) -> KvRecord {
    let mut r = KvRecord::new();
    match &p.profile {
        Ok(pr) => {
            r.put("cauchy", true)
                .num("t_profile", pr.t_profile)
                .num("distance.values", pr.distance.values)
                .num("distance.first", pr.distance.first)
                .num("distance.second", pr.distance.second);
        }
        Err(e) => {
            r.put("cauchy", false).put("cauchy.error", e);
        }
    }
    for (fit, bound) in p.fits.iter().zip(&p.bounds) {
        match fit {
            Ok(f) => {
                let k = format!("alpha.{}", fmt_num(f.alpha));
                r.nums(format!("{k}.annulus"), &[f.annulus.0, f.annulus.1])
                    .num(format!("{k}.slope"), f.slope)
                    .num(format!("{k}.intercept"), f.intercept)
                    .num(format!("{k}.residual"), f.residual)
                    .num(format!("{k}.c_alpha"), f.c_alpha)
                    .put(format!("{k}.cells"), f.cells);
                if let Some(b) = bound {
                    r.put(format!("{k}.critical_alpha"), ext(b.critical_alpha))
                        .put(format!("{k}.lower_bound_alpha"), ext(b.lower_bound_alpha))
                        .num(format!("{k}.margin"), b.margin)
                        .put(format!("{k}.upper_ok"), b.upper_ok)
                        .put(format!("{k}.lower_ok"), b.lower_ok);
                }
            }
            Err(e) => {
                r.put("fit.error", e);
            }
        }
    }
    r
}

fn profile_record(r: &mut KvRecord, _s: &Scenario, p: &ProfileOutcome) {
    r.nest("profile", &fit_record(p));
}

pub fn series_csv(s: &Scenario, rep: &RunReport) -> String {
    let mut header: Vec<String> = ["t", "step", "dt", "sup_u", "mass"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    for a in &s.analysis.alphas {
        header.push(format!("weighted_sup_{}", fmt_num(*a)));
    }
    header.push("grad_norm".into());
    header.push("v_grad_sup".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv(
        &refs,
        rep.series.iter().map(|p| {
            let mut row = vec![p.t, p.step as f64, p.dt, p.sup_u, p.mass];
            row.extend(&p.weighted_sup);
            row.push(p.grad_norm);
            row.push(p.v_grad_sup);
            row
        }),
    )
}

fn field_csv(header: &[&str], grid: &RadialGrid, u: &[f64], v: &[f64]) -> String {
    csv(
        header,
        (0..grid.cells()).map(|k| vec![grid.centers()[k], u[k], v[k]]),
    )
}

/// Runs [`simulate`] and writes `report.txt`, `series.csv`,
/// `snapshots/snap_XXX.csv` and, after blow-up, `profile.csv` and
/// `fit.txt` into `out`.
pub fn cmd_simulate(s: &Scenario, out: &Path) -> Result<Simulation, RunnerError> {
    let sim = simulate(s)?;
    write_file(&out.join("report.txt"), &sim.record.render())?;
    write_file(&out.join("series.csv"), &series_csv(s, &sim.report))?;
    for (k, sn) in sim.report.snapshots.iter().enumerate() {
        write_file(
            &out.join("snapshots").join(format!("snap_{k:03}.csv")),
            &field_csv(&["r", "u", "v"], &sim.grid, &sn.u, &sn.v),
        )?;
    }
    if let Some(p) = &sim.profile {
        write_file(
            &out.join("profile.csv"),
            &field_csv(&["r", "U", "V"], &sim.grid, &p.u, &p.v),
        )?;
        write_file(&out.join("fit.txt"), &fit_record(p).render())?;
    }
    if let Some(a) = &sim.agreement {
        write_file(&out.join("plain_series.csv"), &series_csv(s, &a.plain))?;
    }
    Ok(sim)
}

// ---------------------------------------------------------------- agreement

#[derive(Debug, Clone)]
pub struct Agreement {
    pub epsilon: f64,
    /// Largest sup-norm of the plain run.
    pub plain_max_sup: f64,
    /// First accepted time at which the regularized `u` exceeds `1/ε`.
    pub t_epsilon: Option<f64>,
    /// End of the comparison window.
    pub t_prime: f64,
    pub steps_compared: usize,
    /// Largest `max(‖Δu‖∞, ‖Δv‖∞)` over the window.
    pub max_deviation: f64,
    pub plain: RunReport,
    pub regularized: RunReport,
}

impl Agreement {
    pub fn record(&self) -> KvRecord {
        let mut r = KvRecord::new();
        r.num("epsilon", self.epsilon)
            .num("plain_max_sup", self.plain_max_sup)
            .put(
                "t_epsilon",
                self.t_epsilon.map_or("none".to_string(), fmt_num),
            )
            .num("t_prime", self.t_prime)
            .put("steps_compared", self.steps_compared)
            .num("max_deviation", self.max_deviation)
            .put("plain_verdict", self.plain.verdict.as_str())
            .num("plain_t_final", self.plain.t_final);
        r
    }
}

/// Runs the plain system and its `G_ε`-truncated version from the same
/// data and compares them step by step while `u ≤ 1/ε` and both runs are
/// at the same time. Without an explicit `ε`, `1/ε` is twice the plain
/// run's largest sup-norm.
pub fn regularized_agreement(
    s: &Scenario,
    grid: &RadialGrid,
    kin: &dyn Kinetics,
    init: &FieldState,
    epsilon: Option<f64>,
) -> Result<Agreement, RunnerError> {
    let monitors = s.monitors();
    let mut plain_states: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut max_sup: f64 = 0.0;
    let plain = KsSolver::new(grid, kin).run_observed(init, &s.solver, &monitors, &mut |st| {
        max_sup = max_sup.max(st.sup_u());
        plain_states.push((st.t, st.u.clone(), st.v.clone()));
    })?;
    let eps = match epsilon {
        Some(e) => e,
        None => (0.5 / max_sup.max(1.0)).min(0.5),
    };
    let reg = Regularization::new(eps).map_err(RunnerError::validation)?;
    let cap = 1.0 / eps;

    let mut index = 0usize;
    let mut deviation: f64 = 0.0;
    let mut t_epsilon = None;
    let mut t_prime = 0.0;
    let mut in_window = true;
    let regularized = KsSolver::new(grid, kin)
        .regularized(Some(reg))
        .run_observed(init, &s.solver, &monitors, &mut |st| {
            if t_epsilon.is_none() && st.sup_u() > cap {
                t_epsilon = Some(st.t);
                in_window = false;
            }
            if !in_window {
                return;
            }
            match plain_states.get(index) {
                Some((t, u, v)) if *t == st.t => {
                    let du = u.iter().zip(&st.u).map(|(a, b)| (a - b).abs());
                    let dv = v.iter().zip(&st.v).map(|(a, b)| (a - b).abs());
                    deviation = du.chain(dv).fold(deviation, f64::max);
                    t_prime = st.t;
                    index += 1;
                }
                _ => in_window = false,
            }
        })?;
    Ok(Agreement {
        epsilon: eps,
        plain_max_sup: max_sup,
        t_epsilon,
        t_prime,
        steps_compared: index,
        max_deviation: deviation,
        plain,
        regularized,
    })
}

// ---------------------------------------------------------------- twin

#[derive(Debug, Clone)]
pub struct TwinOutcome {
    pub delta: f64,
    pub target: TwinTarget,
    pub base: RunReport,
    /// `(t, ‖Δu‖ for δ, ‖Δu‖ for δ/2, ‖Δv‖ for δ)` at every step.
    pub series: Vec<[f64; 4]>,
    /// Least-squares slope of `ln(‖Δu‖/δ)` against `t`.
    pub rate: Option<f64>,
    pub rate_half: Option<f64>,
    /// Smallest `K` with `‖Δu(t)‖ ≤ K δ e^{Ĉt}` on the recorded times.
    pub envelope: Option<f64>,
    /// Range of `‖Δu_{δ/2}‖/‖Δu_δ‖` over recorded times with `t > 0`.
    pub halving: Option<(f64, f64)>,
    pub max_difference: f64,
    pub record: KvRecord,
}

fn bump_direction(grid: &RadialGrid, width: f64) -> Vec<f64> {
    let shape: Vec<f64> = grid
        .centers()
        .iter()
        .map(|r| (-(r / width).powi(2)).exp())
        .collect();
    let norm = l2_norm(grid, &shape);
    shape.iter().map(|x| x / norm).collect()
}

fn perturbed(init: &FieldState, dir: &[f64], delta: f64, target: TwinTarget) -> FieldState {
    let mut s = init.clone();
    let field = match target {
        TwinTarget::U => &mut s.u,
        TwinTarget::V => &mut s.v,
    };
    for (x, d) in field.iter_mut().zip(dir) {
        *x += delta * d;
    }
    s
}

/// Least-squares slope of `ln(d/δ)` against `t` over points with `t > 0`
/// and `d > 0`.
pub fn growth_rate(points: &[(f64, f64)], delta: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, d)| *t > 0.0 && *d > 0.0)
        .map(|(t, d)| (*t, (d / delta).ln()))
        .collect();
    if pts.len() < 2 || !(delta > 0.0) {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (stt > 0.0).then(|| sty / stt)
}

/// Base run plus runs perturbed by `δ` and `δ/2` along a normalized
/// positive bump, all on the base run's accepted step sequence.
pub fn twin(s: &Scenario) -> Result<TwinOutcome, RunnerError> {
    validate(s)?;
    let (delta, target) = match s.mode {
        Mode::Twin { delta, target } => (delta, target),
        _ => (1e-6, TwinTarget::U),
    };
    let grid = make_grid(s)?;
    let kin = make_kinetics(s)?;
    let floor = sampled_diffusivity_floor(kin.as_ref());
    if !(floor >= s.params.eta) {
        return Err(RunnerError::validation(format!(
            "twin runs need D >= eta = {}; sampled diffusivity floor is {}",
            fmt_num(s.params.eta),
            fmt_num(floor)
        )));
    }
    let init = initial_state(s, &grid);
    let solver = KsSolver::new(&grid, kin.as_ref());
    let base = solver.run(&init, &s.solver, &s.monitors())?;
    if base.verdict == Verdict::Failed {
        return Err(RunnerError::Solver(format!(
            "base run failed: {}",
            base.cause
        )));
    }

    let dir = bump_direction(&grid, s.initial.width);
    let mut a = init.clone();
    let mut b = perturbed(&init, &dir, delta, target);
    let mut c = perturbed(&init, &dir, 0.5 * delta, target);
    let controls = StepControls {
        linear_tol: s.solver.linear_tol,
        picard_iters: s.solver.picard_iters,
        clip_budget: f64::INFINITY,
    };
    let diff = |x: &[f64], y: &[f64]| {
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        l2_norm(&grid, &d)
    };
    let mut series = vec![[0.0, diff(&b.u, &a.u), diff(&c.u, &a.u), diff(&b.v, &a.v)]];
    for &dt in &base.dt_history {
        let step = |st: &FieldState| {
            solver
                .step(st, dt, &controls)
                .map(|o| o.state)
                .map_err(|e| RunnerError::Solver(format!("twin replay at t={}: {e}", st.t)))
        };
        a = step(&a)?;
        b = step(&b)?;
        c = step(&c)?;
        series.push([a.t, diff(&b.u, &a.u), diff(&c.u, &a.u), diff(&b.v, &a.v)]);
    }

    let full: Vec<(f64, f64)> = series.iter().map(|p| (p[0], p[1])).collect();
    let half: Vec<(f64, f64)> = series.iter().map(|p| (p[0], p[2])).collect();
    let rate = growth_rate(&full, delta);
    let rate_half = growth_rate(&half, 0.5 * delta);
    let envelope = rate.map(|c| {
        series
            .iter()
            .map(|p| p[1] / (delta * (c * p[0]).exp()))
            .fold(0.0, f64::max)
    });
    let ratios: Vec<f64> = series
        .iter()
        .filter(|p| p[0] > 0.0 && p[1] > 0.0)
        .map(|p| p[2] / p[1])
        .collect();
    let halving = (!ratios.is_empty()).then(|| {
        (
            ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let max_difference = series.iter().map(|p| p[1].max(p[3])).fold(0.0, f64::max);

    let mut r = KvRecord::new();
    r.nest("scenario", &s.echo());
    r.num("hypotheses.diffusivity_floor", floor);
    run_record(&mut r, "base", &base);
    let opt = |x: Option<f64>| x.map_or("undefined".to_string(), fmt_num);
    r.num("twin.delta", delta)
        .put(
            "twin.target",
            match target {
                TwinTarget::U => "u",
                TwinTarget::V => "v",
            },
        )
        .put("twin.points", series.len())
        .num("twin.max_difference", max_difference)
        .num("twin.final_difference", series.last().map_or(0.0, |p| p[1]))
        .put("twin.rate", opt(rate))
        .put("twin.rate_half", opt(rate_half))
        .put("twin.envelope", opt(envelope));
    match (rate, rate_half) {
        (Some(x), Some(y)) => {
            let scale = x.abs().max(y.abs());
            let rel = if scale > 0.0 {
                (x - y).abs() / scale
            } else {
                0.0
            };
            r.num("twin.rate_relative_difference", rel);
        }
        _ => {
            r.put("twin.rate_relative_difference", "undefined");
        }
    }
    match halving {
        Some((lo, hi)) => r.num("twin.halving_min", lo).num("twin.halving_max", hi),
        None => r
            .put("twin.halving_min", "undefined")
            .put("twin.halving_max", "undefined"),
    };
    Ok(TwinOutcome {
        delta,
        target,
        base,
        series,
        rate,
        rate_half,
        envelope,
        halving,
        max_difference,
        record: r,
    })
}

/// Runs [`twin`] and writes `report.txt` and `twin.csv`.
pub fn cmd_twin(s: &Scenario, out: &Path) -> Result<TwinOutcome, RunnerError> {
    let t = twin(s)?;
    write_file(&out.join("report.txt"), &t.record.render())?;
    write_file(
        &out.join("twin.csv"),
        &csv(
            &["t", "du_delta", "du_half", "dv_delta"],
            t.series.iter().map(|p| p.to_vec()),
        ),
    )?;
    Ok(t)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub mass: f64,
    pub width: f64,
    pub m: Real,
    pub q: Real,
    pub verdict: String,
    pub bracket: Option<(f64, f64)>,
    pub p_star: Option<f64>,
    pub upper_ok: Option<bool>,
    pub lower_ok: Option<bool>,
    pub note: String,
}

pub const SWEEP_HEADER: &str =
    "index,mass,width,m,q,verdict,t_low,t_high,p_star,upper_ok,lower_ok,note";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let num = |x: Option<f64>| x.map_or(String::new(), fmt_num);
        let flag = |x: Option<bool>| x.map_or(String::new(), |b| b.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.index,
            fmt_num(self.mass),
            fmt_num(self.width),
            self.m,
            self.q,
            self.verdict,
            num(self.bracket.map(|b| b.0)),
            num(self.bracket.map(|b| b.1)),
            num(self.p_star),
            flag(self.upper_ok),
            flag(self.lower_ok),
            self.note.replace([',', '\n'], ";"),
        )
    }
}

/// Cells of the Cartesian range in output order (mass outermost, then
/// width, m, q).
pub fn sweep_cells(s: &Scenario) -> Vec<Scenario> {
    let mut cells = Vec::new();
    for &mass in &s.sweep.masses {
        for &width in &s.sweep.widths {
            for &m in &s.sweep.ms {
                for &q in &s.sweep.qs {
                    let mut c = s.with_cell(mass, width, m, q);
                    c.mode = Mode::Plain;
                    cells.push(c);
                }
            }
        }
    }
    cells
}

fn sweep_cell(index: usize, cell: &Scenario, out: Option<&Path>) -> SweepRow {
    let mut row = SweepRow {
        index,
        mass: cell.initial.mass,
        width: cell.initial.width,
        m: cell.params.m,
        q: cell.params.q,
        verdict: "Error".into(),
        bracket: None,
        p_star: None,
        upper_ok: None,
        lower_ok: None,
        note: String::new(),
    };
    let result = match out {
        Some(dir) => cmd_simulate(cell, &dir.join("cells").join(format!("{index:03}"))),
        None => simulate(cell),
    };
    match result {
        Ok(sim) => {
            row.verdict = sim.report.verdict.as_str().into();
            row.bracket = sim.bracket;
            if let Some(p) = &sim.profile {
                if let Some(Ok(f)) = p.fits.first() {
                    row.p_star = Some(f.slope);
                }
                if let Some(Some(b)) = p.bounds.first() {
                    row.upper_ok = Some(b.upper_ok);
                    row.lower_ok = Some(b.lower_ok);
                }
                if let Err(e) = &p.profile {
                    row.note = e.to_string();
                }
            }
            if sim.report.verdict == Verdict::Failed {
                row.note = sim.report.cause.clone();
            }
        }
        Err(e) => row.note = e.to_string(),
    }
    row
}

/// Runs every cell of the sweep on up to `jobs` threads. Rows reach
/// `sink` in index order as soon as all earlier rows are done; a failing
/// cell yields an `Error` row and the sweep continues.
pub fn sweep(
    s: &Scenario,
    jobs: usize,
    out: Option<&Path>,
    sink: &mut dyn FnMut(&SweepRow),
) -> Vec<SweepRow> {
    let cells = sweep_cells(s);
    let jobs = jobs.clamp(1, cells.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<SweepRow>();
    let mut rows: Vec<Option<SweepRow>> = vec![None; cells.len()];
    let mut emitted = 0;
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            let cells = &cells;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                if tx.send(sweep_cell(i, &cells[i], out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for row in rx {
            let i = row.index;
            rows[i] = Some(row);
            while emitted < rows.len() {
                match &rows[emitted] {
                    Some(r) => {
                        sink(r);
                        emitted += 1;
                    }
                    None => break,
                }
            }
        }
    });
    rows.into_iter()
        .map(|r| r.expect("every cell reports"))
        .collect()
}

/// Runs [`sweep`], streaming rows to `stdout` and `out/sweep.csv`.
pub fn cmd_sweep(
    s: &Scenario,
    out: &Path,
    jobs: usize,
    stdout: &mut dyn Write,
) -> Result<Vec<SweepRow>, RunnerError> {
    fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
    let path: PathBuf = out.join("sweep.csv");
    let mut file =
        fs::File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
    let mut failure: Option<io::Error> = None;
    let header = format!("{SWEEP_HEADER}\n");
    let write_both = |file: &mut fs::File, stdout: &mut dyn Write, line: &str| -> io::Result<()> {
        file.write_all(line.as_bytes())?;
        file.flush()?;
        stdout.write_all(line.as_bytes())?;
        stdout.flush()
    };
    write_both(&mut file, stdout, &header).map_err(io_err("writing sweep output"))?;
    let rows = sweep(s, jobs, Some(out), &mut |row| {
        if failure.is_none() {
            if let Err(e) = write_both(&mut file, stdout, &format!("{}\n", row.to_csv())) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(io_err("writing sweep output")(e));
    }
    Ok(rows)
}
