//! Self-check suite behind `kslab verify`.
//!
//! Each criterion returns a pass flag and a [`KvRecord`] of the measured
//! quantities. The rendered report contains no timings, so two runs with
//! the same seed produce identical text; the runtime limit still counts
//! towards each pass flag.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exponents::{
    critical_alpha, ehrling_exponent, enlarge_beta, iteration_exponents, moser_schedule,
    scalar_alpha_threshold, sobolev_exponent, EhrlingPair, ModelParams,
};
use crate::grid::RadialGrid;
use crate::kinetics::Constant;
use crate::profile::{check_profile_bounds, extract_profile, fit_decay_exponent, ProfileOptions};
use crate::real::{ExtReal, Real};
use crate::report::{fmt_num, KvRecord};
use crate::runner::{
    final_over_median, initial_state, make_grid, make_kinetics, regularized_agreement, twin,
};
use crate::scenario::{parse_scenario, Scenario};
use crate::solver::{FieldState, KsSolver, RunReport, StepControls, Verdict};

pub const DEFAULT_SEED: u64 = 20_240_917;

/// Canonical blow-up scenario shared by the conservation and profile
/// criteria.
pub const BLOWUP_SCENARIO: &str = "\
model.n = 3
model.m = 1
model.q = 1
grid.N = 512
grid.grading = 1.02
initial.mass = 2
initial.width = 0.2
analysis.alpha = 6.5
analysis.r_cut = 0.2
analysis.profile_tol = 1e-3
";

pub const AGREEMENT_SCENARIO: &str = "\
model.n = 3
model.m = 1
model.q = 1
grid.N = 512
grid.grading = 1.02
initial.mass = 2
initial.width = 0.2
solver.t_end = 0.04
mode = regularized
";

pub const TWIN_SCENARIO: &str = "\
model.n = 3
model.m = 2
model.q = 1
grid.N = 256
initial.mass = 2
initial.width = 0.2
solver.t_end = 0.5
solver.record_every = 0.01
mode = twin
mode.delta = 1e-6
";

pub const CRITERIA: [&str; 10] = [
    "exponent reproduction",
    "iteration exponent property suite",
    "Moser schedule",
    "Ehrling exponent",
    "discretization order",
    "decoupled oracle",
    "conservation and positivity",
    "regularization agreement",
    "uniqueness shadow",
    "profile bound consistency",
];

const LIMITS_SECS: [u64; 10] = [1, 10, 1, 1, 5, 10, 300, 120, 120, 600];

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub within_time: bool,
    pub elapsed: Duration,
    pub details: KvRecord,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub results: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn record(&self) -> KvRecord {
        let mut r = KvRecord::new();
        r.put("seed", self.seed);
        for c in &self.results {
            let p = format!("criterion.{}", c.id);
            r.put(format!("{p}.name"), c.name)
                .put(format!("{p}.pass"), c.pass)
                .put(format!("{p}.within_time_limit"), c.within_time);
            r.nest(&p, &c.details);
        }
        r.put("all_pass", self.all_pass());
        r
    }
}

/// Measured quantities plus a pass flag.
struct Check {
    pass: bool,
    details: KvRecord,
}

impl Check {
    fn new() -> Self {
        Check {
            pass: true,
            details: KvRecord::new(),
        }
    }

    fn require(&mut self, key: &str, ok: bool) -> &mut Self {
        self.details.put(format!("{key}.ok"), ok);
        self.pass &= ok;
        self
    }

    fn fail(&mut self, key: &str, msg: impl ToString) -> &mut Self {
        self.details.put(key, msg.to_string());
        self.pass = false;
        self
    }
}

/// Blow-up run computed once and shared.
struct Canonical {
    scenario: Scenario,
    grid: RadialGrid,
    report: Result<RunReport, String>,
}

fn canonical() -> Canonical {
    let scenario = parse_scenario(BLOWUP_SCENARIO).expect("built-in scenario parses");
    let grid = make_grid(&scenario).expect("built-in grid");
    let report = (|| {
        let kin = make_kinetics(&scenario).map_err(|e| e.to_string())?;
        let init = initial_state(&scenario, &grid);
        KsSolver::new(&grid, kin.as_ref())
            .run(&init, &scenario.solver, &scenario.monitors())
            .map_err(|e| e.to_string())
    })();
    Canonical {
        scenario,
        grid,
        report,
    }
}

/// Runs every criterion in order, calling `progress` after each.
pub fn verify(seed: u64, progress: &mut dyn FnMut(&CriterionResult)) -> VerifyReport {
    let mut shared: Option<Canonical> = None;
    let mut results = Vec::new();
    for id in 1..=10 {
        let start = Instant::now();
        let check = match id {
            1 => criterion_exponents(),
            2 => criterion_iteration(seed),
            3 => criterion_moser(),
            4 => criterion_ehrling(seed),
            5 => criterion_order(),
            6 => criterion_decoupled(),
            7 => criterion_conservation(shared.get_or_insert_with(canonical)),
            8 => criterion_agreement(),
            9 => criterion_twin(),
            _ => criterion_profile(shared.get_or_insert_with(canonical)),
        };
        let elapsed = start.elapsed();
        let within_time = elapsed <= Duration::from_secs(LIMITS_SECS[id - 1]);
        let result = CriterionResult {
            id,
            name: CRITERIA[id - 1],
            pass: check.pass && within_time,
            within_time,
            elapsed,
            details: check.details,
        };
        progress(&result);
        results.push(result);
    }
    VerifyReport { seed, results }
}

fn rational(x: Real) -> BigRational {
    let r = x.exact().expect("exact input");
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// `n(n-1)/((m-q)n+1)` in exact arithmetic.
fn critical_alpha_oracle(n: u32, m: Real, q: Real) -> BigRational {
    let n = BigRational::from_integer(BigInt::from(n));
    let one = BigRational::one();
    &n * (&n - &one) / ((rational(m) - rational(q)) * &n + one)
}

fn criterion_exponents() -> Check {
    let mut c = Check::new();
    let mut table = Vec::new();
    let mut ok = true;
    for n in 2..=6u32 {
        let p = ModelParams::new(n, Real::int(1), Real::int(1));
        let got = critical_alpha(&p);
        let want = (n * (n - 1)) as f64;
        ok &= got == Ok(want);
        table.push(got.map_or(f64::NAN, |x| x));
    }
    c.details.nums("n2_to_6.m1_q1", &table);
    c.require("n_times_n_minus_1", ok);
    let three = critical_alpha(&ModelParams::new(3, Real::int(1), Real::int(1)));
    c.details.put(
        "n3_m1_q1",
        three.clone().map_or("undefined".into(), fmt_num),
    );
    c.require("n3_m1_q1_is_6", three == Ok(6.0));

    let mut ok = true;
    let mut table = Vec::new();
    for n in 2..=6u32 {
        let q = Real::int(1);
        let m = q.add(Real::ratio(n as i64 - 2, n as i64));
        let got = critical_alpha(&ModelParams::new(n, m, q));
        let oracle = critical_alpha_oracle(n, m, q);
        ok &= oracle == BigRational::from_integer(BigInt::from(n))
            && got == Ok(oracle.to_f64().unwrap_or(f64::NAN));
        table.push(got.map_or(f64::NAN, |x| x));
    }
    c.details.nums("window_edge.n2_to_6", &table);
    c.require("window_edge_is_n", ok);
    c
}

fn criterion_iteration(seed: u64) -> Check {
    const TUPLES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut first: Option<String> = None;
    let mut worst_lambda = f64::INFINITY;
    let mut worst_margin = f64::INFINITY;
    let mut sampled = 0usize;
    while sampled < TUPLES {
        let n: u32 = rng.gen_range(2..=5);
        let nf = n as f64;
        let p = rng.gen_range(1.0..=3.0);
        let theta = nf + (50.0 - nf) * (1.0 - rng.gen::<f64>());
        let beta = rng.gen_range(0.05..2.0 * nf);
        let left = p / theta - p / nf;
        let right = p / theta + (beta * p - p) / nf;
        let mq = right - (right - left) * rng.gen::<f64>();
        let m_floor = (nf - 2.0 * p) / nf;
        let m = m_floor + rng.gen_range(1e-6..3.0);
        let mut params = ModelParams::new(n, Real::Float(m), Real::Float(m - mq));
        params.p_mass = Real::Float(p);
        params.theta = Real::Float(theta);
        params.beta = Real::Float(beta);
        if !crate::exponents::admissible_scalar(&params) || params.validate().is_err() {
            continue;
        }
        let Ok(threshold) = scalar_alpha_threshold(&params) else {
            continue;
        };
        sampled += 1;
        let alpha = threshold * rng.gen_range(1.001..10.0);
        let params = enlarge_beta(&params, alpha);
        let bound = sobolev_exponent(n);
        let ok = match iteration_exponents(&params, alpha) {
            Ok(it) => (0..3).all(|i| match it.lambda[i] {
                ExtReal::Finite(l) if l > 1.0 => {
                    worst_lambda = worst_lambda.min(l);
                    let ratio = 2.0 * it.kappa[i] * l / (l - 1.0);
                    if let ExtReal::Finite(b) = bound {
                        worst_margin = worst_margin.min(b - ratio);
                    }
                    bound.exceeds(ratio)
                }
                _ => false,
            }),
            Err(_) => false,
        };
        if !ok {
            violations += 1;
            first.get_or_insert_with(|| {
                format!("n={n} p={p} theta={theta} beta={beta} m={m} m-q={mq} alpha={alpha}")
            });
        }
    }
    let mut c = Check::new();
    c.details
        .put("tuples", sampled)
        .put("violations", violations)
        .num("min_lambda", worst_lambda)
        .num("min_sobolev_margin", worst_margin);
    if let Some(f) = first {
        c.details.put("first_violation", f);
    }
    c.require("no_violations", violations == 0);
    c
}

fn criterion_moser() -> Check {
    let mut c = Check::new();
    let cases = [
        (Real::int(1), Real::ratio(1, 2)),
        (Real::int(2), Real::ratio(1, 2)),
        (Real::int(3), Real::ratio(1, 4)),
        (Real::ratio(1, 2), Real::ratio(1, 2)),
    ];
    const STEPS: usize = 40;
    let p_tilde = Real::int(2);
    for (m, s) in cases {
        let key = format!("m{m}_s{s}").replace('/', "over");
        let sched = match moser_schedule(
            3,
            m.to_f64(),
            s.to_f64(),
            p_tilde.to_f64(),
            STEPS,
            EhrlingPair::default(),
        ) {
            Ok(sc) => sc,
            Err(e) => {
                c.fail(&key, e);
                continue;
            }
        };
        let (mr, sr) = (rational(m), rational(s));
        let one = BigRational::one();
        let shift = &one - (&mr - &one) * &sr;
        let p0 = rational(p_tilde).max(shift.clone());
        let mut exact = vec![p0.clone()];
        for j in 1..=STEPS {
            exact.push((&exact[j - 1] + &shift) / &sr);
        }
        let two = BigRational::from_integer(BigInt::from(2));
        let mut recursion = true;
        let mut bounds = true;
        let mut low = p0.clone();
        let mut high = p0.clone();
        for j in 1..=STEPS {
            recursion &= (&exact[j] + &mr - &one) * &sr - &one == exact[j - 1];
            low = &low * &two;
            high = &high * &two / &sr;
            bounds &= low <= exact[j] && exact[j] <= high;
        }
        let mut float_err: f64 = 0.0;
        for (j, e) in exact.iter().enumerate() {
            let want = e.to_f64().unwrap_or(f64::NAN);
            float_err = float_err.max(((sched.p_seq[j] - want) / want).abs());
            bounds &= sched.lower_bound(j) <= sched.p_seq[j] * (1.0 + 1e-15)
                && sched.p_seq[j] <= sched.upper_bound(j) * (1.0 + 1e-15);
        }
        let start_ok = BigRational::from_float(sched.p0) == Some(p0.clone());
        c.details
            .num(format!("{key}.p40"), sched.p_seq[STEPS])
            .num(format!("{key}.float_rel_err"), float_err);
        c.require(&format!("{key}.recursion_exact"), recursion && start_ok);
        c.require(&format!("{key}.bounds"), bounds);
        c.require(&format!("{key}.float_agrees"), float_err < 1e-13);
    }
    c
}

fn criterion_ehrling(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut c = Check::new();
    let mut out_of_range = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let n: u32 = rng.gen_range(1..=6);
        let s = rng.gen_range(0.05..4.0);
        let r_max = match sobolev_exponent(n) {
            ExtReal::Finite(b) if b > s => b,
            ExtReal::Finite(_) => continue,
            ExtReal::Infinite => s + 100.0,
        };
        let r = s + (r_max - s) * rng.gen_range(0.001..0.999);
        match ehrling_exponent(n, s, r) {
            Ok(a) => {
                lo = lo.min(a);
                hi = hi.max(a);
                if !(a > 0.0 && a < 1.0) {
                    out_of_range += 1;
                }
            }
            Err(_) => out_of_range += 1,
        }
    }
    let half = ehrling_exponent(2, 1.0, 2.0);
    c.details
        .put("out_of_range", out_of_range)
        .num("min_a", lo)
        .num("max_a", hi)
        .put("n2_s1_r2", half.clone().map_or("undefined".into(), fmt_num));
    c.require("all_in_unit_interval", out_of_range == 0);
    c.require("n2_s1_r2_is_half", half == Ok(0.5));
    c
}

/// Observed orders of the max-norm error of the radial Laplacian of
/// `cos(πr)` on uniform grids in three dimensions.
pub fn laplacian_orders(cells: &[usize]) -> (Vec<f64>, Vec<f64>) {
    use std::f64::consts::PI;
    let errors: Vec<f64> = cells
        .iter()
        .map(|&k| {
            let g = RadialGrid::graded(3, 1.0, k, 1.0).expect("uniform grid");
            let v: Vec<f64> = g.centers().iter().map(|r| (PI * r).cos()).collect();
            let lap = g.radial_laplacian(&v).expect("matching length");
            g.centers()
                .iter()
                .zip(&lap)
                .map(|(r, x)| {
                    let exact = -PI * PI * (PI * r).cos() - 2.0 * PI * (PI * r).sin() / r;
                    (x - exact).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let orders = errors
        .windows(2)
        .zip(cells.windows(2))
        .map(|(e, k)| (e[0] / e[1]).ln() / (k[1] as f64 / k[0] as f64).ln())
        .collect();
    (errors, orders)
}

fn criterion_order() -> Check {
    let (errors, orders) = laplacian_orders(&[64, 128, 256, 512]);
    let mut c = Check::new();
    c.details.nums("errors", &errors).nums("orders", &orders);
    c.require("order_at_least_1.9", orders.iter().all(|&p| p >= 1.9));
    c
}

fn criterion_decoupled() -> Check {
    let mut c = Check::new();
    let g = RadialGrid::graded(3, 1.0, 128, 1.0).expect("uniform grid");
    let kin = Constant {
        diffusivity: 1.0,
        chi: 0.0,
    };
    let solver = KsSolver::new(&g, &kin);
    let (u0, v0) = (2.0, 0.5);
    let init = FieldState::new(vec![u0; 128], vec![v0; 128]);
    let mut worst: f64 = 0.0;
    let mut u_dev: f64 = 0.0;
    let dts = vec![1e-4; 10_000];
    let res = solver.replay(&init, &dts, &StepControls::default(), &mut |s| {
        let exact = u0 + (v0 - u0) * (-s.t).exp();
        for (&u, &v) in s.u.iter().zip(&s.v) {
            worst = worst.max((v - exact).abs());
            u_dev = u_dev.max((u - u0).abs());
        }
    });
    match res {
        Ok(s) => {
            c.details
                .num("t_final", s.t)
                .num("max_v_error", worst)
                .num("max_u_deviation", u_dev);
            c.require("v_error_below_1e-6", worst < 1e-6);
            c.require("reached_t_1", (s.t - 1.0).abs() < 1e-9);
        }
        Err(e) => {
            c.fail("error", e);
        }
    }
    c
}

fn criterion_conservation(run: &Canonical) -> Check {
    let mut c = Check::new();
    let rep = match &run.report {
        Ok(r) => r,
        Err(e) => {
            c.fail("error", e);
            return c;
        }
    };
    let st = &rep.stats;
    c.details
        .put("verdict", rep.verdict.as_str())
        .num("t_final", rep.t_final)
        .put("steps", st.accepted)
        .num("mass_drift_max", st.max_mass_drift)
        .num("min_u", st.min_u)
        .num("min_v", st.min_v)
        .num("clipped_relative", st.clipped_mass / st.initial_mass);
    c.require("blown_up", rep.verdict == Verdict::BlownUp);
    c.require("mass_drift_below_1e-10", st.max_mass_drift < 1e-10);
    c.require("nonnegative", st.min_u >= 0.0 && st.min_v >= 0.0);
    c.require(
        "clipped_below_1e-8",
        st.clipped_mass < 1e-8 * st.initial_mass,
    );
    c
}

fn criterion_agreement() -> Check {
    let mut c = Check::new();
    let s = parse_scenario(AGREEMENT_SCENARIO).expect("built-in scenario parses");
    let res = (|| {
        let grid = make_grid(&s).map_err(|e| e.to_string())?;
        let kin = make_kinetics(&s).map_err(|e| e.to_string())?;
        let init = initial_state(&s, &grid);
        regularized_agreement(&s, &grid, kin.as_ref(), &init, None).map_err(|e| e.to_string())
    })();
    match res {
        Ok(a) => {
            let t_end = s.solver.t_end;
            c.details.nest("agreement", &a.record());
            c.require("plain_completed", a.plain.verdict == Verdict::Completed);
            c.require(
                "epsilon_is_half_inverse_max_sup",
                (1.0 / a.epsilon - 2.0 * a.plain_max_sup).abs() <= 1e-9 * a.plain_max_sup,
            );
            c.require(
                "window_covers_t_prime",
                a.t_prime == t_end && a.steps_compared as u64 == a.plain.stats.accepted + 1,
            );
            c.require("deviation_below_1e-8", a.max_deviation < 1e-8);
        }
        Err(e) => {
            c.fail("error", e);
        }
    }
    c
}

fn criterion_twin() -> Check {
    let mut c = Check::new();
    let s = parse_scenario(TWIN_SCENARIO).expect("built-in scenario parses");
    match twin(&s) {
        Ok(t) => {
            c.details
                .put("base_verdict", t.base.verdict.as_str())
                .put("points", t.series.len());
            let opt = |x: Option<f64>| x.map_or("undefined".to_string(), fmt_num);
            c.details
                .put("rate", opt(t.rate))
                .put("rate_half", opt(t.rate_half));
            c.require("bounded_regime", t.base.verdict == Verdict::Completed);
            let rates_ok = match (t.rate, t.rate_half) {
                (Some(a), Some(b)) => {
                    let rel = (a - b).abs() / a.abs().max(b.abs());
                    c.details.num("rate_relative_difference", rel);
                    rel < 0.2
                }
                _ => false,
            };
            c.require("rates_within_20_percent", rates_ok);
            let halving_ok = match t.halving {
                Some((lo, hi)) => {
                    c.details.num("halving_min", lo).num("halving_max", hi);
                    lo >= 0.4 && hi <= 0.6
                }
                None => false,
            };
            c.require("halving_in_0.4_0.6", halving_ok);
        }
        Err(e) => {
            c.fail("error", e);
        }
    }
    c
}

fn criterion_profile(run: &Canonical) -> Check {
    let mut c = Check::new();
    let rep = match &run.report {
        Ok(r) => r,
        Err(e) => {
            c.fail("error", e);
            return c;
        }
    };
    c.require("blown_up", rep.verdict == Verdict::BlownUp);
    let sups: Vec<f64> = rep.series.iter().map(|p| p.sup_u).collect();
    let weighted: Vec<f64> = rep.series.iter().map(|p| p.weighted_sup[0]).collect();
    let (sup_ratio, w_ratio) = (final_over_median(&sups), final_over_median(&weighted));
    c.details
        .num("sup_ratio", sup_ratio)
        .num("weighted_sup_6.5_ratio", w_ratio);
    c.require("weighted_ratio_below_1e2", w_ratio < 1e2);
    c.require("sup_ratio_above_1e6", sup_ratio > 1e6);
    let a = &run.scenario.analysis;
    let opts = ProfileOptions {
        r_cut: a.r_cut,
        profile_tol: a.profile_tol,
    };
    let profile = match extract_profile(&run.grid, rep, &opts) {
        Ok(p) => p,
        Err(e) => {
            c.fail("profile_error", e);
            return c;
        }
    };
    c.details
        .num("t_profile", profile.t_profile)
        .num("cauchy_distance", profile.distance.max());
    c.require("cauchy", true);
    match fit_decay_exponent(&run.grid, &profile.u, a.annulus, a.alphas[0]) {
        Ok(fit) => {
            let b = check_profile_bounds(&fit, &run.scenario.params, a.margin);
            c.details
                .num("p_star", fit.slope)
                .num("fit_residual", fit.residual)
                .put("lower_bound_alpha", b.lower_bound_alpha);
            c.require("p_star_at_least_1.5", b.lower_ok);
        }
        Err(e) => {
            c.fail("fit_error", e);
        }
    }
    c
}
