//! Closed-form exponent calculus.
//!
//! Everything here is a pure function of [`ModelParams`]: the critical decay
//! exponent of radial blow-up profiles, the admissibility windows for the
//! scalar comparison problem and for the Keller–Segel system, the exponent
//! triples driving the `L^p` testing procedure, the Ehrling interpolation
//! exponent and the Moser iteration schedule.

use crate::real::{ExtReal, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExponentError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate denominator: (m-q)n+1 = {0} is not positive")]
    DegenerateDenominator(f64),
    #[error("nonpositive denominator: m-q+p/n-p/theta = {0}")]
    NonpositiveDenominator(f64),
    #[error("inadmissible parameters: {0}")]
    InadmissibleParams(String),
    #[error("range violation: {0}")]
    RangeViolation(String),
}

pub type Result<T> = std::result::Result<T, ExponentError>;

/// Physical and analytic parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Spatial dimension, at least 2.
    pub n: u32,
    /// Radius of the ball.
    pub radius: f64,
    /// Diffusion exponent.
    pub m: Real,
    /// Sensitivity exponent.
    pub q: Real,
    /// Nondegeneracy floor for the diffusivity.
    pub eta: f64,
    /// Exponent of the conserved norm.
    pub p_mass: Real,
    /// Integrability exponent of the weighted gradient, `> n`.
    pub theta: Real,
    /// Weight exponent of the gradient, `> 0`.
    pub beta: Real,
    /// Mass bound.
    pub mass_bound: f64,
    /// Initial-data bound.
    pub data_bound: f64,
}

impl ModelParams {
    /// Parameters for dimension `n` and exponents `(m, q)` with the remaining
    /// fields at their documented defaults: `R = 1`, `eta = 1`, `p = 1`,
    /// `theta = 4n`, `beta = n - 1/2`, `M = L = 1`.
    pub fn new(n: u32, m: impl Into<Real>, q: impl Into<Real>) -> Self {
        ModelParams {
            n,
            radius: 1.0,
            m: m.into(),
            q: q.into(),
            eta: 1.0,
            p_mass: Real::int(1),
            theta: Real::int(4 * n as i64),
            beta: Real::ratio(2 * n as i64 - 1, 2),
            mass_bound: 1.0,
            data_bound: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(ExponentError::InvalidParams(s.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("R must be positive");
        }
        if !(self.m.is_finite() && self.q.is_finite()) {
            return bad("m and q must be finite");
        }
        if !self.theta.gt(self.nr()) {
            return bad("theta must exceed n");
        }
        if !self.p_mass.is_finite() || self.p_mass.lt(Real::int(1)) {
            return bad("p must be at least 1");
        }
        if !self.beta.is_positive() || !self.beta.is_finite() {
            return bad("beta must be positive");
        }
        if !(self.mass_bound > 0.0 && self.data_bound > 0.0 && self.eta > 0.0) {
            return bad("M, L and eta must be positive");
        }
        Ok(())
    }

    fn nr(&self) -> Real {
        Real::int(self.n as i64)
    }

    pub fn m_minus_q(&self) -> Real {
        self.m.sub(self.q)
    }
}

/// `α̲ = n(n-1)/((m-q)n + 1)`.
pub fn critical_alpha(params: &ModelParams) -> Result<f64> {
    let n = params.nr();
    let den = params.m_minus_q().mul(n).add(Real::int(1));
    if !den.is_positive() {
        return Err(ExponentError::DegenerateDenominator(den.to_f64()));
    }
    Ok(n.mul(n.sub(Real::int(1))).div(den).to_f64())
}

/// `ᾱ = min{2/(1+q-m)₊, 1/(q-m)₊}`.
pub fn lower_bound_alpha(m: Real, q: Real) -> ExtReal {
    let term = |num: i64, den: Real| {
        if den.is_positive() {
            ExtReal::Finite(Real::int(num).div(den).to_f64())
        } else {
            ExtReal::Infinite
        }
    };
    let d1 = Real::int(1).add(q).sub(m);
    let d2 = q.sub(m);
    term(2, d1).min(term(1, d2))
}

/// `m - q ∈ (p/θ - p/n, p/θ + (βp - p)/n]` and `m > (n - 2p)/n`.
pub fn admissible_scalar(params: &ModelParams) -> bool {
    let n = params.nr();
    let p = params.p_mass;
    let p_over_theta = p.div(params.theta);
    let left = p_over_theta.sub(p.div(n));
    let right = p_over_theta.add(params.beta.mul(p).sub(p).div(n));
    let mq = params.m_minus_q();
    let m_floor = n.sub(Real::int(2).mul(p)).div(n);
    left.lt(mq) && mq.le(right) && params.m.gt(m_floor)
}

/// `m - q ∈ (-1/n, (n-2)/n]` and `m > (n-2)/n`.
pub fn admissible_ks(params: &ModelParams) -> bool {
    let n = params.nr();
    let left = Real::int(-1).div(n);
    let right = n.sub(Real::int(2)).div(n);
    let mq = params.m_minus_q();
    left.lt(mq) && mq.le(right) && params.m.gt(right)
}

/// `β / (m - q + p/n - p/θ)`; admissible `α` lie strictly above it.
pub fn scalar_alpha_threshold(params: &ModelParams) -> Result<f64> {
    let p = params.p_mass;
    let den = params
        .m_minus_q()
        .add(p.div(params.nr()))
        .sub(p.div(params.theta));
    if !den.is_positive() {
        return Err(ExponentError::NonpositiveDenominator(den.to_f64()));
    }
    Ok(params.beta.div(den).to_f64())
}

/// Returns `params` with `β` enlarged, if necessary, so that `(m-q)α < β`
/// while `α` stays above the scalar threshold. The new `β` is the midpoint
/// of the (nonempty) window `((m-q)α, α(m-q+p/n-p/θ))`.
pub fn enlarge_beta(params: &ModelParams, alpha: f64) -> ModelParams {
    let mq = params.m_minus_q().to_f64();
    let beta = params.beta.to_f64();
    if mq * alpha < beta {
        return *params;
    }
    let p = params.p_mass.to_f64();
    let upper = alpha * (mq + p / params.n as f64 - p / params.theta.to_f64());
    let mut out = *params;
    out.beta = Real::Float(0.5 * (mq * alpha + upper));
    out
}

/// The exponent triples `μ`, `γ`, `κ` and the derived `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationExponents {
    pub mu: [f64; 3],
    pub gamma: [f64; 3],
    pub kappa: [f64; 3],
    pub lambda: [ExtReal; 3],
}

impl IterationExponents {
    /// Direct formula evaluation without any admissibility check.
    pub fn evaluate(m: f64, q: f64, alpha: f64, beta: f64, theta: f64, p_mass: f64) -> Self {
        let mu = [
            (m - 1.0) * alpha + 2.0,
            (2.0 * q - m - 1.0) * alpha + 2.0 * beta,
            (q - 1.0) * alpha + 1.0 + beta,
        ];
        let gamma = [m - 1.0, 2.0 * q - m - 1.0, q - 1.0];
        let kappa = [1.0, theta / (theta - 2.0), theta / (theta - 1.0)];
        let lambda = std::array::from_fn(|i| {
            ExtReal::over_positive_part(alpha * p_mass, kappa[i] * (mu[i] - (m - 1.0) * alpha))
        });
        IterationExponents {
            mu,
            gamma,
            kappa,
            lambda,
        }
    }

    /// `2κᵢλᵢ/(λᵢ-1)`, or `None` where `λᵢ` is infinite.
    pub fn sobolev_ratio(&self, i: usize) -> Option<f64> {
        self.lambda[i]
            .finite()
            .map(|l| 2.0 * self.kappa[i] * l / (l - 1.0))
    }
}

/// Iteration exponents at an admissible `α`.
pub fn iteration_exponents(params: &ModelParams, alpha: f64) -> Result<IterationExponents> {
    params.validate()?;
    if !admissible_scalar(params) {
        return Err(ExponentError::InadmissibleParams(
            "m-q or m outside the scalar admissibility window".into(),
        ));
    }
    let threshold = scalar_alpha_threshold(params)?;
    if !(alpha > threshold) {
        return Err(ExponentError::InadmissibleParams(format!(
            "alpha = {alpha} does not exceed the threshold {threshold}"
        )));
    }
    Ok(IterationExponents::evaluate(
        params.m.to_f64(),
        params.q.to_f64(),
        alpha,
        params.beta.to_f64(),
        params.theta.to_f64(),
        params.p_mass.to_f64(),
    ))
}

/// `2n/(n-2)₊`.
pub fn sobolev_exponent(n: u32) -> ExtReal {
    ExtReal::over_positive_part(2.0 * n as f64, n as f64 - 2.0)
}

/// Gagliardo–Nirenberg exponent `a = (1/s - 1/r)/(1/s + 1/n - 1/2)` for
/// `0 < s < r < 2n/(n-2)₊`.
pub fn ehrling_exponent(n: u32, s: f64, r: f64) -> Result<f64> {
    if n == 0 {
        return Err(ExponentError::RangeViolation("n must be positive".into()));
    }
    if !(s > 0.0 && s < r && sobolev_exponent(n).exceeds(r)) {
        return Err(ExponentError::RangeViolation(format!(
            "need 0 < s < r < 2n/(n-2)+, got s = {s}, r = {r}, n = {n}"
        )));
    }
    let n = n as f64;
    Ok((1.0 / s - 1.0 / r) / (1.0 / s + 1.0 / n - 0.5))
}

/// `s₀ = min{2n/(n-2), 1/(m-1)₊}`.
pub fn moser_cap(n: u32, m: f64) -> ExtReal {
    sobolev_exponent(n).min(ExtReal::over_positive_part(1.0, m - 1.0))
}

/// Largest admissible Moser interpolation exponent, `½ min{1/(m-1)₊, 1}`.
pub fn moser_s_max(m: f64) -> f64 {
    0.5 * ExtReal::over_positive_part(1.0, m - 1.0)
        .min(ExtReal::Finite(1.0))
        .finite()
        .unwrap_or(1.0)
}

/// Ehrling pair `(s, r)` used for the functional-inequality exponent `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhrlingPair {
    pub s: f64,
    pub r: f64,
}

impl Default for EhrlingPair {
    fn default() -> Self {
        EhrlingPair { s: 1.0, r: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoserSchedule {
    pub s: f64,
    pub s0: ExtReal,
    pub p0: f64,
    pub p_seq: Vec<f64>,
    pub a: f64,
    pub nu: f64,
}

impl MoserSchedule {
    /// `(p_j + m - 1)s - 1`, the inverse of the forward recursion.
    pub fn predecessor(&self, m: f64, j: usize) -> f64 {
        (self.p_seq[j] + m - 1.0) * self.s - 1.0
    }

    pub fn lower_bound(&self, j: usize) -> f64 {
        2f64.powi(j as i32) * self.p0
    }

    pub fn upper_bound(&self, j: usize) -> f64 {
        (2.0 / self.s).powi(j as i32) * self.p0
    }
}

pub fn moser_step(m: f64, s: f64, prev: f64) -> f64 {
    (prev + 1.0 - (m - 1.0) * s) / s
}

/// Moser exponents `p_0 … p_J` with `p_0 = max{p̃, 1-(m-1)s}` and
/// `p_j = (p_{j-1} + 1 - (m-1)s)/s`.
pub fn moser_schedule(
    n: u32,
    m: f64,
    s: f64,
    p_tilde: f64,
    steps: usize,
    ehrling: EhrlingPair,
) -> Result<MoserSchedule> {
    let cap = moser_s_max(m);
    if !(s > 0.0 && s <= cap) {
        return Err(ExponentError::RangeViolation(format!(
            "s = {s} outside (0, {cap}]"
        )));
    }
    if !(p_tilde > 1.0) || steps < 1 {
        return Err(ExponentError::RangeViolation(
            "need p_tilde > 1 and at least one step".into(),
        ));
    }
    let a = ehrling_exponent(n, ehrling.s, ehrling.r)?;
    let p0 = p_tilde.max(1.0 - (m - 1.0) * s);
    let mut p_seq = Vec::with_capacity(steps + 1);
    p_seq.push(p0);
    for j in 1..=steps {
        p_seq.push(moser_step(m, s, p_seq[j - 1]));
    }
    Ok(MoserSchedule {
        s,
        s0: moser_cap(n, m),
        p0,
        p_seq,
        a,
        nu: 4.0 * a / (1.0 - a),
    })
}

/// Inputs for [`derive_exponents`] that the analysis leaves to the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentOptions {
    /// `α` for the iteration exponents; `None` picks `1.05 ×` the scalar
    /// threshold.
    pub alpha: Option<f64>,
    pub ehrling: EhrlingPair,
    pub p_tilde: f64,
    pub moser_steps: usize,
}

impl Default for ExponentOptions {
    fn default() -> Self {
        ExponentOptions {
            alpha: None,
            ehrling: EhrlingPair::default(),
            p_tilde: 2.0,
            moser_steps: 10,
        }
    }
}

/// Every derived quantity for one parameter set. Quantities that do not
/// exist for the given parameters carry the error that prevented them.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedExponents {
    pub critical_alpha: Result<f64>,
    pub lower_bound_alpha: ExtReal,
    pub admissible_ks: bool,
    pub admissible_scalar: bool,
    pub scalar_threshold: Result<f64>,
    pub alpha: Option<f64>,
    pub beta_used: f64,
    pub iteration: Result<IterationExponents>,
    pub moser: Result<MoserSchedule>,
}

pub fn derive_exponents(params: &ModelParams, opts: &ExponentOptions) -> DerivedExponents {
    let threshold = scalar_alpha_threshold(params);
    let alpha = opts
        .alpha
        .or_else(|| threshold.as_ref().ok().map(|t| 1.05 * t));
    let (beta_used, iteration) = match alpha {
        Some(a) => {
            let p = enlarge_beta(params, a);
            (p.beta.to_f64(), iteration_exponents(&p, a))
        }
        None => (
            params.beta.to_f64(),
            Err(threshold
                .clone()
                .err()
                .unwrap_or(ExponentError::InadmissibleParams(
                    "no alpha available".into(),
                ))),
        ),
    };
    let m = params.m.to_f64();
    DerivedExponents {
        critical_alpha: critical_alpha(params),
        lower_bound_alpha: lower_bound_alpha(params.m, params.q),
        admissible_ks: admissible_ks(params),
        admissible_scalar: admissible_scalar(params),
        scalar_threshold: threshold,
        alpha,
        beta_used,
        iteration,
        moser: moser_schedule(
            params.n,
            m,
            moser_s_max(m),
            opts.p_tilde,
            opts.moser_steps,
            opts.ehrling,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(n: u32, p: i64, theta: i64, beta: Real, m: Real, q: Real) -> ModelParams {
        let mut params = ModelParams::new(n, m, q);
        params.p_mass = Real::int(p);
        params.theta = Real::int(theta);
        params.beta = beta;
        params
    }

    #[test]
    fn critical_alpha_examples() {
        assert_eq!(critical_alpha(&ModelParams::new(3, 1.0, 1.0)).unwrap(), 6.0);
        let p = ModelParams::new(3, Real::int(1), Real::ratio(2, 3));
        assert_eq!(critical_alpha(&p).unwrap(), 3.0);
        assert_eq!(critical_alpha(&ModelParams::new(2, 1.0, 1.0)).unwrap(), 2.0);
    }

    #[test]
    fn critical_alpha_degenerate() {
        let p = ModelParams::new(3, Real::int(0), Real::ratio(1, 3));
        assert!(matches!(
            critical_alpha(&p),
            Err(ExponentError::DegenerateDenominator(_))
        ));
        let p = ModelParams::new(3, 0.0, 1.0);
        assert!(critical_alpha(&p).is_err());
    }

    #[test]
    fn lower_bound_alpha_examples() {
        assert_eq!(
            lower_bound_alpha(Real::int(1), Real::int(1)),
            ExtReal::Finite(2.0)
        );
        let v = lower_bound_alpha(Real::int(1), Real::ratio(3, 2));
        assert_eq!(v, ExtReal::Finite(4.0 / 3.0));
        assert_eq!(
            lower_bound_alpha(Real::int(2), Real::ratio(1, 2)),
            ExtReal::Infinite
        );
    }

    #[test]
    fn admissible_scalar_examples() {
        let b = Real::ratio(5, 2);
        assert!(admissible_scalar(&scalar_params(
            3,
            1,
            12,
            b,
            Real::int(1),
            Real::int(1)
        )));
        let fifth = Real::ratio(1, 5);
        assert!(!admissible_scalar(&scalar_params(
            3, 1, 12, b, fifth, fifth
        )));
        // m - q exactly at the open left endpoint p/theta - p/n = -1/4
        let edge = scalar_params(2, 1, 4, Real::ratio(3, 2), Real::int(1), Real::ratio(5, 4));
        assert!(!admissible_scalar(&edge));
        // float inputs hitting the same endpoint
        let mut f = edge;
        f.m = Real::Float(1.0);
        f.q = Real::Float(1.25);
        assert!(!admissible_scalar(&f));
    }

    #[test]
    fn admissible_ks_examples() {
        assert!(admissible_ks(&ModelParams::new(3, 1.0, 1.0)));
        assert!(admissible_ks(&ModelParams::new(
            3,
            Real::int(1),
            Real::ratio(2, 3)
        )));
        assert!(!admissible_ks(&ModelParams::new(3, 1.0, 0.5)));
        // left endpoint is open
        assert!(!admissible_ks(&ModelParams::new(
            3,
            Real::int(1),
            Real::ratio(4, 3)
        )));
        // m must exceed (n-2)/n
        assert!(!admissible_ks(&ModelParams::new(
            3,
            Real::ratio(1, 3),
            Real::ratio(1, 3)
        )));
    }

    #[test]
    fn scalar_threshold_examples() {
        let p = scalar_params(3, 1, 12, Real::ratio(5, 2), Real::int(1), Real::int(1));
        assert_eq!(scalar_alpha_threshold(&p).unwrap(), 10.0);

        // m - q = -p/n + p/theta exactly
        let p = scalar_params(3, 1, 12, Real::ratio(5, 2), Real::int(0), Real::ratio(1, 4));
        assert!(matches!(
            scalar_alpha_threshold(&p),
            Err(ExponentError::NonpositiveDenominator(_))
        ));
    }

    #[test]
    fn scalar_threshold_approaches_critical_alpha() {
        // beta -> n-1 and theta -> infinity with p = 1
        for (n, m, q) in [
            (3u32, 1.0, 1.0),
            (3, 1.2, 1.0),
            (4, 1.0, 0.9),
            (2, 1.5, 1.3),
        ] {
            let mut p = ModelParams::new(n, m, q);
            p.beta = Real::Float(n as f64 - 1.0 + 1e-9);
            p.theta = Real::Float(1e12);
            let t = scalar_alpha_threshold(&p).unwrap();
            let c = critical_alpha(&p).unwrap();
            assert!((t - c).abs() < 1e-6 * c, "{t} vs {c}");
        }
    }

    #[test]
    fn iteration_exponent_examples() {
        let p = scalar_params(3, 1, 12, Real::ratio(5, 2), Real::int(1), Real::int(1));
        let e = iteration_exponents(&p, 10.5).unwrap();
        assert_eq!(e.mu, [2.0, 5.0, 3.5]);
        assert_eq!(e.gamma, [0.0, 0.0, 0.0]);
        assert_eq!(e.kappa[0], 1.0);
        assert_eq!(e.kappa[1], 1.2);
        assert!((e.kappa[2] - 12.0 / 11.0).abs() < 1e-15);
        assert_eq!(e.lambda[0], ExtReal::Finite(5.25));

        let raw = IterationExponents::evaluate(2.0, 2.0, 12.0, 13.0, 12.0, 1.0);
        assert_eq!(raw.mu[1], 38.0);
    }

    #[test]
    fn iteration_exponents_reject_small_alpha() {
        let p = scalar_params(3, 1, 12, Real::ratio(5, 2), Real::int(1), Real::int(1));
        assert!(matches!(
            iteration_exponents(&p, 10.0),
            Err(ExponentError::InadmissibleParams(_))
        ));
        let p = scalar_params(
            3,
            1,
            12,
            Real::ratio(5, 2),
            Real::ratio(1, 5),
            Real::ratio(1, 5),
        );
        assert!(iteration_exponents(&p, 100.0).is_err());
    }

    #[test]
    fn lambda_is_infinite_when_denominator_vanishes() {
        // mu_2 - (m-1)alpha = 2 beta - 2 (m-q) alpha = 0
        let e = IterationExponents::evaluate(2.0, 1.0, 2.0, 2.0, 12.0, 1.0);
        assert_eq!(e.lambda[1], ExtReal::Infinite);
        assert_eq!(e.sobolev_ratio(1), None);
    }

    #[test]
    fn enlarged_beta_keeps_alpha_admissible() {
        let mut p = ModelParams::new(3, 1.3, 1.0);
        p.beta = Real::Float(0.5);
        let t = scalar_alpha_threshold(&p).unwrap();
        let alpha = 9.0 * t;
        let e = enlarge_beta(&p, alpha);
        assert!(0.3 * alpha < e.beta.to_f64());
        assert!(alpha > scalar_alpha_threshold(&e).unwrap());
        assert!(admissible_scalar(&e));
    }

    #[test]
    fn ehrling_examples() {
        assert_eq!(ehrling_exponent(2, 1.0, 2.0).unwrap(), 0.5);
        assert!((ehrling_exponent(3, 1.0, 2.0).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            ehrling_exponent(3, 1.0, 6.0),
            Err(ExponentError::RangeViolation(_))
        ));
        assert!(ehrling_exponent(3, 2.0, 2.0).is_err());
    }

    #[test]
    fn moser_examples() {
        let e = EhrlingPair::default();
        let s = moser_schedule(3, 1.0, 0.5, 2.0, 2, e).unwrap();
        assert_eq!(s.p_seq, vec![2.0, 6.0, 14.0]);
        assert!(s.lower_bound(1) == 4.0 && s.p_seq[1] <= s.upper_bound(1));
        assert_eq!(s.upper_bound(1), 8.0);

        let s = moser_schedule(3, 3.0, 0.25, 2.0, 3, e).unwrap();
        assert_eq!(s.p0, 2.0);

        assert!(moser_schedule(3, 3.0, 0.3, 2.0, 3, e).is_err());
        assert!(moser_schedule(3, 1.0, 0.0, 2.0, 3, e).is_err());
    }

    #[test]
    fn moser_nu_from_ehrling_pair() {
        let s = moser_schedule(2, 1.0, 0.5, 2.0, 1, EhrlingPair { s: 1.0, r: 2.0 }).unwrap();
        assert_eq!(s.a, 0.5);
        assert_eq!(s.nu, 4.0);
        assert_eq!(s.s0, ExtReal::Infinite);
        assert_eq!(moser_cap(3, 1.5), ExtReal::Finite(2.0));
    }

    #[test]
    fn validation() {
        assert!(ModelParams::new(3, 1.0, 1.0).validate().is_ok());
        assert!(ModelParams::new(1, 1.0, 1.0).validate().is_err());
        let mut p = ModelParams::new(3, 1.0, 1.0);
        p.theta = Real::int(3);
        assert!(p.validate().is_err());
        let mut p = ModelParams::new(3, 1.0, 1.0);
        p.p_mass = Real::Float(0.5);
        assert!(p.validate().is_err());
    }

    #[test]
    fn derived_exponents_bundle() {
        let d = derive_exponents(&ModelParams::new(3, 1.0, 1.0), &ExponentOptions::default());
        assert_eq!(d.critical_alpha, Ok(6.0));
        assert_eq!(d.lower_bound_alpha, ExtReal::Finite(2.0));
        assert!(d.admissible_ks && d.admissible_scalar);
        assert!(d.iteration.is_ok());
        assert!(d.moser.is_ok());
    }
}
