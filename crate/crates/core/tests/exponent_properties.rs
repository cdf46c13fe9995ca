use kslab_core::exponents::{
    admissible_ks, critical_alpha, ehrling_exponent, enlarge_beta, iteration_exponents,
    lower_bound_alpha, moser_s_max, moser_schedule, scalar_alpha_threshold, sobolev_exponent,
    EhrlingPair, ModelParams,
};
use kslab_core::real::{ExtReal, Real};
use num_rational::Rational64;
use proptest::prelude::*;

fn frac() -> impl Strategy<Value = (i64, i64)> {
    (-12i64..=12, 1i64..=8)
}

proptest! {
    #[test]
    fn critical_alpha_matches_rational_oracle(n in 2u32..=8, (a, b) in frac(), (c, d) in frac()) {
        let (m, q) = (Real::ratio(a, b), Real::ratio(c, d));
        let mq = Rational64::new(a, b) - Rational64::new(c, d);
        let nn = Rational64::from_integer(n as i64);
        let den = mq * nn + 1;
        let got = critical_alpha(&ModelParams::new(n, m, q));
        if den > Rational64::from_integer(0) {
            let want = nn * (nn - 1) / den;
            prop_assert_eq!(got, Ok(*want.numer() as f64 / *want.denom() as f64));
        } else {
            prop_assert!(got.is_err());
        }
    }

    #[test]
    fn lower_bound_alpha_matches_formula(m in -2.0f64..4.0, q in -2.0f64..4.0) {
        let got = lower_bound_alpha(Real::Float(m), Real::Float(q));
        let t1 = if 1.0 + q - m > 0.0 { 2.0 / (1.0 + q - m) } else { f64::INFINITY };
        let t2 = if q - m > 0.0 { 1.0 / (q - m) } else { f64::INFINITY };
        let want = t1.min(t2);
        match got {
            ExtReal::Finite(x) => prop_assert!((x - want).abs() <= 1e-12 * want),
            ExtReal::Infinite => prop_assert!(want.is_infinite()),
        }
    }

    #[test]
    fn ks_window_matches_inequalities(n in 2u32..=8, (a, b) in frac(), (c, d) in frac()) {
        let params = ModelParams::new(n, Real::ratio(a, b), Real::ratio(c, d));
        let m = Rational64::new(a, b);
        let mq = m - Rational64::new(c, d);
        let nn = n as i64;
        let inside = Rational64::new(-1, nn) < mq
            && mq <= Rational64::new(nn - 2, nn)
            && m > Rational64::new(nn - 2, nn);
        prop_assert_eq!(admissible_ks(&params), inside);
        if inside {
            let crit = critical_alpha(&params).unwrap();
            // The window's right edge maps to α̲ = n, its left edge to infinity.
            prop_assert!(crit >= n as f64 - 1e-12);
        }
    }

    #[test]
    fn enlarged_beta_stays_admissible(
        n in 2u32..=5,
        p in 1.0f64..3.0,
        theta_frac in 0.0f64..1.0,
        beta in 0.05f64..6.0,
        pos in 0.0f64..1.0,
        m_shift in 1e-3f64..3.0,
        factor in 1.001f64..10.0,
    ) {
        let nf = n as f64;
        let theta = nf + 1e-3 + (50.0 - nf - 1e-3) * theta_frac;
        let left = p / theta - p / nf;
        let right = p / theta + (beta * p - p) / nf;
        let mq = right - (right - left) * pos;
        let m = (nf - 2.0 * p) / nf + m_shift;
        let mut params = ModelParams::new(n, Real::Float(m), Real::Float(m - mq));
        params.p_mass = Real::Float(p);
        params.theta = Real::Float(theta);
        params.beta = Real::Float(beta);
        prop_assume!(kslab_core::exponents::admissible_scalar(&params));
        let alpha = scalar_alpha_threshold(&params).unwrap() * factor;
        let enlarged = enlarge_beta(&params, alpha);
        let mq_f = enlarged.m_minus_q().to_f64();
        prop_assert!(mq_f * alpha < enlarged.beta.to_f64());
        prop_assert!(alpha > scalar_alpha_threshold(&enlarged).unwrap());
        let it = iteration_exponents(&enlarged, alpha).unwrap();
        for i in 0..3 {
            let l = it.lambda[i].finite().expect("finite lambda");
            prop_assert!(l > 1.0);
            prop_assert!(sobolev_exponent(n).exceeds(2.0 * it.kappa[i] * l / (l - 1.0)));
        }
    }

    #[test]
    fn moser_bounds_and_inverse(m in 0.05f64..4.0, s_frac in 0.01f64..=1.0, p_tilde in 1.01f64..5.0) {
        let s = moser_s_max(m) * s_frac;
        let sched = moser_schedule(3, m, s, p_tilde, 20, EhrlingPair::default()).unwrap();
        for j in 1..=20 {
            let p = sched.p_seq[j];
            prop_assert!(sched.lower_bound(j) <= p * (1.0 + 1e-12));
            prop_assert!(p <= sched.upper_bound(j) * (1.0 + 1e-12));
            let back = sched.predecessor(m, j);
            prop_assert!((back - sched.p_seq[j - 1]).abs() <= 1e-10 * sched.p_seq[j - 1]);
        }
    }

    #[test]
    fn ehrling_exponent_in_unit_interval(n in 1u32..=8, s in 0.05f64..4.0, t in 0.001f64..0.999) {
        let r_max = match sobolev_exponent(n) {
            ExtReal::Finite(b) => b,
            ExtReal::Infinite => s + 50.0,
        };
        prop_assume!(r_max > s);
        let r = s + (r_max - s) * t;
        let a = ehrling_exponent(n, s, r).unwrap();
        prop_assert!(a > 0.0 && a < 1.0);
    }
}

#[test]
fn ehrling_rejects_outside_range() {
    assert!(ehrling_exponent(3, 1.0, 6.0).is_err());
    assert!(ehrling_exponent(3, 2.0, 1.0).is_err());
    assert_eq!(ehrling_exponent(2, 1.0, 2.0), Ok(0.5));
}
