//! Weighted monitors, profile extraction and decay fitting.

use crate::exponents::{critical_alpha, lower_bound_alpha, ModelParams};
use crate::grid::{kahan_sum, RadialGrid};
use crate::real::ExtReal;
use crate::solver::{RunReport, Snapshot, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("range violation: {0}")]
    RangeViolation(String),
    #[error("profile requires a BlownUp run, got {0}")]
    WrongVerdict(String),
    #[error("need at least 3 snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("snapshots not Cauchy on the annulus: {0}")]
    NotCauchy(CauchyDistance),
    #[error("annulus ({0}, {1}) contains fewer than 8 cells")]
    EmptyAnnulus(f64, f64),
    #[error("profile not positive at r = {0}")]
    NonpositiveProfile(f64),
}

/// `max_k r_k^α u_k`.
pub fn weighted_sup(grid: &RadialGrid, u: &[f64], alpha: f64) -> f64 {
    grid.centers()
        .iter()
        .zip(u)
        .map(|(r, x)| if alpha == 0.0 { *x } else { r.powf(alpha) * x })
        .fold(0.0, f64::max)
}

/// `∂_r v` at cell centers: mean of the two adjacent face gradients, or
/// the single interior face in the first and last cell.
pub fn cell_gradient(grid: &RadialGrid, v: &[f64]) -> Vec<f64> {
    let n = grid.cells();
    let g = grid.face_gradient(v).expect("field matches grid");
    (0..n)
        .map(|k| match (k, k + 1 == n) {
            (0, _) => g[1],
            (_, true) => g[k],
            _ => 0.5 * (g[k] + g[k + 1]),
        })
        .collect()
}

/// Reduced quadrature of `∫ r^{θβ} |∂_r v|^θ`.
pub fn weighted_gradient_norm(
    grid: &RadialGrid,
    v: &[f64],
    theta: f64,
    beta: f64,
) -> Result<f64, ProfileError> {
    if !(theta > 1.0 && beta > 0.0) {
        return Err(ProfileError::RangeViolation(format!(
            "need theta > 1 and beta > 0, got theta={theta} beta={beta}"
        )));
    }
    let g = cell_gradient(grid, v);
    Ok(kahan_sum((0..grid.cells()).map(|k| {
        grid.volumes()[k] * grid.centers()[k].powf(theta * beta) * g[k].abs().powf(theta)
    })))
}

/// `max_j f_j^β |∂_r v|_j` over interior faces.
pub fn v_grad_sup(grid: &RadialGrid, v: &[f64], beta: f64) -> f64 {
    let g = grid.face_gradient(v).expect("field matches grid");
    (1..grid.cells())
        .map(|j| grid.faces()[j].powf(beta) * g[j].abs())
        .fold(0.0, f64::max)
}

/// Sup-norm distances on `r ≥ r_cut` between two fields and between their
/// first and second divided differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyDistance {
    pub values: f64,
    pub first: f64,
    pub second: f64,
}

impl CauchyDistance {
    pub fn max(&self) -> f64 {
        self.values.max(self.first).max(self.second)
    }
}

impl std::fmt::Display for CauchyDistance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "values={:e} first={:e} second={:e}",
            self.values, self.first, self.second
        )
    }
}

fn divided(grid: &RadialGrid, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = grid.centers();
    let d1: Vec<f64> = (1..x.len())
        .map(|j| (x[j] - x[j - 1]) / (c[j] - c[j - 1]))
        .collect();
    let d2 = (1..d1.len())
        .map(|j| (d1[j] - d1[j - 1]) / (0.5 * (c[j + 1] - c[j - 1])))
        .collect();
    (d1, d2)
}

fn sup_diff(a: &[f64], b: &[f64], from: usize) -> f64 {
    a.iter()
        .zip(b)
        .skip(from)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn sup_abs(a: &[f64], from: usize) -> f64 {
    a.iter().skip(from).map(|x| x.abs()).fold(0.0, f64::max)
}

fn first_cell_from(grid: &RadialGrid, r_cut: f64) -> usize {
    grid.centers().partition_point(|&r| r < r_cut)
}

/// Componentwise sup-norm distance on `r ≥ r_cut`. Each component is a
/// pseudometric.
pub fn cauchy_distance(grid: &RadialGrid, a: &[f64], b: &[f64], r_cut: f64) -> CauchyDistance {
    let k0 = first_cell_from(grid, r_cut);
    let (a1, a2) = divided(grid, a);
    let (b1, b2) = divided(grid, b);
    // divided differences starting at cell k0 involve only cells ≥ k0
    CauchyDistance {
        values: sup_diff(a, b, k0),
        first: sup_diff(&a1, &b1, k0),
        second: sup_diff(&a2, &b2, k0),
    }
}

/// Scale of `x` on `r ≥ r_cut` in each component.
fn cauchy_scale(grid: &RadialGrid, x: &[f64], r_cut: f64) -> CauchyDistance {
    let k0 = first_cell_from(grid, r_cut);
    let (d1, d2) = divided(grid, x);
    CauchyDistance {
        values: sup_abs(x, k0),
        first: sup_abs(&d1, k0),
        second: sup_abs(&d2, k0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    /// Inner radius of the Cauchy annulus, as a fraction of `R`.
    pub r_cut: f64,
    /// Relative tolerance of the Cauchy check.
    pub profile_tol: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            r_cut: 0.2,
            profile_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t_profile: f64,
    /// Relative distance between the last two snapshots of `u`.
    pub distance: CauchyDistance,
    /// Relative distances between consecutive snapshots of `u`, oldest
    /// first, for every snapshot after the first.
    pub history: Vec<CauchyDistance>,
}

/// Relative distance between consecutive snapshots, normalized per
/// component by the later snapshot's scale.
pub fn relative_distance(
    grid: &RadialGrid,
    earlier: &[f64],
    later: &[f64],
    r_cut: f64,
) -> CauchyDistance {
    let d = cauchy_distance(grid, earlier, later, r_cut);
    let s = cauchy_scale(grid, later, r_cut);
    let rel = |x: f64, s: f64| if s > 0.0 { x / s } else { x };
    CauchyDistance {
        values: rel(d.values, s.values),
        first: rel(d.first, s.first),
        second: rel(d.second, s.second),
    }
}

/// Takes the last snapshot of a blown-up run as the profile after checking
/// that the last two snapshots agree on `r ≥ r_cut·R`.
pub fn extract_profile(
    grid: &RadialGrid,
    report: &RunReport,
    opts: &ProfileOptions,
) -> Result<Profile, ProfileError> {
    if report.verdict != Verdict::BlownUp {
        return Err(ProfileError::WrongVerdict(report.verdict.as_str().into()));
    }
    profile_from_snapshots(grid, &report.snapshots, opts)
}

pub fn profile_from_snapshots(
    grid: &RadialGrid,
    snapshots: &[Snapshot],
    opts: &ProfileOptions,
) -> Result<Profile, ProfileError> {
    if snapshots.len() < 3 {
        return Err(ProfileError::TooFewSnapshots(snapshots.len()));
    }
    let r_cut = opts.r_cut * grid.radius();
    let history: Vec<CauchyDistance> = snapshots
        .windows(2)
        .map(|w| relative_distance(grid, &w[0].u, &w[1].u, r_cut))
        .collect();
    let distance = *history.last().expect("at least two snapshots");
    if !(distance.max() < opts.profile_tol) {
        return Err(ProfileError::NotCauchy(distance));
    }
    let last = snapshots.last().expect("nonempty");
    Ok(Profile {
        u: last.u.clone(),
        v: last.v.clone(),
        t_profile: last.t,
        distance,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileFit {
    pub annulus: (f64, f64),
    /// Decay exponent `p*` with `U ~ r^{-p*}`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest deviation from the fitted line in log space.
    pub residual: f64,
    pub alpha: f64,
    /// `max_k U_k r_k^α` over the whole grid.
    pub c_alpha: f64,
    pub cells: usize,
}

/// Least-squares line through `(log r, log U)` on the cells whose centers
/// lie in the annulus.
pub fn fit_decay_exponent(
    grid: &RadialGrid,
    profile: &[f64],
    annulus: (f64, f64),
    alpha: f64,
) -> Result<ProfileFit, ProfileError> {
    let (r_in, r_out) = annulus;
    if !(r_in > 0.0 && r_in < r_out && r_out <= grid.radius()) {
        return Err(ProfileError::RangeViolation(format!(
            "annulus ({r_in}, {r_out}) must satisfy 0 < r_in < r_out <= R"
        )));
    }
    let cells: Vec<usize> = (0..grid.cells())
        .filter(|&k| (r_in..=r_out).contains(&grid.centers()[k]))
        .collect();
    if cells.len() < 8 {
        return Err(ProfileError::EmptyAnnulus(r_in, r_out));
    }
    let mut xs = Vec::with_capacity(cells.len());
    let mut ys = Vec::with_capacity(cells.len());
    for &k in &cells {
        let r = grid.centers()[k];
        if !(profile[k] > 0.0) {
            return Err(ProfileError::NonpositiveProfile(r));
        }
        xs.push(r.ln());
        ys.push(profile[k].ln());
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (a + b * x)).abs())
        .fold(0.0, f64::max);
    Ok(ProfileFit {
        annulus,
        slope: -b,
        intercept: a,
        residual,
        alpha,
        c_alpha: weighted_sup(grid, profile, alpha),
        cells: cells.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub slope: f64,
    pub critical_alpha: ExtReal,
    pub lower_bound_alpha: ExtReal,
    pub margin: f64,
    /// `p* ≤ α̲ + margin`; a failure flags a suspiciously fast decay.
    pub upper_ok: bool,
    /// `p* ≥ ᾱ - margin`; a failure contradicts the lower bound.
    pub lower_ok: bool,
}

pub const DEFAULT_MARGIN: f64 = 0.5;

/// Compares a fitted decay exponent with the critical exponent and with
/// the lower bound below which no pointwise bound can hold.
pub fn check_profile_bounds(fit: &ProfileFit, params: &ModelParams, margin: f64) -> BoundCheck {
    let crit = match critical_alpha(params) {
        Ok(a) => ExtReal::Finite(a),
        Err(_) => ExtReal::Infinite,
    };
    let lower = lower_bound_alpha(params.m, params.q);
    let p = fit.slope;
    BoundCheck {
        slope: p,
        critical_alpha: crit,
        lower_bound_alpha: lower,
        margin,
        upper_ok: match crit {
            ExtReal::Finite(a) => p <= a + margin,
            ExtReal::Infinite => true,
        },
        lower_ok: match lower {
            ExtReal::Finite(a) => p >= a - margin,
            ExtReal::Infinite => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cells: usize) -> RadialGrid {
        RadialGrid::graded(3, 1.0, cells, 1.0).unwrap()
    }

    fn power(g: &RadialGrid, c: f64, p: f64) -> Vec<f64> {
        g.centers().iter().map(|r| c * r.powf(-p)).collect()
    }

    #[test]
    fn weighted_sup_examples() {
        let g = grid(64);
        assert_eq!(weighted_sup(&g, &vec![1.0; 64], 0.0), 1.0);
        let u = power(&g, 1.0, 2.0);
        assert!((weighted_sup(&g, &u, 2.0) - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for cells in [64, 128, 256] {
            let g = grid(cells);
            let u = power(&g, 1.0, 3.0);
            let w = weighted_sup(&g, &u, 2.0);
            assert!((w - 1.0 / g.centers()[0]).abs() < 1e-9 * w);
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn gradient_norm_examples() {
        let g = grid(256);
        assert_eq!(
            weighted_gradient_norm(&g, &vec![4.0; 256], 2.0, 1.0).unwrap(),
            0.0
        );
        let v: Vec<f64> = g.centers().iter().map(|r| 0.5 * r * r).collect();
        let x = weighted_gradient_norm(&g, &v, 2.0, 1.0).unwrap();
        assert!((x * 7.0 - 1.0).abs() < 1e-2, "{x}");
        assert!(weighted_gradient_norm(&g, &v, 1.0, 1.0).is_err());
        assert!(weighted_gradient_norm(&g, &v, 2.0, 0.0).is_err());
    }

    #[test]
    fn v_grad_sup_of_quadratic() {
        let g = grid(100);
        let v: Vec<f64> = g.centers().iter().map(|r| 0.5 * r * r).collect();
        // |∂v| = r at faces, so f^1 |∂v| = f², largest at the last interior face
        let f = g.faces()[99];
        assert!((v_grad_sup(&g, &v, 1.0) - f * f).abs() < 1e-12);
    }

    fn snaps(g: &RadialGrid, fields: Vec<Vec<f64>>) -> Vec<Snapshot> {
        fields
            .into_iter()
            .enumerate()
            .map(|(j, u)| Snapshot {
                t: j as f64,
                step: j as u64,
                v: vec![0.0; g.cells()],
                u,
            })
            .collect()
    }

    #[test]
    fn convergent_snapshots_pass() {
        let g = grid(128);
        let fields = (0..14)
            .map(|j| power(&g, 1.0 + 0.5f64.powi(j), 2.0))
            .collect();
        let p = profile_from_snapshots(&g, &snaps(&g, fields), &ProfileOptions::default()).unwrap();
        assert_eq!(p.u, power(&g, 1.0 + 0.5f64.powi(13), 2.0));
        assert_eq!(p.t_profile, 13.0);
        for w in p.history.windows(2) {
            assert!(w[1].max() < w[0].max());
        }
    }

    #[test]
    fn alternating_snapshots_fail() {
        let g = grid(128);
        let fields = (0..6).map(|j| power(&g, (1 + j % 2) as f64, 2.0)).collect();
        assert!(matches!(
            profile_from_snapshots(&g, &snaps(&g, fields), &ProfileOptions::default()),
            Err(ProfileError::NotCauchy(_))
        ));
    }

    #[test]
    fn too_few_snapshots() {
        let g = grid(16);
        let fields = vec![vec![1.0; 16]; 2];
        assert!(matches!(
            profile_from_snapshots(&g, &snaps(&g, fields), &ProfileOptions::default()),
            Err(ProfileError::TooFewSnapshots(2))
        ));
    }

    #[test]
    fn fit_examples() {
        let g = RadialGrid::graded(3, 1.0, 256, 1.01).unwrap();
        let fit = fit_decay_exponent(&g, &power(&g, 5.0, 2.0), (0.05, 0.3), 2.0).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!((fit.c_alpha - 5.0).abs() < 1e-12);

        let wobble: Vec<f64> = g
            .centers()
            .iter()
            .map(|r| r.powi(-2) * (1.0 + 0.01 * r.ln().sin()))
            .collect();
        let fit = fit_decay_exponent(&g, &wobble, (0.05, 0.3), 2.0).unwrap();
        assert!((fit.slope - 2.0).abs() <= 0.02);

        let fit = fit_decay_exponent(&g, &vec![3.0; 256], (0.05, 0.3), 0.0).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let g = grid(64);
        assert!(matches!(
            fit_decay_exponent(&g, &vec![1.0; 64], (0.5, 0.52), 0.0),
            Err(ProfileError::EmptyAnnulus(..))
        ));
        let mut u = vec![1.0; 64];
        u[20] = 0.0;
        assert!(matches!(
            fit_decay_exponent(&g, &u, (0.1, 0.9), 0.0),
            Err(ProfileError::NonpositiveProfile(_))
        ));
    }

    fn fit_with(slope: f64) -> ProfileFit {
        ProfileFit {
            annulus: (0.05, 0.3),
            slope,
            intercept: 0.0,
            residual: 0.0,
            alpha: 6.5,
            c_alpha: 1.0,
            cells: 10,
        }
    }

    #[test]
    fn bound_flags() {
        let p = ModelParams::new(3, 1, 1);
        let c = check_profile_bounds(&fit_with(2.1), &p, DEFAULT_MARGIN);
        assert_eq!(c.critical_alpha, ExtReal::Finite(6.0));
        assert_eq!(c.lower_bound_alpha, ExtReal::Finite(2.0));
        assert!(c.upper_ok && c.lower_ok);
        let c = check_profile_bounds(&fit_with(1.2), &p, DEFAULT_MARGIN);
        assert!(!c.lower_ok);
        let c = check_profile_bounds(&fit_with(7.0), &p, DEFAULT_MARGIN);
        assert!(!c.upper_ok && c.lower_ok);
    }
}
