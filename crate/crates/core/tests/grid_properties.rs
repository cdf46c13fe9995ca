use kslab_core::grid::{BoundaryMode, RadialGrid};
use kslab_core::tridiag::Tridiagonal;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = RadialGrid> {
    (2u32..=5, 0.5f64..3.0, 4usize..200, 1.0f64..1.2)
        .prop_map(|(n, r, k, g)| RadialGrid::graded(n, r, k, g).unwrap())
}

proptest! {
    #[test]
    fn volumes_fill_the_ball(g in grid_strategy()) {
        let total: f64 = g.volumes().iter().sum();
        prop_assert!((total - g.ball_measure()).abs() <= 1e-12 * g.ball_measure());
        prop_assert!(g.faces().windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(*g.faces().last().unwrap(), g.radius());
    }

    #[test]
    fn laplacian_conserves_and_kills_constants(g in grid_strategy(), seed in 0u64..1000) {
        let field: Vec<f64> = (0..g.cells())
            .map(|k| ((k as f64 + 1.0) * (seed as f64 + 0.37)).sin().abs())
            .collect();
        let lap = g.radial_laplacian(&field).unwrap();
        let scale: f64 = g
            .volumes()
            .iter()
            .zip(&lap)
            .map(|(w, l)| (w * l).abs())
            .sum();
        prop_assert!(g.integrate(&lap).abs() <= 1e-12 * scale.max(1e-300));
        let flat = g.radial_laplacian(&vec![3.5; g.cells()]).unwrap();
        prop_assert!(flat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matrix_agrees_with_operator(g in grid_strategy()) {
        let field: Vec<f64> = g.centers().iter().map(|r| (2.0 * r).cos() + r * r).collect();
        let m = g.laplacian_matrix();
        let a = m.apply(&field);
        let b = g.radial_laplacian(&field).unwrap();
        for k in 0..g.cells() {
            // Rounding is relative to |A||x|, not to the (cancelled) result.
            let mut scale = (m.diag[k] * field[k]).abs();
            if k > 0 {
                scale += (m.lower[k] * field[k - 1]).abs();
            }
            if k + 1 < g.cells() {
                scale += (m.upper[k] * field[k + 1]).abs();
            }
            prop_assert!((a[k] - b[k]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn thomas_matches_dense_lu(k in 2usize..40, seed in 0u64..10_000) {
        let mut a = Tridiagonal::zeros(k);
        let x = |i: usize, j: u64| (((i as u64 * 7919 + j * 104729 + seed) % 997) as f64) / 997.0 - 0.5;
        for i in 0..k {
            if i > 0 { a.lower[i] = x(i, 1); }
            if i + 1 < k { a.upper[i] = x(i, 2); }
            a.diag[i] = 1.5 + x(i, 3).abs();
        }
        let rhs: Vec<f64> = (0..k).map(|i| x(i, 4)).collect();
        let got = a.solve(&rhs).unwrap();
        let dense = DMatrix::from_fn(k, k, |i, j| {
            if i == j { a.diag[i] } else if j + 1 == i { a.lower[i] } else if i + 1 == j { a.upper[i] } else { 0.0 }
        });
        let want = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            prop_assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}

#[test]
fn divergence_requires_zero_boundary_flux() {
    let g = RadialGrid::graded(3, 1.0, 8, 1.0).unwrap();
    let mut flux = vec![0.0; 9];
    flux[8] = 1.0;
    assert!(g.divergence_of_flux(&flux, BoundaryMode::NoFlux).is_err());
    assert!(g.divergence_of_flux(&flux, BoundaryMode::Open).is_ok());
}

/// The Laplacian is self-adjoint in the volume-weighted inner product, so
/// `W^{1/2} A W^{-1/2}` is symmetric with the same spectrum. Its most
/// negative eigenvalue from a dense symmetric eigensolve must match the
/// Rayleigh quotient reached by power iteration on the tridiagonal form.
#[test]
fn spectrum_matches_dense_eigensolve() {
    let g = RadialGrid::graded(3, 1.0, 16, 1.1).unwrap();
    let a = g.laplacian_matrix();
    let w = g.volumes();
    let k = g.cells();
    let sym = DMatrix::from_fn(k, k, |i, j| {
        let aij = if i == j {
            a.diag[i]
        } else if j + 1 == i {
            a.lower[i]
        } else if i + 1 == j {
            a.upper[i]
        } else {
            0.0
        };
        aij * (w[i] / w[j]).sqrt()
    });
    assert!((&sym - sym.transpose()).amax() <= 1e-9 * sym.amax());
    let eig = sym.symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.abs() <= 1e-9 * min.abs(), "constants span the kernel");

    let mut x: Vec<f64> = (0..k)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.7 })
        .collect();
    let dot = |p: &[f64], q: &[f64]| {
        p.iter()
            .zip(q)
            .zip(w)
            .map(|((a, b), c)| a * b * c)
            .sum::<f64>()
    };
    let mut rq = 0.0;
    for _ in 0..20_000 {
        let y = a.apply(&x);
        rq = dot(&x, &y) / dot(&x, &x);
        let norm = dot(&y, &y).sqrt();
        x = y.iter().map(|v| v / norm).collect();
    }
    assert!((rq - min).abs() <= 1e-10 * min.abs(), "{rq} vs {min}");
}
