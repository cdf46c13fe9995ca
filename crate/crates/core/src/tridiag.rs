//! Tridiagonal systems.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TridiagError {
    #[error("zero or non-finite pivot at row {0}")]
    Pivot(usize),
    #[error("residual {residual:e} above tolerance {tol:e} after refinement")]
    Residual { residual: f64, tol: f64 },
    #[error("dimension mismatch")]
    Shape,
}

/// Matrix with `lower[i] = A[i][i-1]` (`lower[0]` unused) and
/// `upper[i] = A[i][i+1]` (`upper[n-1]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Thomas algorithm. For an M-matrix with nonnegative right-hand side
    /// every intermediate quantity is nonnegative, so the result is too.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, TridiagError> {
        let n = self.len();
        if rhs.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(TridiagError::Shape);
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = self.diag[i] - self.lower[i] * c[i - 1];
            }
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(TridiagError::Pivot(i));
            }
            c[i] = if i + 1 < n {
                self.upper[i] / pivot
            } else {
                0.0
            };
            d[i] = if i == 0 {
                rhs[0] / pivot
            } else {
                (rhs[i] - self.lower[i] * d[i - 1]) / pivot
            };
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// `(|A| |x|)_i`, the scale against which row residuals are measured.
    fn abs_apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = (self.diag[i] * x[i]).abs();
                if i > 0 {
                    y += (self.lower[i] * x[i - 1]).abs();
                }
                if i + 1 < n {
                    y += (self.upper[i] * x[i + 1]).abs();
                }
                y
            })
            .collect()
    }

    /// Componentwise backward error `max_i |b - Ax|_i / (|A||x| + |b|)_i`.
    pub fn backward_error(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.apply(x);
        let scale = self.abs_apply(x);
        (0..self.len())
            .map(|i| {
                let den = scale[i] + rhs[i].abs();
                if den > 0.0 {
                    (rhs[i] - ax[i]).abs() / den
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Solve followed by iterative refinement until the componentwise
    /// backward error is at most `tol` (at most `max_sweeps` corrections).
    pub fn solve_refined(
        &self,
        rhs: &[f64],
        tol: f64,
        max_sweeps: usize,
    ) -> Result<Vec<f64>, TridiagError> {
        let mut x = self.solve(rhs)?;
        let mut residual = f64::INFINITY;
        for sweep in 0..=max_sweeps {
            let ax = self.apply(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = self.backward_error(&x, rhs);
            if residual <= tol || sweep == max_sweeps {
                break;
            }
            let dx = self.solve(&r)?;
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        if residual <= tol {
            Ok(x)
        } else {
            Err(TridiagError::Residual { residual, tol })
        }
    }
}
