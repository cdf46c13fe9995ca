//! Graded radial finite-volume mesh on the ball `B_R(0) ⊂ ℝⁿ`.
//!
//! Cells are shells `[f_k, f_{k+1}]` with centers at their midpoints. The
//! solid-angle factor `|S^{n-1}|` is dropped throughout, so a cell's measure
//! is `(f_{k+1}ⁿ - f_kⁿ)/n` and a face's area is `f_jⁿ⁻¹`. The origin is a
//! zero-flux symmetry face; the outer face carries the no-flux condition.

use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("range violation: {0}")]
    RangeViolation(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("nonzero boundary flux ({inner:e}, {outer:e}) in no-flux mode")]
    NonzeroBoundaryFlux { inner: f64, outer: f64 },
}

/// Largest admissible ratio between adjacent cell widths.
pub const MAX_GRADING: f64 = 1.2;
/// Smallest admissible cell count.
pub const MIN_CELLS: usize = 4;

/// How boundary entries of a face flux are treated by
/// [`RadialGrid::divergence_of_flux`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Boundary entries must vanish.
    NoFlux,
    /// Boundary entries are used as given.
    Open,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    n: u32,
    radius: f64,
    grading: f64,
    faces: Vec<f64>,
    centers: Vec<f64>,
    volumes: Vec<f64>,
    areas: Vec<f64>,
    /// Center-to-center distance across each face (zero on the boundary).
    spacing: Vec<f64>,
}

impl RadialGrid {
    /// Geometrically graded mesh with `cells` shells whose widths grow by
    /// `grading` from the origin outward. `grading = 1` is uniform.
    pub fn graded(n: u32, radius: f64, cells: usize, grading: f64) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::RangeViolation(format!("dimension {n} < 2")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GridError::RangeViolation(format!("radius {radius}")));
        }
        if cells < MIN_CELLS {
            return Err(GridError::RangeViolation(format!(
                "{cells} cells, need at least {MIN_CELLS}"
            )));
        }
        if !(1.0..=MAX_GRADING).contains(&grading) {
            return Err(GridError::RangeViolation(format!(
                "grading {grading} outside [1, {MAX_GRADING}]"
            )));
        }
        let mut faces = Vec::with_capacity(cells + 1);
        faces.push(0.0);
        if grading == 1.0 {
            let h = radius / cells as f64;
            faces.extend((1..cells).map(|k| k as f64 * h));
        } else {
            let h0 = radius * (grading - 1.0) / (grading.powi(cells as i32) - 1.0);
            let mut w = h0;
            let mut f = 0.0;
            for _ in 1..cells {
                f += w;
                faces.push(f);
                w *= grading;
            }
        }
        faces.push(radius);
        Ok(Self::from_faces(n, faces, grading))
    }

    fn from_faces(n: u32, faces: Vec<f64>, grading: f64) -> Self {
        let cells = faces.len() - 1;
        let radius = faces[cells];
        let nf = n as f64;
        let centers: Vec<f64> = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let scaled: Vec<f64> = faces.iter().map(|f| f.powi(n as i32) / nf).collect();
        let volumes = scaled.windows(2).map(|w| w[1] - w[0]).collect();
        let areas = faces.iter().map(|f| f.powi(n as i32 - 1)).collect();
        let mut spacing = vec![0.0; cells + 1];
        for j in 1..cells {
            spacing[j] = centers[j] - centers[j - 1];
        }
        RadialGrid {
            n,
            radius,
            grading,
            faces,
            centers,
            volumes,
            areas,
            spacing,
        }
    }

    pub fn dim(&self) -> u32 {
        self.n
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn width(&self, k: usize) -> f64 {
        self.faces[k + 1] - self.faces[k]
    }

    /// `Rⁿ/n`, the reduced measure of the ball.
    pub fn ball_measure(&self) -> f64 {
        self.radius.powi(self.n as i32) / self.n as f64
    }

    /// Reduced integral `Σ ω_k φ_k`, compensated.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        kahan_sum(self.volumes.iter().zip(field).map(|(w, f)| w * f))
    }

    fn check_cells(&self, field: &[f64]) -> Result<(), GridError> {
        if field.len() != self.cells() {
            return Err(GridError::ShapeMismatch {
                expected: self.cells(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Two-point gradients at faces; zero on the symmetry and outer faces.
    pub fn face_gradient(&self, field: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_cells(field)?;
        let mut g = vec![0.0; self.cells() + 1];
        for j in 1..self.cells() {
            g[j] = (field[j] - field[j - 1]) / self.spacing[j];
        }
        Ok(g)
    }

    /// Finite-volume divergence of a radial face flux:
    /// `(a_{k+1} F_{k+1} - a_k F_k)/ω_k`.
    pub fn divergence_of_flux(
        &self,
        face_flux: &[f64],
        mode: BoundaryMode,
    ) -> Result<Vec<f64>, GridError> {
        let nfaces = self.cells() + 1;
        if face_flux.len() != nfaces {
            return Err(GridError::ShapeMismatch {
                expected: nfaces,
                got: face_flux.len(),
            });
        }
        let (inner, outer) = (face_flux[0], face_flux[nfaces - 1]);
        if mode == BoundaryMode::NoFlux && (inner != 0.0 || outer != 0.0) {
            return Err(GridError::NonzeroBoundaryFlux { inner, outer });
        }
        Ok((0..self.cells())
            .map(|k| {
                (self.areas[k + 1] * face_flux[k + 1] - self.areas[k] * face_flux[k])
                    / self.volumes[k]
            })
            .collect())
    }

    /// Neumann radial Laplacian, `div ∘ grad`.
    pub fn radial_laplacian(&self, field: &[f64]) -> Result<Vec<f64>, GridError> {
        let g = self.face_gradient(field)?;
        self.divergence_of_flux(&g, BoundaryMode::NoFlux)
    }

    /// Face transmissibilities `a_j / (r_j - r_{j-1})`, zero on the boundary.
    pub fn transmissibility(&self) -> Vec<f64> {
        (0..=self.cells())
            .map(|j| {
                if self.spacing[j] > 0.0 {
                    self.areas[j] / self.spacing[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// The Laplacian as a tridiagonal matrix `A` with `(Aφ)_k` equal to
    /// [`radial_laplacian`](Self::radial_laplacian).
    pub fn laplacian_matrix(&self) -> Tridiagonal {
        let t = self.transmissibility();
        let mut a = Tridiagonal::zeros(self.cells());
        for k in 0..self.cells() {
            let w = self.volumes[k];
            a.lower[k] = t[k] / w;
            a.upper[k] = t[k + 1] / w;
            a.diag[k] = -(t[k] + t[k + 1]) / w;
        }
        a.lower[0] = 0.0;
        a.upper[self.cells() - 1] = 0.0;
        a
    }
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
