//! Diffusivity `D(u, v)`, sensitivity `S(u, v)` and signal production `g(u)`.

use std::fmt;

/// Constitutive functions of the system
/// `u_t = ∇·(D ∇u - S ∇v)`, `v_t = Δv - v + g(u)`.
pub trait Kinetics: Send + Sync + fmt::Debug {
    fn diffusivity(&self, u: f64, v: f64) -> f64;

    fn sensitivity(&self, u: f64, v: f64) -> f64;

    fn production(&self, u: f64) -> f64 {
        u
    }

    /// `S(u, v)/u`, extended continuously to `u = 0`.
    fn sensitivity_ratio(&self, u: f64, v: f64) -> f64 {
        if u > 1e-200 {
            self.sensitivity(u, v) / u
        } else {
            self.sensitivity(1e-12, v) / 1e-12
        }
    }

    /// Declared exponents and constants, if any.
    fn bounds(&self) -> Option<KineticBounds> {
        None
    }

    fn describe(&self) -> String;
}

/// `D = (u+1)^{m-1}`, `S = u(u+1)^{q-1}`, `g(u) = u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prototype {
    pub m: f64,
    pub q: f64,
}

/// Lower end of the range on which declared bounds are checked.
pub const BOUND_RANGE: (f64, f64) = (1e-3, 1e6);

impl Kinetics for Prototype {
    fn diffusivity(&self, u: f64, _v: f64) -> f64 {
        (u + 1.0).powf(self.m - 1.0)
    }

    fn sensitivity(&self, u: f64, _v: f64) -> f64 {
        u * (u + 1.0).powf(self.q - 1.0)
    }

    fn sensitivity_ratio(&self, u: f64, _v: f64) -> f64 {
        (u.max(0.0) + 1.0).powf(self.q - 1.0)
    }

    /// Constants valid on [`BOUND_RANGE`]: for `m ≥ 1`, `K_{D,1} = 1` and
    /// `K_{D,2} = 2^{m-1}`; for `m < 1`, `K_{D,2} = 1` and `K_{D,1}` is the
    /// infimum of `(1 + 1/u)^{m-1}` over the range. `K_S = 2^{(q-1)₊}`,
    /// `K_g = 1`.
    fn bounds(&self) -> Option<KineticBounds> {
        let (k_d1, k_d2) = if self.m >= 1.0 {
            (1.0, 2f64.powf(self.m - 1.0))
        } else {
            ((1.0 + 1.0 / BOUND_RANGE.0).powf(self.m - 1.0), 1.0)
        };
        Some(KineticBounds {
            m: self.m,
            q: self.q,
            k_d1,
            k_d2,
            k_s: 2f64.powf((self.q - 1.0).max(0.0)),
            k_g: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!("prototype(m={},q={})", self.m, self.q)
    }
}

/// `D ≡ d`, `S = χu`, `g(u) = u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant {
    pub diffusivity: f64,
    pub chi: f64,
}

impl Kinetics for Constant {
    fn diffusivity(&self, _u: f64, _v: f64) -> f64 {
        self.diffusivity
    }

    fn sensitivity(&self, u: f64, _v: f64) -> f64 {
        self.chi * u
    }

    fn sensitivity_ratio(&self, _u: f64, _v: f64) -> f64 {
        self.chi
    }

    fn describe(&self) -> String {
        format!("constant(D={},chi={})", self.diffusivity, self.chi)
    }
}

/// `D(u)` and `S(u)` interpolated linearly from a table, held constant
/// beyond its last row; `g(u) = u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    u: Vec<f64>,
    d: Vec<f64>,
    s: Vec<f64>,
}

impl Tabulated {
    /// Rows must start at `u = 0` with `S = 0`, be strictly increasing in
    /// `u`, and carry `D > 0`, `S ≥ 0`.
    pub fn new(u: Vec<f64>, d: Vec<f64>, s: Vec<f64>) -> Result<Self, String> {
        if u.len() < 2 || u.len() != d.len() || u.len() != s.len() {
            return Err("table needs at least two rows of u,D,S".into());
        }
        if u[0] != 0.0 || s[0] != 0.0 {
            return Err("table must start at u = 0 with S = 0".into());
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("table u column must be strictly increasing".into());
        }
        if d.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err("table D must be positive".into());
        }
        if s.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err("table S must be nonnegative".into());
        }
        Ok(Tabulated { u, d, s })
    }

    /// Parses `u,D,S` CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty table")?;
        let cols: Vec<_> = header.split(',').map(str::trim).collect();
        if cols != ["u", "D", "S"] {
            return Err(format!("expected header `u,D,S`, got `{header}`"));
        }
        let (mut u, mut d, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let vals: Result<Vec<f64>, _> = line.split(',').map(|x| x.trim().parse()).collect();
            match vals.as_deref() {
                Ok([a, b, c]) => {
                    u.push(*a);
                    d.push(*b);
                    s.push(*c);
                }
                _ => return Err(format!("bad table row {}: `{line}`", i + 2)),
            }
        }
        Tabulated::new(u, d, s)
    }

    fn interp(&self, col: &[f64], x: f64) -> f64 {
        let x = x.max(0.0);
        let last = self.u.len() - 1;
        if x >= self.u[last] {
            return col[last];
        }
        let i = self.u.partition_point(|&t| t <= x) - 1;
        let w = (x - self.u[i]) / (self.u[i + 1] - self.u[i]);
        col[i] + w * (col[i + 1] - col[i])
    }

    /// Smallest tabulated diffusivity.
    pub fn min_diffusivity(&self) -> f64 {
        self.d.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl Kinetics for Tabulated {
    fn diffusivity(&self, u: f64, _v: f64) -> f64 {
        self.interp(&self.d, u)
    }

    fn sensitivity(&self, u: f64, _v: f64) -> f64 {
        self.interp(&self.s, u)
    }

    fn sensitivity_ratio(&self, u: f64, _v: f64) -> f64 {
        if u > self.u[1] {
            self.interp(&self.s, u) / u
        } else {
            self.s[1] / self.u[1]
        }
    }

    fn describe(&self) -> String {
        format!("table({} rows)", self.u.len())
    }
}

/// Declared growth exponents and constants:
/// `K_{D,1} u^{m-1} ≤ D ≤ K_{D,2} max{u,1}^{m-1}`, `|S| ≤ K_S max{u,1}^q`,
/// `g(u) ≤ K_g u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticBounds {
    pub m: f64,
    pub q: f64,
    pub k_d1: f64,
    pub k_d2: f64,
    pub k_s: f64,
    pub k_g: f64,
}

impl KineticBounds {
    /// Checks all declared bounds at `samples` log-spaced points of
    /// `[lo, hi]` and at a few signal levels. Returns the first violation.
    pub fn check(
        &self,
        kin: &dyn Kinetics,
        lo: f64,
        hi: f64,
        samples: usize,
    ) -> Result<(), String> {
        let tol = 1e-12;
        let step = (hi / lo).ln() / (samples - 1) as f64;
        for i in 0..samples {
            let u = lo * (step * i as f64).exp();
            for v in [0.0, 1.0, 10.0] {
                let d = kin.diffusivity(u, v);
                let big = u.max(1.0);
                if d < self.k_d1 * u.powf(self.m - 1.0) * (1.0 - tol) {
                    return Err(format!("D({u},{v}) = {d} below K_D1 u^(m-1)"));
                }
                if d > self.k_d2 * big.powf(self.m - 1.0) * (1.0 + tol) {
                    return Err(format!("D({u},{v}) = {d} above K_D2 max(u,1)^(m-1)"));
                }
                let s = kin.sensitivity(u, v).abs();
                if s > self.k_s * big.powf(self.q) * (1.0 + tol) {
                    return Err(format!("S({u},{v}) = {s} above K_S max(u,1)^q"));
                }
            }
            let g = kin.production(u);
            if g > self.k_g * u * (1.0 + tol) {
                return Err(format!("g({u}) = {g} above K_g u"));
            }
        }
        Ok(())
    }
}

/// Smooth truncation `G_ε`: the identity on `[0, 1/ε]`, then the quadratic
/// `a + (ξ-a) - (ξ-a)²/(2a)` with `a = 1/ε` up to `ξ = 2/ε`, where it
/// reaches `1.5/ε` with zero slope, and constant beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub epsilon: f64,
}

impl Regularization {
    pub fn new(epsilon: f64) -> Result<Self, String> {
        if epsilon > 0.0 && epsilon < 1.0 {
            Ok(Regularization { epsilon })
        } else {
            Err(format!("epsilon {epsilon} outside (0, 1)"))
        }
    }

    pub fn cutoff(&self, xi: f64) -> f64 {
        let a = 1.0 / self.epsilon;
        if xi <= a {
            xi
        } else if xi < 2.0 * a {
            let t = xi - a;
            a + t - t * t / (2.0 * a)
        } else {
            1.5 * a
        }
    }

    pub fn cutoff_derivative(&self, xi: f64) -> f64 {
        let a = 1.0 / self.epsilon;
        if xi <= a {
            1.0
        } else if xi < 2.0 * a {
            1.0 - (xi - a) / a
        } else {
            0.0
        }
    }
}
