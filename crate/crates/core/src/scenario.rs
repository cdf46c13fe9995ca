//! Experiment descriptions in a flat `key = value` format.
//!
//! ```text
//! # blow-up hunt
//! model.n = 3
//! model.m = 1
//! model.q = 1
//! grid.N = 512
//! initial.mass = 2
//! analysis.alpha = 6.5
//! ```
//!
//! Blank lines and `#` comments are ignored. Every key may appear once;
//! unknown keys are errors. Numbers accept decimals, exponents and
//! fractions such as `2/3` (kept exact where the calculus compares
//! interval endpoints). Lists are comma-separated. Only `model.n`,
//! `model.m` and `model.q` are required; [`KEYS`] lists the rest with
//! their defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::exponents::{critical_alpha, EhrlingPair, ExponentOptions, ModelParams};
use crate::real::Real;
use crate::report::{fmt_num, KvRecord};
use crate::solver::{MonitorSpec, SolverConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {key}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid scenario: {0}")]
pub struct ValidationError(pub String);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Recognized keys with their defaults (`-` marks required keys, `auto`
/// values derived from other fields).
pub const KEYS: &[(&str, &str)] = &[
    ("model.n", "-"),
    ("model.m", "-"),
    ("model.q", "-"),
    ("model.R", "1"),
    ("model.eta", "1"),
    ("model.p_mass", "1"),
    ("model.theta", "4n"),
    ("model.beta", "n-1/2"),
    ("model.M", "1"),
    ("model.L", "1"),
    ("kinetics", "prototype"),
    ("kinetics.table", "none"),
    ("initial.mass", "2"),
    ("initial.width", "0.2"),
    ("initial.v0", "0"),
    ("grid.N", "512"),
    ("grid.grading", "1.02"),
    ("solver.dt_init", "1e-6"),
    ("solver.dt_min", "1e-16"),
    ("solver.dt_max", "1e-2"),
    ("solver.cfl_safety", "0.5"),
    ("solver.blowup_threshold", "1e10"),
    ("solver.t_end", "1"),
    ("solver.linear_tol", "1e-13"),
    ("solver.record_every", "1e-3"),
    ("solver.positivity_budget", "1e-8"),
    ("solver.picard_iters", "1"),
    ("solver.snapshot_factor", "10"),
    ("solver.max_steps", "2000000"),
    ("analysis.alpha", "critical_alpha+0.5 (none when undefined)"),
    ("analysis.annulus", "0.05R,0.3R"),
    ("analysis.check_bounds", "true"),
    ("analysis.margin", "0.5"),
    ("analysis.r_cut", "0.2"),
    ("analysis.profile_tol", "1e-3"),
    ("mode", "plain"),
    ("mode.epsilon", "auto"),
    ("mode.delta", "1e-6"),
    ("twin.target", "u"),
    ("sweep.mass", "initial.mass"),
    ("sweep.width", "initial.width"),
    ("sweep.m", "model.m"),
    ("sweep.q", "model.q"),
    ("exponents.alpha", "auto"),
    ("exponents.ehrling_s", "1"),
    ("exponents.ehrling_r", "2"),
    ("exponents.p_tilde", "2"),
    ("exponents.moser_steps", "10"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum KineticsSpec {
    Prototype,
    /// CSV table with header `u,D,S`, resolved by the runner.
    Table(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialSpec {
    /// Reduced mass `∫ u₀ r^{n-1} dr`.
    pub mass: f64,
    pub width: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    pub grading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub alphas: Vec<f64>,
    pub annulus: (f64, f64),
    pub check_bounds: bool,
    pub margin: f64,
    /// Inner radius of the Cauchy check as a fraction of `R`.
    pub r_cut: f64,
    pub profile_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinTarget {
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Plain,
    /// `None` picks `ε` from a paired plain run.
    Regularized {
        epsilon: Option<f64>,
    },
    Twin {
        delta: f64,
        target: TwinTarget,
    },
    Sweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub masses: Vec<f64>,
    pub widths: Vec<f64>,
    pub ms: Vec<Real>,
    pub qs: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    pub kinetics: KineticsSpec,
    pub initial: InitialSpec,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub analysis: AnalysisSpec,
    pub mode: Mode,
    pub sweep: SweepSpec,
    pub exponents: ExponentOptions,
}

impl Scenario {
    pub fn monitors(&self) -> MonitorSpec {
        MonitorSpec {
            alphas: self.analysis.alphas.clone(),
            theta: self.params.theta.to_f64(),
            beta: self.params.beta.to_f64(),
        }
    }

    /// Copy with different bump data and exponents.
    pub fn with_cell(&self, mass: f64, width: f64, m: Real, q: Real) -> Scenario {
        let mut s = self.clone();
        s.initial.mass = mass;
        s.initial.width = width;
        s.params.m = m;
        s.params.q = q;
        s
    }

    /// Every resolved setting, one per line, in a fixed order.
    pub fn echo(&self) -> KvRecord {
        let p = &self.params;
        let mut r = KvRecord::new();
        r.put("model.n", p.n)
            .num("model.R", p.radius)
            .put("model.m", p.m)
            .put("model.q", p.q)
            .num("model.eta", p.eta)
            .put("model.p_mass", p.p_mass)
            .put("model.theta", p.theta)
            .put("model.beta", p.beta)
            .num("model.M", p.mass_bound)
            .num("model.L", p.data_bound);
        match &self.kinetics {
            KineticsSpec::Prototype => r.put("kinetics", "prototype"),
            KineticsSpec::Table(path) => r
                .put("kinetics", "table")
                .put("kinetics.table", path.display()),
        };
        r.num("initial.mass", self.initial.mass)
            .num("initial.width", self.initial.width)
            .num("initial.v0", self.initial.v0)
            .put("grid.N", self.grid.cells)
            .num("grid.grading", self.grid.grading);
        let s = &self.solver;
        r.num("solver.dt_init", s.dt_init)
            .num("solver.dt_min", s.dt_min)
            .num("solver.dt_max", s.dt_max)
            .num("solver.cfl_safety", s.cfl_safety)
            .num("solver.blowup_threshold", s.blowup_threshold)
            .num("solver.t_end", s.t_end)
            .num("solver.linear_tol", s.linear_tol)
            .num("solver.record_every", s.record_every)
            .num("solver.positivity_budget", s.positivity_budget)
            .put("solver.picard_iters", s.picard_iters)
            .num("solver.snapshot_factor", s.snapshot_factor)
            .put("solver.max_steps", s.max_steps);
        let a = &self.analysis;
        if a.alphas.is_empty() {
            r.put("analysis.alpha", "none");
        } else {
            r.nums("analysis.alpha", &a.alphas);
        }
        r.nums("analysis.annulus", &[a.annulus.0, a.annulus.1])
            .put("analysis.check_bounds", a.check_bounds)
            .num("analysis.margin", a.margin)
            .num("analysis.r_cut", a.r_cut)
            .num("analysis.profile_tol", a.profile_tol);
        match self.mode {
            Mode::Plain => r.put("mode", "plain"),
            Mode::Regularized { epsilon } => r.put("mode", "regularized").put(
                "mode.epsilon",
                epsilon.map(fmt_num).unwrap_or_else(|| "auto".into()),
            ),
            Mode::Twin { delta, target } => r.put("mode", "twin").num("mode.delta", delta).put(
                "twin.target",
                match target {
                    TwinTarget::U => "u",
                    TwinTarget::V => "v",
                },
            ),
            Mode::Sweep => r.put("mode", "sweep"),
        };
        let join = |xs: &[Real]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        r.nums("sweep.mass", &self.sweep.masses)
            .nums("sweep.width", &self.sweep.widths)
            .put("sweep.m", join(&self.sweep.ms))
            .put("sweep.q", join(&self.sweep.qs));
        let e = &self.exponents;
        r.put(
            "exponents.alpha",
            e.alpha.map(fmt_num).unwrap_or_else(|| "auto".into()),
        )
        .num("exponents.ehrling_s", e.ehrling.s)
        .num("exponents.ehrling_r", e.ehrling.r)
        .num("exponents.p_tilde", e.p_tilde)
        .put("exponents.moser_steps", e.moser_steps);
        r
    }
}

struct Entry {
    line: usize,
    value: String,
}

struct Document {
    entries: BTreeMap<String, Entry>,
}

impl Document {
    fn parse(text: &str) -> Result<Self, ParseError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ParseError {
                    line,
                    key: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(ParseError {
                    line,
                    key: key.into(),
                    message: "unknown key".into(),
                });
            }
            if value.is_empty() {
                return Err(ParseError {
                    line,
                    key: key.into(),
                    message: "empty value".into(),
                });
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(ParseError {
                    line,
                    key: key.into(),
                    message: format!("duplicate key (first set on line {})", prev.line),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Document { entries })
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.entries.get(key).map_or(0, |e| e.line),
            key: key.into(),
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn real(&self, key: &str) -> Result<Option<Real>, ParseError> {
        self.raw(key)
            .map(|v| v.parse::<Real>().map_err(|e| self.err(key, e.to_string())))
            .transpose()
    }

    fn real_or(&self, key: &str, default: Real) -> Result<Real, ParseError> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn required(&self, key: &str) -> Result<Real, ParseError> {
        self.real(key)?.ok_or_else(|| ParseError {
            line: 0,
            key: key.into(),
            message: "required key missing".into(),
        })
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, ParseError> {
        Ok(self.real(key)?.map_or(default, Real::to_f64))
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>, ParseError> {
        match self.raw(key) {
            None | Some("auto") => Ok(None),
            Some(_) => Ok(self.real(key)?.map(Real::to_f64)),
        }
    }

    fn uint(&self, key: &str, default: u64) -> Result<u64, ParseError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| self.err(key, format!("`{v}` is not a nonnegative integer"))),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool, ParseError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(self.err(key, format!("`{v}` is not true/false"))),
        }
    }

    fn reals(&self, key: &str) -> Result<Option<Vec<Real>>, ParseError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<Real>()
                            .map_err(|e| self.err(key, e.to_string()))
                    })
                    .collect()
            })
            .transpose()
    }

    fn nums(&self, key: &str) -> Result<Option<Vec<f64>>, ParseError> {
        Ok(self
            .reals(key)?
            .map(|xs| xs.into_iter().map(Real::to_f64).collect()))
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let doc = Document::parse(text)?;
    let n = doc.uint("model.n", 0)?;
    if doc.raw("model.n").is_none() {
        return Err(doc.required("model.n").unwrap_err().into());
    }
    let n = u32::try_from(n).map_err(|_| doc.err("model.n", "too large"))?;
    let mut params = ModelParams::new(n, doc.required("model.m")?, doc.required("model.q")?);
    params.radius = doc.num("model.R", 1.0)?;
    params.eta = doc.num("model.eta", 1.0)?;
    params.p_mass = doc.real_or("model.p_mass", params.p_mass)?;
    params.theta = doc.real_or("model.theta", params.theta)?;
    params.beta = doc.real_or("model.beta", params.beta)?;
    params.mass_bound = doc.num("model.M", 1.0)?;
    params.data_bound = doc.num("model.L", 1.0)?;
    params
        .validate()
        .map_err(|e| ValidationError(e.to_string()))?;
    let radius = params.radius;

    let kinetics = match doc.raw("kinetics").unwrap_or("prototype") {
        "prototype" => {
            if doc.raw("kinetics.table").is_some() {
                return Err(doc
                    .err("kinetics.table", "only valid with `kinetics = table`")
                    .into());
            }
            KineticsSpec::Prototype
        }
        "table" => KineticsSpec::Table(PathBuf::from(
            doc.raw("kinetics.table")
                .ok_or_else(|| doc.err("kinetics", "`kinetics = table` needs kinetics.table"))?,
        )),
        other => {
            return Err(doc
                .err("kinetics", format!("`{other}` is not prototype|table"))
                .into())
        }
    };

    let initial = InitialSpec {
        mass: doc.num("initial.mass", 2.0)?,
        width: doc.num("initial.width", 0.2)?,
        v0: doc.num("initial.v0", 0.0)?,
    };
    let grid = GridSpec {
        cells: doc.uint("grid.N", 512)? as usize,
        grading: doc.num("grid.grading", 1.02)?,
    };

    let d = SolverConfig::default();
    let solver = SolverConfig {
        dt_init: doc.num("solver.dt_init", d.dt_init)?,
        dt_min: doc.num("solver.dt_min", d.dt_min)?,
        dt_max: doc.num("solver.dt_max", d.dt_max)?,
        cfl_safety: doc.num("solver.cfl_safety", d.cfl_safety)?,
        blowup_threshold: doc.num("solver.blowup_threshold", d.blowup_threshold)?,
        t_end: doc.num("solver.t_end", d.t_end)?,
        linear_tol: doc.num("solver.linear_tol", d.linear_tol)?,
        record_every: doc.num("solver.record_every", d.record_every)?,
        positivity_budget: doc.num("solver.positivity_budget", d.positivity_budget)?,
        picard_iters: doc.uint("solver.picard_iters", d.picard_iters as u64)? as usize,
        snapshot_factor: doc.num("solver.snapshot_factor", d.snapshot_factor)?,
        max_steps: doc.uint("solver.max_steps", d.max_steps)?,
    };

    let crit = critical_alpha(&params).ok();
    let alphas = match doc.raw("analysis.alpha") {
        Some("none") => Vec::new(),
        Some(_) => doc.nums("analysis.alpha")?.unwrap_or_default(),
        None => crit.map(|c| vec![c + 0.5]).unwrap_or_default(),
    };
    let annulus = match doc.nums("analysis.annulus")? {
        None => (0.05 * radius, 0.3 * radius),
        Some(v) if v.len() == 2 => (v[0], v[1]),
        Some(_) => return Err(doc.err("analysis.annulus", "expected `r_in,r_out`").into()),
    };
    let analysis = AnalysisSpec {
        alphas,
        annulus,
        check_bounds: doc.boolean("analysis.check_bounds", true)?,
        margin: doc.num("analysis.margin", 0.5)?,
        r_cut: doc.num("analysis.r_cut", 0.2)?,
        profile_tol: doc.num("analysis.profile_tol", 1e-3)?,
    };

    let mode_keys = ["mode.epsilon", "mode.delta", "twin.target"];
    let mode = match doc.raw("mode").unwrap_or("plain") {
        "plain" => Mode::Plain,
        "regularized" => Mode::Regularized {
            epsilon: doc.opt_num("mode.epsilon")?,
        },
        "twin" => Mode::Twin {
            delta: doc.num("mode.delta", 1e-6)?,
            target: match doc.raw("twin.target").unwrap_or("u") {
                "u" => TwinTarget::U,
                "v" => TwinTarget::V,
                other => {
                    return Err(doc
                        .err("twin.target", format!("`{other}` is not u|v"))
                        .into())
                }
            },
        },
        "sweep" => Mode::Sweep,
        other => {
            return Err(doc
                .err(
                    "mode",
                    format!("`{other}` is not plain|regularized|twin|sweep"),
                )
                .into())
        }
    };
    let allowed: &[&str] = match mode {
        Mode::Regularized { .. } => &["mode.epsilon"],
        Mode::Twin { .. } => &["mode.delta", "twin.target"],
        _ => &[],
    };
    for key in mode_keys {
        if doc.raw(key).is_some() && !allowed.contains(&key) {
            return Err(doc.err(key, "not used by the selected mode").into());
        }
    }

    let sweep = SweepSpec {
        masses: doc.nums("sweep.mass")?.unwrap_or(vec![initial.mass]),
        widths: doc.nums("sweep.width")?.unwrap_or(vec![initial.width]),
        ms: doc.reals("sweep.m")?.unwrap_or(vec![params.m]),
        qs: doc.reals("sweep.q")?.unwrap_or(vec![params.q]),
    };

    let exponents = ExponentOptions {
        alpha: doc.opt_num("exponents.alpha")?,
        ehrling: EhrlingPair {
            s: doc.num("exponents.ehrling_s", 1.0)?,
            r: doc.num("exponents.ehrling_r", 2.0)?,
        },
        p_tilde: doc.num("exponents.p_tilde", 2.0)?,
        moser_steps: doc.uint("exponents.moser_steps", 10)? as usize,
    };

    let scenario = Scenario {
        params,
        kinetics,
        initial,
        grid,
        solver,
        analysis,
        mode,
        sweep,
        exponents,
    };
    validate(&scenario)?;
    Ok(scenario)
}

/// Cross-field checks.
pub fn validate(s: &Scenario) -> Result<(), ValidationError> {
    let bad = |msg: String| Err(ValidationError(msg));
    s.params
        .validate()
        .map_err(|e| ValidationError(e.to_string()))?;
    s.solver
        .validate()
        .map_err(|e| ValidationError(e.to_string()))?;
    let i = &s.initial;
    if !(i.mass >= 0.0 && i.width > 0.0 && i.v0 >= 0.0) {
        return bad("initial data needs mass >= 0, width > 0, v0 >= 0".into());
    }
    if i.mass.is_nan() || !i.mass.is_finite() {
        return bad("initial.mass must be finite".into());
    }
    let a = &s.analysis;
    if a.alphas.iter().any(|x| !(*x >= 0.0)) {
        return bad("analysis.alpha values must be nonnegative".into());
    }
    if a.check_bounds {
        if let Ok(crit) = critical_alpha(&s.params) {
            if let Some(x) = a.alphas.iter().find(|x| **x <= crit) {
                return bad(format!(
                    "analysis.alpha {} does not exceed critical_alpha {}",
                    fmt_num(*x),
                    fmt_num(crit)
                ));
            }
        }
    }
    let r = s.params.radius;
    if !(a.annulus.0 > 0.0 && a.annulus.0 < a.annulus.1 && a.annulus.1 <= r) {
        return bad("analysis.annulus must satisfy 0 < r_in < r_out <= R".into());
    }
    if !(a.margin >= 0.0 && a.r_cut > 0.0 && a.r_cut < 1.0 && a.profile_tol > 0.0) {
        return bad("analysis needs margin >= 0, r_cut in (0,1), profile_tol > 0".into());
    }
    match s.mode {
        Mode::Regularized { epsilon: Some(e) } if !(e > 0.0 && e < 1.0) => {
            return bad(format!("regularized mode needs epsilon in (0, 1), got {e}"))
        }
        Mode::Twin { delta, .. } if !(delta >= 0.0 && delta.is_finite()) => {
            return bad(format!("twin mode needs delta >= 0, got {delta}"))
        }
        _ => {}
    }
    let sw = &s.sweep;
    if sw.masses.is_empty() || sw.widths.is_empty() || sw.ms.is_empty() || sw.qs.is_empty() {
        return bad("sweep ranges must be nonempty".into());
    }
    if sw.masses.iter().any(|m| !(*m >= 0.0)) || sw.widths.iter().any(|w| !(*w > 0.0)) {
        return bad("sweep masses must be >= 0 and widths > 0".into());
    }
    if !(s.exponents.p_tilde > 1.0 && s.exponents.moser_steps >= 1) {
        return bad("exponents needs p_tilde > 1 and moser_steps >= 1".into());
    }
    Ok(())
}
