//! Scenario descriptions on a one-dimensional trait window and their
//! discretization into [`ModelParams`].
//!
//! Traits and resources share the midpoint grid
//! `x_j = center - L/2 + (j - 1/2) h`, `h = L/N`. The resource supply and the
//! consumption kernel are Gaussians:
//!
//! ```text
//! R*(y)  = exp(-y^2 / (2 s*^2)) / (sqrt(2 pi) s*)
//! K(x,y) = exp(-(x-y)^2 / (2 sK^2)) / (sqrt(2 pi) sK)
//! ```
//!
//! Scenario files are flat `key = value` text; see [`load_scenario`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::esd::check_k_nonsingular;
use crate::integrator::{Scheme, StepConfig, DEFAULT_FP_MAXIT, DEFAULT_FP_TOL};
use crate::model::{ModelParams, State};

/// Condition estimate above which the builder warns about a nearly singular kernel.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    /// `a(x) = c2 x^2 + c0`.
    Quadratic { c2: f64, c0: f64 },
}

impl Growth {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Growth::Quadratic { c2, c0 } => c2 * x * x + c0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialF {
    /// `amp * exp(-x^2 / (2 sigma^2))`.
    Gaussian {
        amp: f64,
        sigma: f64,
    },
    /// `sin(freq * x) + offset`.
    SinePlus {
        freq: f64,
        offset: f64,
    },
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialR {
    EqualsRstar,
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub n: usize,
    pub l: f64,
    pub center: f64,
    pub sigma_star: f64,
    pub sigma_k: f64,
    pub growth: Growth,
    pub m_const: f64,
    pub initial_f: InitialF,
    pub initial_r: InitialR,
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub fp_tol: f64,
    pub fp_maxit: usize,
    pub enforce_mu0: bool,
}

fn gaussian_density(z: f64, sigma: f64) -> f64 {
    (-z * z / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma)
}

impl ScenarioSpec {
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Midpoint nodes shared by traits and resources.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n)
            .map(|j| self.center - 0.5 * self.l + (j as f64 + 0.5) * h)
            .collect()
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            scheme: self.scheme,
            fp_tol: self.fp_tol,
            fp_maxit: self.fp_maxit,
            enforce_mu0: self.enforce_mu0,
        }
    }

    fn check(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive and finite, got {v}")))
            }
        }
        if self.n == 0 {
            return Err(invalid("N", "must be a positive integer".into()));
        }
        positive("L", self.l)?;
        if !self.center.is_finite() {
            return Err(invalid("center", "must be finite".into()));
        }
        positive("sigma_star", self.sigma_star)?;
        positive("sigma_K", self.sigma_k)?;
        let Growth::Quadratic { c2, c0 } = self.growth;
        if !c2.is_finite() {
            return Err(invalid("growth.c2", "must be finite".into()));
        }
        if !c0.is_finite() {
            return Err(invalid("growth.c0", "must be finite".into()));
        }
        positive("m_const", self.m_const)?;
        match self.initial_f {
            InitialF::Gaussian { amp, sigma } => {
                if !(amp >= 0.0 && amp.is_finite()) {
                    return Err(invalid("initial_f.amp", format!("must be nonnegative, got {amp}")));
                }
                positive("initial_f.sigma", sigma)?;
            }
            InitialF::SinePlus { freq, offset } => {
                if !freq.is_finite() {
                    return Err(invalid("initial_f.freq", "must be finite".into()));
                }
                if !(offset >= 1.0 && offset.is_finite()) {
                    return Err(invalid(
                        "initial_f.offset",
                        format!("must be at least 1 to keep f0 nonnegative, got {offset}"),
                    ));
                }
            }
            InitialF::Zero => {}
        }
        if let InitialR::Constant { value } = self.initial_r {
            positive("initial_R.value", value)?;
        }
        positive("dt", self.dt)?;
        positive("T_final", self.t_final)?;
        positive("fp_tol", self.fp_tol)?;
        if self.fp_maxit == 0 {
            return Err(invalid("fp_maxit", "must be at least 1".into()));
        }
        Ok(())
    }
}

fn invalid(field: &str, message: String) -> Error {
    Error::Validation {
        field: field.to_string(),
        message,
    }
}

/// Discretizes `spec` into coefficients and an initial state, and checks the
/// standing assumptions on the result.
pub fn build_params(spec: &ScenarioSpec) -> Result<(ModelParams, State)> {
    spec.check()?;
    let n = spec.n;
    let h = spec.h();
    let x = spec.grid();
    let a = DVector::from_fn(n, |j, _| spec.growth.eval(x[j]));
    let k = DMatrix::from_fn(n, n, |j, c| gaussian_density(x[j] - x[c], spec.sigma_k));
    let m = DVector::from_element(n, spec.m_const);
    let r_star = DVector::from_fn(n, |c, _| gaussian_density(x[c], spec.sigma_star));
    let f0 = DVector::from_fn(n, |j, _| match spec.initial_f {
        InitialF::Gaussian { amp, sigma } => amp * (-x[j] * x[j] / (2.0 * sigma * sigma)).exp(),
        // Clamp round-off below zero when offset == 1 and sin hits -1.
        InitialF::SinePlus { freq, offset } => ((freq * x[j]).sin() + offset).max(0.0),
        InitialF::Zero => 0.0,
    });
    let r0 = match spec.initial_r {
        InitialR::EqualsRstar => r_star.clone(),
        InitialR::Constant { value } => DVector::from_element(n, value),
    };
    let params = ModelParams::new(h, a, k, m, r_star)?;
    let initial = State::new(f0, r0)?;
    params.validate(&initial)?;
    let conditioning = check_k_nonsingular(&params);
    if !conditioning.nonsingular || conditioning.condition_estimate > NEAR_SINGULAR_CONDITION {
        log::warn!(
            "consumption kernel is nearly singular (condition {:.3e}); ESD species vector may be ill-determined",
            conditioning.condition_estimate
        );
    }
    Ok((params, initial))
}

/// The two Gaussian examples and the single-trait closed-form instance.
pub fn builtin_presets() -> Vec<(&'static str, ScenarioSpec)> {
    let example1 = ScenarioSpec {
        n: 40,
        l: 2.0,
        center: 0.0,
        sigma_star: 0.1,
        sigma_k: 0.2,
        growth: Growth::Quadratic { c2: -2.0, c0: 0.5 },
        m_const: 1.0,
        initial_f: InitialF::Gaussian {
            amp: 5.0 / (2.0 * PI).sqrt(),
            sigma: 1.0,
        },
        initial_r: InitialR::EqualsRstar,
        dt: 0.4,
        t_final: 3000.0,
        scheme: Scheme::SemiImplicit,
        fp_tol: DEFAULT_FP_TOL,
        fp_maxit: DEFAULT_FP_MAXIT,
        enforce_mu0: false,
    };
    let example2 = ScenarioSpec {
        growth: Growth::Quadratic { c2: -2.0, c0: 0.0 },
        initial_f: InitialF::SinePlus {
            freq: 100.0,
            offset: 1.0,
        },
        initial_r: InitialR::Constant { value: 1.0 },
        t_final: 20.0,
        ..example1
    };
    // One trait on a unit cell: h = 1, K = R* = 1 at x = 0, a = 0.5, m = 1.
    let unit_width = 1.0 / (2.0 * PI).sqrt();
    let n1 = ScenarioSpec {
        n: 1,
        l: 1.0,
        center: 0.0,
        sigma_star: unit_width,
        sigma_k: unit_width,
        growth: Growth::Quadratic { c2: 0.0, c0: 0.5 },
        m_const: 1.0,
        initial_f: InitialF::Gaussian { amp: 1.0, sigma: 1.0 },
        initial_r: InitialR::Constant { value: 1.0 },
        dt: 0.1,
        t_final: 100.0,
        scheme: Scheme::SemiImplicit,
        fp_tol: DEFAULT_FP_TOL,
        fp_maxit: DEFAULT_FP_MAXIT,
        enforce_mu0: false,
    };
    vec![("example1", example1), ("example2", example2), ("n1-closedform", n1)]
}

pub fn preset(name: &str) -> Option<ScenarioSpec> {
    builtin_presets().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}

const KEYS: [&str; 21] = [
    "N",
    "L",
    "center",
    "sigma_star",
    "sigma_K",
    "growth.c2",
    "growth.c0",
    "m_const",
    "initial_f.kind",
    "initial_f.amp",
    "initial_f.sigma",
    "initial_f.freq",
    "initial_f.offset",
    "initial_R.kind",
    "initial_R.value",
    "dt",
    "T_final",
    "scheme",
    "fp_tol",
    "fp_maxit",
    "enforce_mu0",
];

struct Entries {
    values: BTreeMap<&'static str, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Result<Option<(usize, &str)>> {
        Ok(self.values.get(key).map(|(line, v)| (*line, v.as_str())))
    }

    fn required(&self, key: &str) -> Result<(usize, &str)> {
        self.raw(key)?
            .ok_or_else(|| invalid(key, "missing required key".into()))
    }

    fn number(&self, key: &str) -> Result<f64> {
        let (line, v) = self.required(key)?;
        parse_number(line, key, v)
    }

    fn number_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key)? {
            Some((line, v)) => parse_number(line, key, v),
            None => Ok(default),
        }
    }

    fn reject(&self, key: &str, reason: &str) -> Result<()> {
        if self.values.contains_key(key) {
            return Err(invalid(key, format!("not allowed {reason}")));
        }
        Ok(())
    }
}

fn parse_number(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}`: `{v}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(invalid(key, format!("must be finite, got {v}")));
    }
    Ok(x)
}

fn parse_count(line: usize, key: &str, v: &str) -> Result<usize> {
    let x: i64 = v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}`: `{v}` is not an integer"),
    })?;
    if x <= 0 {
        return Err(invalid(key, format!("must be a positive integer, got {x}")));
    }
    Ok(x as usize)
}

/// Parses scenario text: one `key = value` per line, `#` starts a comment.
///
/// Unknown or duplicated keys are parse errors; out-of-range values are
/// validation errors naming the field. `center`, `scheme`, `fp_tol`,
/// `fp_maxit` and `enforce_mu0` are optional.
pub fn load_scenario(text: &str) -> Result<ScenarioSpec> {
    let mut values = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let Some(known) = KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        };
        if value.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("`{key}` has no value"),
            });
        }
        if values.insert(*known, (line, value.to_string())).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    let e = Entries { values };

    let (line, n_raw) = e.required("N")?;
    let n = parse_count(line, "N", n_raw)?;
    let (_, f_kind) = e.required("initial_f.kind")?;
    let initial_f = match f_kind {
        "gaussian" => {
            e.reject("initial_f.freq", "for a gaussian initial profile")?;
            e.reject("initial_f.offset", "for a gaussian initial profile")?;
            InitialF::Gaussian {
                amp: e.number("initial_f.amp")?,
                sigma: e.number("initial_f.sigma")?,
            }
        }
        "sine_plus" => {
            e.reject("initial_f.amp", "for a sine_plus initial profile")?;
            e.reject("initial_f.sigma", "for a sine_plus initial profile")?;
            InitialF::SinePlus {
                freq: e.number("initial_f.freq")?,
                offset: e.number("initial_f.offset")?,
            }
        }
        "zero" => {
            for key in ["initial_f.amp", "initial_f.sigma", "initial_f.freq", "initial_f.offset"] {
                e.reject(key, "for a zero initial profile")?;
            }
            InitialF::Zero
        }
        other => {
            return Err(invalid(
                "initial_f.kind",
                format!("expected gaussian, sine_plus or zero, got `{other}`"),
            ))
        }
    };
    let (_, r_kind) = e.required("initial_R.kind")?;
    let initial_r = match r_kind {
        "r_star" => {
            e.reject("initial_R.value", "when initial_R.kind = r_star")?;
            InitialR::EqualsRstar
        }
        "constant" => InitialR::Constant {
            value: e.number("initial_R.value")?,
        },
        other => {
            return Err(invalid(
                "initial_R.kind",
                format!("expected r_star or constant, got `{other}`"),
            ))
        }
    };
    let scheme = match e.raw("scheme")? {
        Some((_, s)) => {
            Scheme::parse(s).ok_or_else(|| invalid("scheme", format!("expected semi or implicit, got `{s}`")))?
        }
        None => Scheme::SemiImplicit,
    };
    let fp_maxit = match e.raw("fp_maxit")? {
        Some((line, v)) => parse_count(line, "fp_maxit", v)?,
        None => DEFAULT_FP_MAXIT,
    };
    let enforce_mu0 = match e.raw("enforce_mu0")? {
        Some((_, "true")) => true,
        Some((_, "false")) | None => false,
        Some((_, other)) => return Err(invalid("enforce_mu0", format!("expected true or false, got `{other}`"))),
    };

    let spec = ScenarioSpec {
        n,
        l: e.number("L")?,
        center: e.number_or("center", 0.0)?,
        sigma_star: e.number("sigma_star")?,
        sigma_k: e.number("sigma_K")?,
        growth: Growth::Quadratic {
            c2: e.number("growth.c2")?,
            c0: e.number("growth.c0")?,
        },
        m_const: e.number("m_const")?,
        initial_f,
        initial_r,
        dt: e.number("dt")?,
        t_final: e.number("T_final")?,
        scheme,
        fp_tol: e.number_or("fp_tol", DEFAULT_FP_TOL)?,
        fp_maxit,
        enforce_mu0,
    };
    spec.check()?;
    Ok(spec)
}

/// Canonical text form: every applicable key in fixed order, shortest
/// round-trip number formatting.
pub fn save_scenario(spec: &ScenarioSpec) -> String {
    let mut lines: Vec<(&str, String)> = vec![
        ("N", spec.n.to_string()),
        ("L", num(spec.l)),
        ("center", num(spec.center)),
        ("sigma_star", num(spec.sigma_star)),
        ("sigma_K", num(spec.sigma_k)),
    ];
    let Growth::Quadratic { c2, c0 } = spec.growth;
    lines.push(("growth.c2", num(c2)));
    lines.push(("growth.c0", num(c0)));
    lines.push(("m_const", num(spec.m_const)));
    match spec.initial_f {
        InitialF::Gaussian { amp, sigma } => {
            lines.push(("initial_f.kind", "gaussian".into()));
            lines.push(("initial_f.amp", num(amp)));
            lines.push(("initial_f.sigma", num(sigma)));
        }
        InitialF::SinePlus { freq, offset } => {
            lines.push(("initial_f.kind", "sine_plus".into()));
            lines.push(("initial_f.freq", num(freq)));
            lines.push(("initial_f.offset", num(offset)));
        }
        InitialF::Zero => lines.push(("initial_f.kind", "zero".into())),
    }
    match spec.initial_r {
        InitialR::EqualsRstar => lines.push(("initial_R.kind", "r_star".into())),
        InitialR::Constant { value } => {
            lines.push(("initial_R.kind", "constant".into()));
            lines.push(("initial_R.value", num(value)));
        }
    }
    lines.push(("dt", num(spec.dt)));
    lines.push(("T_final", num(spec.t_final)));
    lines.push(("scheme", spec.scheme.name().into()));
    lines.push(("fp_tol", num(spec.fp_tol)));
    lines.push(("fp_maxit", spec.fp_maxit.to_string()));
    lines.push(("enforce_mu0", spec.enforce_mu0.to_string()));
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// `Debug` formatting of `f64` is the shortest text that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x:?}")
}
