//! Positivity-preserving time stepping.
//!
//! Two schemes share the closed-form resource update
//! `R' = (R + dt m R*) / (1 + dt m + dt h K^T f')`:
//!
//! * semi-implicit: `f' = f / (1 - dt G(R))` with the current resource,
//! * fully-implicit: `f' = f / (1 - dt G(R'))`, solved by alternating the two
//!   updates until successive resource iterates agree in max norm.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::esd::EsdResult;
use crate::model::{DerivedConstants, Diagnostics, ModelParams, State, StepBound};

pub const DEFAULT_FP_TOL: f64 = 1e-12;
pub const DEFAULT_FP_MAXIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SemiImplicit,
    FullyImplicit,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SemiImplicit => "semi",
            Scheme::FullyImplicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semi" | "semi-implicit" => Some(Scheme::SemiImplicit),
            "implicit" | "fully-implicit" => Some(Scheme::FullyImplicit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub fp_tol: f64,
    pub fp_maxit: usize,
    /// Refuse `dt >= mu0` instead of only warning.
    pub enforce_mu0: bool,
}

impl StepConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self {
            dt,
            scheme,
            fp_tol: DEFAULT_FP_TOL,
            fp_maxit: DEFAULT_FP_MAXIT,
            enforce_mu0: false,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "fp_tol must be positive, got {}",
                self.fp_tol
            )));
        }
        if self.fp_maxit == 0 {
            return Err(Error::InvalidConfig("fp_maxit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub diagnostics: Vec<Diagnostics>,
    pub config: StepConfig,
    /// Fixed-point iteration count per step; empty for the semi-implicit scheme.
    pub fp_iterations: Vec<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// The sufficient step bound `mu0 = 1 / (K_M M~ - gamma)_+`.
pub fn max_stable_dt(constants: &DerivedConstants) -> StepBound {
    let excess = constants.k_max * constants.m_tilde - constants.gamma;
    if excess > 0.0 {
        StepBound::Finite(1.0 / excess)
    } else {
        StepBound::Unbounded
    }
}

fn species_update(params: &ModelParams, f: &DVector<f64>, r: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let g = params.growth_rate_unchecked(r);
    let mut out = DVector::zeros(f.len());
    for j in 0..f.len() {
        let denominator = 1.0 - dt * g[j];
        if !(denominator > 0.0) {
            return Err(Error::StepRejected {
                trait_index: j,
                denominator,
            });
        }
        out[j] = f[j] / denominator;
    }
    Ok(out)
}

fn resource_update(params: &ModelParams, r: &DVector<f64>, f_new: &DVector<f64>, dt: f64) -> DVector<f64> {
    let uptake = params.consumption(f_new);
    DVector::from_fn(r.len(), |c, _| {
        (r[c] + dt * params.m[c] * params.r_star[c]) / (1.0 + dt * params.m[c] + dt * uptake[c])
    })
}

fn check_step_inputs(params: &ModelParams, state: &State, dt: f64) -> Result<()> {
    if state.f.len() != params.n() || state.r.len() != params.n() {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: params.n(),
            found: state.f.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// One step of the semi-implicit scheme.
pub fn step_semi_implicit(params: &ModelParams, state: &State, dt: f64) -> Result<State> {
    check_step_inputs(params, state, dt)?;
    let f = species_update(params, &state.f, &state.r, dt)?;
    let r = resource_update(params, &state.r, &f, dt);
    Ok(State { f, r })
}

/// One step of the fully-implicit scheme.
///
/// Returns the new state and the index `L` of the last correction, i.e.
/// the first `L` with `|R^{L+1} - R^L|_inf <= fp_tol`; the state is
/// `(f^L, R^{L+1})`.
pub fn step_fully_implicit(
    params: &ModelParams,
    state: &State,
    dt: f64,
    fp_tol: f64,
    fp_maxit: usize,
) -> Result<(State, usize)> {
    check_step_inputs(params, state, dt)?;
    let mut r_iter = state.r.clone();
    let mut increment = f64::INFINITY;
    for l in 0..=fp_maxit {
        let f = species_update(params, &state.f, &r_iter, dt)?;
        let r_next = resource_update(params, &state.r, &f, dt);
        increment = (&r_next - &r_iter).amax();
        if increment <= fp_tol {
            return Ok((State { f, r: r_next }, l));
        }
        r_iter = r_next;
    }
    Err(Error::FixedPointDiverged {
        iterations: fp_maxit,
        increment,
    })
}

/// Residual of the implicit relations at a proposed update `prev -> next`,
/// in max norm over both equations.
pub fn implicit_residual(params: &ModelParams, prev: &State, next: &State, dt: f64) -> f64 {
    let g = params.growth_rate_unchecked(&next.r);
    let uptake = params.consumption(&next.f);
    let mut worst = 0.0f64;
    for j in 0..params.n() {
        let res = next.f[j] - prev.f[j] - dt * next.f[j] * g[j];
        worst = worst.max(res.abs());
    }
    for c in 0..params.n() {
        let res = next.r[c] - prev.r[c] - dt * (params.m[c] * (params.r_star[c] - next.r[c]) - next.r[c] * uptake[c]);
        worst = worst.max(res.abs());
    }
    worst
}

fn check_recorded(state: &State, step: usize) -> Result<()> {
    if let Some(j) = state.f.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidState {
            step,
            detail: format!("f[{j}] = {}", state.f[j]),
        });
    }
    if let Some(c) = state.r.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidState {
            step,
            detail: format!("R[{c}] = {}", state.r[c]),
        });
    }
    Ok(())
}

/// Step sizes reaching `t_final` exactly: uniform `dt`, last one shortened.
pub fn step_schedule(t_final: f64, dt: f64) -> Vec<f64> {
    let ratio = t_final / dt;
    let rounded = ratio.round();
    let full = if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.floor() as usize
    };
    let mut steps = vec![dt; full];
    let rest = t_final - full as f64 * dt;
    if rest > 1e-9 * dt {
        steps.push(rest);
    }
    steps
}

/// Integrates from `state0` to `t_final`, recording every step.
///
/// `reference`, when given, is the state the relative entropy `S` and the
/// quadratic functional `Q` are measured against.
pub fn simulate(
    params: &ModelParams,
    state0: &State,
    t_final: f64,
    config: &StepConfig,
    reference: Option<&State>,
) -> Result<Trajectory> {
    config.check()?;
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    let constants = params.validate(state0)?;
    if let StepBound::Finite(mu0) = max_stable_dt(&constants) {
        if config.dt >= mu0 {
            if config.enforce_mu0 {
                return Err(Error::Mu0Violation { dt: config.dt, mu0 });
            }
            log::warn!(
                "dt = {} exceeds the sufficient positivity bound mu0 = {mu0:.6e}; proceeding",
                config.dt
            );
        }
    }

    let schedule = step_schedule(t_final, config.dt);
    let mut times = Vec::with_capacity(schedule.len() + 1);
    let mut states = Vec::with_capacity(schedule.len() + 1);
    let mut diagnostics = Vec::with_capacity(schedule.len() + 1);
    let mut fp_iterations = Vec::new();

    let mut t = 0.0;
    let mut state = state0.clone();
    times.push(t);
    diagnostics.push(params.diagnostics(&state, reference)?);
    states.push(state.clone());

    for (i, &dt) in schedule.iter().enumerate() {
        let step = i + 1;
        let next = match config.scheme {
            Scheme::SemiImplicit => step_semi_implicit(params, &state, dt),
            Scheme::FullyImplicit => {
                step_fully_implicit(params, &state, dt, config.fp_tol, config.fp_maxit).map(|(s, iters)| {
                    fp_iterations.push(iters);
                    s
                })
            }
        }
        .map_err(|e| Error::AtStep {
            step,
            time: t,
            source: Box::new(e),
        })?;
        check_recorded(&next, step)?;
        t = if step == schedule.len() {
            t_final
        } else {
            step as f64 * config.dt
        };
        times.push(t);
        diagnostics.push(params.diagnostics(&next, reference)?);
        states.push(next.clone());
        state = next;
    }

    Ok(Trajectory {
        times,
        states,
        diagnostics,
        config: *config,
        fp_iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyPoint {
    pub t: f64,
    pub s: f64,
    /// `-dt sum_k m_k R*_k (R_k - R~_k)^2 / (R_k R~_k)` for the step ending here; zero at `t = 0`.
    pub dissipation_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub points: Vec<EntropyPoint>,
    /// Step indices (ending state) whose entropy change exceeds the bound;
    /// only populated for fully-implicit trajectories.
    pub flagged: Vec<usize>,
    /// Largest `(S^{n+1} - S^n) - bound` over all steps.
    pub max_excess: f64,
}

/// Slack allowed on the discrete dissipation inequality, relative to `1 + |S^n|`.
pub const ENTROPY_SLACK: f64 = 1e-10;

/// Relative entropy along `trajectory` against the ESD, with the per-step
/// dissipation bound of the fully-implicit scheme.
pub fn entropy_trace(params: &ModelParams, trajectory: &Trajectory, esd: &EsdResult) -> Result<EntropyTrace> {
    let reference = esd.state();
    let mut points = Vec::with_capacity(trajectory.states.len());
    let mut flagged = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for (n, (state, &t)) in trajectory.states.iter().zip(trajectory.times.iter()).enumerate() {
        let s = state.lyapunov_s(&reference)?;
        let bound = if n == 0 {
            0.0
        } else {
            let dt = t - trajectory.times[n - 1];
            let sum: f64 = (0..params.n())
                .map(|c| {
                    let d = state.r[c] - reference.r[c];
                    params.m[c] * params.r_star[c] * d * d / (state.r[c] * reference.r[c])
                })
                .sum();
            -dt * sum
        };
        if n > 0 {
            let prev: &EntropyPoint = &points[n - 1];
            let excess = (s - prev.s) - bound;
            max_excess = max_excess.max(excess);
            if trajectory.config.scheme == Scheme::FullyImplicit && excess > ENTROPY_SLACK * (1.0 + prev.s.abs()) {
                flagged.push(n);
            }
        }
        points.push(EntropyPoint {
            t,
            s,
            dissipation_bound: bound,
        });
    }
    if max_excess == f64::NEG_INFINITY {
        max_excess = 0.0;
    }
    Ok(EntropyTrace {
        points,
        flagged,
        max_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn n1() -> ModelParams {
        ModelParams::from_rows(1.0, &[0.5], &[&[1.0]], &[1.0], &[1.0]).unwrap()
    }

    fn st(f: &[f64], r: &[f64]) -> State {
        State::from_slices(f, r).unwrap()
    }

    #[test]
    fn semi_implicit_resource_relaxation() {
        let p = n1();
        let next = step_semi_implicit(&p, &st(&[0.0], &[2.0]), 0.1).unwrap();
        assert_eq!(next.f[0], 0.0);
        assert_relative_eq!(next.r[0], 2.1 / 1.1, epsilon = 1e-15);
    }

    #[test]
    fn semi_implicit_hand_step() {
        let p = n1();
        let next = step_semi_implicit(&p, &st(&[1.0], &[1.0]), 0.1).unwrap();
        let f = 1.0 / 0.95;
        assert_relative_eq!(next.f[0], f, epsilon = 1e-15);
        assert_relative_eq!(next.r[0], 1.1 / (1.1 + 0.1 * f), epsilon = 1e-15);
        assert_relative_eq!(next.f[0], 1.05263, epsilon = 1e-5);
        assert_relative_eq!(next.r[0], 0.91266, epsilon = 1e-5);
    }

    #[test]
    fn esd_is_fixed_by_both_schemes() {
        let p = n1();
        let esd = st(&[1.0], &[0.5]);
        let semi = step_semi_implicit(&p, &esd, 0.1).unwrap();
        assert!(semi.max_distance(&esd) < 1e-15);
        let (imp, iters) = step_fully_implicit(&p, &esd, 0.1, 1e-12, 200).unwrap();
        assert!(imp.max_distance(&esd) < 1e-12);
        assert_eq!(iters, 0);
    }

    #[test]
    fn implicit_with_no_species_matches_semi() {
        let p = n1();
        let s = st(&[0.0], &[2.0]);
        let (imp, iters) = step_fully_implicit(&p, &s, 0.1, 1e-12, 200).unwrap();
        assert_eq!(iters, 1);
        assert_eq!(imp, step_semi_implicit(&p, &s, 0.1).unwrap());
    }

    #[test]
    fn implicit_hand_step_self_consistent() {
        let p = n1();
        let s = st(&[1.0], &[1.0]);
        let (next, _) = step_fully_implicit(&p, &s, 0.1, 1e-12, 200).unwrap();
        let g = 0.5 + (next.r[0] - 1.0);
        assert!((next.f[0] - 1.0 / (1.0 - 0.1 * g)).abs() < 1e-11);
        assert!((next.r[0] - 1.1 / (1.1 + 0.1 * next.f[0])).abs() < 1e-11);
        assert!(implicit_residual(&p, &s, &next, 0.1) < 1e-11);
    }

    #[test]
    fn nonpositive_denominator_rejects_step() {
        let p = n1();
        let err = step_semi_implicit(&p, &st(&[1.0], &[1.0]), 2.0).unwrap_err();
        assert!(matches!(err, Error::StepRejected { trait_index: 0, .. }));
    }

    #[test]
    fn fixed_point_budget_exhaustion() {
        let p = n1();
        let err = step_fully_implicit(&p, &st(&[1.0], &[1.0]), 0.1, 1e-300, 3).unwrap_err();
        assert!(matches!(err, Error::FixedPointDiverged { iterations: 3, .. }));
    }

    #[test]
    fn step_bound_examples() {
        let mut c = n1().validate(&st(&[1.0], &[1.0])).unwrap();
        assert_relative_eq!(max_stable_dt(&c).as_f64(), 1.0 / 3.5, epsilon = 1e-15);
        c.k_max = 1.0;
        c.m_tilde = 2.0;
        c.gamma = 0.5;
        assert_relative_eq!(max_stable_dt(&c).as_f64(), 1.0 / 1.5, epsilon = 1e-15);
        c.k_max = 0.0;
        assert_eq!(max_stable_dt(&c), StepBound::Unbounded);
    }

    #[test]
    fn schedule_hits_final_time() {
        assert_eq!(step_schedule(1.0, 0.25), vec![0.25; 4]);
        let s = step_schedule(1.0, 0.3);
        assert_eq!(s.len(), 4);
        assert_relative_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(step_schedule(20.0, 0.4).len(), 50);
    }

    #[test]
    fn mu0_guard() {
        let p = n1();
        let mut cfg = StepConfig::new(0.3, Scheme::FullyImplicit);
        cfg.enforce_mu0 = true;
        let err = simulate(&p, &st(&[1.0], &[1.0]), 1.0, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Mu0Violation { .. }));
        cfg.enforce_mu0 = false;
        assert!(simulate(&p, &st(&[1.0], &[1.0]), 1.0, &cfg, None).is_ok());
    }

    #[test]
    fn zero_species_stay_zero() {
        let p = n1();
        let cfg = StepConfig::new(0.1, Scheme::SemiImplicit);
        let traj = simulate(&p, &st(&[0.0], &[3.0]), 30.0, &cfg, None).unwrap();
        assert!(traj.states.iter().all(|s| s.f[0] == 0.0));
        assert!((traj.last().r[0] - 1.0).abs() < 1e-12);
        // Geometric relaxation: each step contracts the gap by 1/(1 + dt m).
        let gaps: Vec<f64> = traj.states.iter().map(|s| s.r[0] - 1.0).collect();
        for w in gaps.windows(2).take(50) {
            assert_relative_eq!(w[1] / w[0], 1.0 / 1.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn entropy_trace_at_esd_is_flat() {
        let p = n1();
        let esd = crate::esd::solve_esd(&p, None, 1e-12, 1000).unwrap();
        let cfg = StepConfig::new(0.1, Scheme::FullyImplicit);
        let traj = simulate(&p, &esd.state(), 2.0, &cfg, Some(&esd.state())).unwrap();
        let trace = entropy_trace(&p, &traj, &esd).unwrap();
        assert!(trace.flagged.is_empty());
        let s0 = trace.points[0].s;
        for pt in &trace.points {
            assert!((pt.s - s0).abs() < 1e-12);
            assert!(pt.dissipation_bound.abs() < 1e-20);
        }
    }
}
