//! Evolutionary stable distribution (ESD) by convex minimization.
//!
//! The ESD species vector minimizes `H` over `f >= 0`; the matching
//! resource follows from [`ModelParams::reconstruct_r`]. The minimization
//! is a projected gradient descent with Armijo backtracking, certified by
//! the complementarity residual `max_i |min(f_i, dH/df_i)|`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};

/// Threshold separating persisting traits from numerically extinct ones.
pub const SUPPORT_EPS: f64 = 1e-8;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAXIT: usize = 100_000;
/// Relative singular-value threshold below which `K` counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const POLISH_STEPS: usize = 20;
const MAX_BACKTRACKS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct EsdResult {
    pub f_tilde: DVector<f64>,
    pub r_tilde: DVector<f64>,
    pub h_at_min: f64,
    pub kkt_residual: f64,
    /// Indices `j` with `f_tilde[j] > SUPPORT_EPS`.
    pub persistence_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// False when `K` is numerically singular; `r_tilde` is then still
    /// unique but `f_tilde` need not be.
    pub unique: bool,
}

impl EsdResult {
    pub fn state(&self) -> State {
        State {
            f: self.f_tilde.clone(),
            r: self.r_tilde.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonsingularity {
    pub nonsingular: bool,
    /// Ratio of extreme singular values; infinite for an exactly singular matrix.
    pub condition_estimate: f64,
}

/// Which ESD condition a candidate violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsdCheck {
    /// `|G_j(R)| <= tol` on the support.
    Stationarity,
    /// `G_j(R) <= tol` off the support.
    Invasion,
    /// `R` equals the resource reconstructed from `f`.
    Resource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsdReport {
    pub is_steady: bool,
    pub is_esd: bool,
    pub worst_violation: f64,
    pub violations: Vec<EsdCheck>,
    pub persistence_set: Vec<usize>,
}

fn complementarity(f: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    f.iter()
        .zip(grad.iter())
        .map(|(fi, gi)| fi.min(*gi).abs())
        .fold(0.0, f64::max)
}

/// `max_i |min(f_i, dH/df_i(f))|`, zero exactly at KKT points of `min H, f >= 0`.
pub fn kkt_residual(params: &ModelParams, f: &DVector<f64>) -> Result<f64> {
    let grad = params.h_gradient(f)?;
    Ok(complementarity(f, &grad))
}

pub fn persistence_set(f: &DVector<f64>) -> Vec<usize> {
    f.iter()
        .enumerate()
        .filter(|(_, v)| **v > SUPPORT_EPS)
        .map(|(j, _)| j)
        .collect()
}

/// Singular-value test on `K` with the condition estimate `s_max / s_min`.
pub fn check_k_nonsingular(params: &ModelParams) -> Nonsingularity {
    let sv = params.k.clone().singular_values();
    let s_max = sv.max();
    let s_min = sv.min();
    let nonsingular = s_max > 0.0 && s_min > SINGULAR_RTOL * s_max;
    let condition_estimate = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    Nonsingularity {
        nonsingular,
        condition_estimate,
    }
}

/// Minimizes `H` over the nonnegative orthant.
///
/// Starts from `f_init`, or from the uniform vector with `|f|_1 = 1/h`.
/// Returns [`Error::NotConverged`] when `maxit` iterations do not bring
/// the KKT residual below `tol`.
pub fn solve_esd(params: &ModelParams, f_init: Option<&DVector<f64>>, tol: f64, maxit: usize) -> Result<EsdResult> {
    let result = minimize_h(params, f_init, tol, maxit)?;
    if !result.converged {
        return Err(Error::NotConverged {
            maxit,
            residual: result.kkt_residual,
        });
    }
    Ok(result)
}

/// Same iteration as [`solve_esd`], but returns the last iterate with
/// `converged == false` instead of failing.
pub fn minimize_h(params: &ModelParams, f_init: Option<&DVector<f64>>, tol: f64, maxit: usize) -> Result<EsdResult> {
    let n = params.n();
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let mut f = match f_init {
        Some(f0) => {
            params.h_value(f0)?;
            f0.clone()
        }
        None => DVector::from_element(n, 1.0 / (params.h * n as f64)),
    };
    let singular = check_k_nonsingular(params);
    if !singular.nonsingular {
        log::warn!(
            "K is numerically singular (condition {:.3e}); the ESD species vector may not be unique",
            singular.condition_estimate
        );
    }

    let mut h_cur = params.h_value_unchecked(&f);
    let mut grad = params.h_gradient_unchecked(&f);
    let mut residual = complementarity(&f, &grad);
    let mut iterations = 0;
    while residual > tol && iterations < maxit {
        iterations += 1;
        let roundoff = 8.0 * f64::EPSILON * (1.0 + h_cur.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = (&f - &grad * step).map(|x| x.max(0.0));
            let h_trial = params.h_value_unchecked(&trial);
            let predicted = grad.dot(&(&trial - &f));
            if h_trial <= h_cur + ARMIJO_C * predicted + roundoff {
                accepted = Some((trial, h_trial));
                break;
            }
            step *= ARMIJO_SHRINK;
        }
        let Some((trial, h_trial)) = accepted else {
            log::debug!("line search stalled at iteration {iterations}, residual {residual:e}");
            break;
        };
        f = trial;
        h_cur = h_trial;
        grad = params.h_gradient_unchecked(&f);
        residual = complementarity(&f, &grad);
    }
    if residual.is_finite() {
        let (fp, hp, rp) = newton_polish(params, f.clone(), residual);
        if rp < residual {
            f = fp;
            h_cur = hp;
            residual = rp;
        }
    }

    let r_tilde = params.reconstruct_r(&f)?;
    Ok(EsdResult {
        persistence_set: persistence_set(&f),
        h_at_min: h_cur,
        kkt_residual: residual,
        converged: residual <= tol,
        iterations,
        unique: singular.nonsingular,
        f_tilde: f,
        r_tilde,
    })
}

// Newton steps restricted to the current support. Projected gradient only
// drives the complementarity residual to `tol`, which leaves an iterate error
// of order tol / lambda_min(H); a few Newton steps remove it.
fn newton_polish(params: &ModelParams, mut f: DVector<f64>, mut residual: f64) -> (DVector<f64>, f64, f64) {
    let mut grad = params.h_gradient_unchecked(&f);
    for _ in 0..POLISH_STEPS {
        let free: Vec<usize> = (0..f.len()).filter(|&j| f[j] > SUPPORT_EPS).collect();
        if free.is_empty() {
            break;
        }
        let Ok(hess) = params.h_hessian(&f) else {
            break;
        };
        let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| hess[(free[a], free[b])]);
        let rhs = DVector::from_fn(free.len(), |a, _| -grad[free[a]]);
        let Some(chol) = sub.cholesky() else {
            break;
        };
        let delta = chol.solve(&rhs);
        let mut trial = f.clone();
        for (a, &j) in free.iter().enumerate() {
            trial[j] = (f[j] + delta[a]).max(0.0);
        }
        let g_trial = params.h_gradient_unchecked(&trial);
        let r_trial = complementarity(&trial, &g_trial);
        if !(r_trial < residual) {
            break;
        }
        f = trial;
        grad = g_trial;
        residual = r_trial;
    }
    let h = params.h_value_unchecked(&f);
    (f, h, residual)
}

/// Checks the ESD conditions for a candidate pair `(f, R)`.
pub fn verify_esd(params: &ModelParams, f: &DVector<f64>, r: &DVector<f64>, tol: f64) -> Result<EsdReport> {
    let g = params.growth_rate(r)?;
    let r_hat = params.reconstruct_r(f)?;
    let mut worst = [0.0f64; 3];
    let mut product = 0.0f64;
    for j in 0..params.n() {
        if f[j] > SUPPORT_EPS {
            worst[0] = worst[0].max(g[j].abs());
        } else {
            worst[1] = worst[1].max(g[j].max(0.0));
        }
        product = product.max((f[j] * g[j]).abs() / (1.0 + f[j]));
    }
    worst[2] = (r - &r_hat).amax();
    let checks = [EsdCheck::Stationarity, EsdCheck::Invasion, EsdCheck::Resource];
    let violations: Vec<EsdCheck> = checks
        .iter()
        .zip(worst.iter())
        .filter(|(_, w)| **w > tol)
        .map(|(c, _)| *c)
        .collect();
    let stationary = worst[0] <= tol && worst[2] <= tol && product <= tol;
    Ok(EsdReport {
        is_steady: stationary,
        is_esd: violations.is_empty(),
        worst_violation: worst.iter().copied().fold(0.0, f64::max),
        violations,
        persistence_set: persistence_set(f),
    })
}

/// Exhaustive grid minimization of `H` over `[0, grid_max]^N`, `N <= 3`.
///
/// Independent of the descent solver; used as an oracle for tiny instances.
pub fn brute_force_esd(params: &ModelParams, grid_max: f64, grid_step: f64) -> Result<DVector<f64>> {
    let n = params.n();
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    if !(grid_step > 0.0 && grid_max >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid needs positive step and nonnegative extent, got step {grid_step}, max {grid_max}"
        )));
    }
    let points = (grid_max / grid_step + 1e-9).floor() as usize + 1;
    let a_star = params.a_star();
    let h = params.h;
    // Flat copies so the inner loop does not allocate.
    let k: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            let mut row = [0.0; 3];
            for (c, slot) in row.iter_mut().enumerate().take(n) {
                *slot = params.k[(j, c)];
            }
            row
        })
        .collect();
    let weights: Vec<f64> = (0..n).map(|c| params.m[c] * params.r_star[c]).collect();
    let eval = |f: &[f64; 3]| -> f64 {
        let mut value = 0.0;
        for j in 0..n {
            value -= a_star[j] * f[j];
        }
        for c in 0..n {
            let mut uptake = 0.0;
            for j in 0..n {
                uptake += k[j][c] * f[j];
            }
            value -= weights[c] * (params.m[c] + h * uptake).ln();
        }
        value
    };

    let total = points.pow(n as u32);
    let mut best = [0.0; 3];
    let mut best_value = f64::INFINITY;
    let mut f = [0.0; 3];
    for idx in 0..total {
        let mut rem = idx;
        for fj in f.iter_mut().take(n) {
            *fj = (rem % points) as f64 * grid_step;
            rem /= points;
        }
        let value = eval(&f);
        if value < best_value {
            best_value = value;
            best = f;
        }
    }
    Ok(DVector::from_fn(n, |j, _| best[j]))
}
