//! Threshold predicates and explicit construction of concentrated steady
//! states (one or two occupied traits).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::esd::EsdResult;
use crate::model::ModelParams;

/// Relative bisection tolerance on the root location.
pub const ROOT_RTOL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 1100;
const NEWTON_MAXIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Extinction,
    Survival,
}

/// Extinction iff every intrinsic growth rate is nonpositive.
pub fn extinction_predicate(params: &ModelParams) -> Outcome {
    if params.a.iter().all(|&a| a <= 0.0) {
        Outcome::Extinction
    } else {
        Outcome::Survival
    }
}

/// True when `sum_j a_j < 0`, which rules out steady states positive on every trait.
/// A false result is inconclusive.
pub fn positive_steady_state_excluded(params: &ModelParams) -> bool {
    params.a.sum() < 0.0
}

/// `sum_{j in persistence set} a_j`; nonnegative at any steady state.
pub fn persistence_sum(esd: &EsdResult, params: &ModelParams) -> f64 {
    // start from +0.0 so the empty sum is not -0.0
    esd.persistence_set.iter().fold(0.0, |acc, &j| acc + params.a[j])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiracSteadyState {
    pub trait_index: usize,
    pub rho_bar: f64,
    pub f_tilde: DVector<f64>,
    pub r_tilde: DVector<f64>,
}

/// `g(rho) = a_i - h sum_k K_ik R*_k + h sum_k m_k R*_k K_ik / (m_k + rho K_ik)`.
pub fn dirac_g(params: &ModelParams, i: usize, rho: f64) -> f64 {
    let h = params.h;
    let mut value = params.a[i];
    for c in 0..params.n() {
        let kic = params.k[(i, c)];
        if kic == 0.0 {
            continue;
        }
        let (m, rs) = (params.m[c], params.r_star[c]);
        value += h * kic * rs * (m / (m + rho * kic) - 1.0);
    }
    value
}

/// Root of a decreasing function with `phi(0) > 0`: doubles the upper end
/// from 1 until the sign changes, then bisects. `None` when `phi` stays
/// nonnegative, i.e. the root sits at infinity.
fn decreasing_root(phi: impl Fn(f64) -> f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while phi(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..400 {
        if hi - lo <= ROOT_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if phi(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Single-trait steady state `f~ = (rho/h) e_i`.
pub fn dirac_steady_state(params: &ModelParams, i: usize) -> Result<DiracSteadyState> {
    if i >= params.n() {
        return Err(Error::NotApplicable(format!("trait {i} out of range")));
    }
    if !(params.a[i] > 0.0) {
        return Err(Error::NotApplicable(format!(
            "a[{i}] = {} is not positive, so g has no positive root",
            params.a[i]
        )));
    }
    let rho_bar = decreasing_root(|rho| dirac_g(params, i, rho))
        .ok_or_else(|| Error::NotApplicable(format!("g stays positive for trait {i}; check a*[{i}] < 0")))?;
    let mut f_tilde = DVector::zeros(params.n());
    f_tilde[i] = rho_bar / params.h;
    let r_tilde = DVector::from_fn(params.n(), |c, _| {
        params.m[c] * params.r_star[c] / (params.m[c] + rho_bar * params.k[(i, c)])
    });
    Ok(DiracSteadyState {
        trait_index: i,
        rho_bar,
        f_tilde,
        r_tilde,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPeakSteadyState {
    pub i: usize,
    pub l: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub f_tilde: DVector<f64>,
    pub r_tilde: DVector<f64>,
    pub newton_iterations: usize,
}

/// Zeros of `F_1` and `F_2` along the coordinate axes; `INFINITY` when the
/// function keeps its sign along the whole axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRoots {
    /// `F_1(rho, 0) = 0`.
    pub rho1_i: f64,
    /// `F_1(0, rho) = 0`.
    pub rho2_i: f64,
    /// `F_2(rho, 0) = 0`.
    pub rho1_l: f64,
    /// `F_2(0, rho) = 0`.
    pub rho2_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TwoPeakOutcome {
    Found(TwoPeakSteadyState),
    /// `F_2(rho1_i, 0) * F_2(0, rho2_i) >= 0`: the zero curves need not cross.
    ConditionFailed {
        axes: AxisRoots,
        f2_on_rho1_axis: f64,
        f2_on_rho2_axis: f64,
    },
    /// Newton converged towards the boundary of the positive quadrant.
    LeftQuadrant {
        rho1: f64,
        rho2: f64,
    },
}

struct PeakPair<'a> {
    params: &'a ModelParams,
    i: usize,
    l: usize,
}

// rho * K with 0 * inf taken as 0.
fn scaled(rho: f64, k: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        rho * k
    }
}

impl PeakPair<'_> {
    fn values(&self, rho1: f64, rho2: f64) -> [f64; 2] {
        let p = self.params;
        let a_star = p.a_star();
        let mut out = [a_star[self.i], a_star[self.l]];
        for c in 0..p.n() {
            let (ki, kl) = (p.k[(self.i, c)], p.k[(self.l, c)]);
            let w = p.m[c] * p.r_star[c] / (p.m[c] + scaled(rho1, ki) + scaled(rho2, kl));
            out[0] += p.h * ki * w;
            out[1] += p.h * kl * w;
        }
        out
    }

    fn jacobian(&self, rho1: f64, rho2: f64) -> [[f64; 2]; 2] {
        let p = self.params;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..p.n() {
            let (ki, kl) = (p.k[(self.i, c)], p.k[(self.l, c)]);
            let den = p.m[c] + rho1 * ki + rho2 * kl;
            let w = p.h * p.m[c] * p.r_star[c] / (den * den);
            jac[0][0] -= w * ki * ki;
            jac[0][1] -= w * ki * kl;
            jac[1][1] -= w * kl * kl;
        }
        jac[1][0] = jac[0][1];
        jac
    }
}

fn root_or_inf(phi: impl Fn(f64) -> f64) -> f64 {
    decreasing_root(phi).unwrap_or(f64::INFINITY)
}

/// Two-trait steady state `f~ = (rho1 e_i + rho2 e_l) / h`.
///
/// Evaluates the crossing condition on the axis zeros of `F_1`, `F_2`; when it
/// holds, solves `F_1 = F_2 = 0` by damped Newton from the averaged axis zeros.
pub fn two_peak_steady_state(params: &ModelParams, i: usize, l: usize) -> Result<TwoPeakOutcome> {
    let n = params.n();
    if i == l || i >= n || l >= n {
        return Err(Error::NotApplicable(format!(
            "need two distinct traits in range, got ({i}, {l})"
        )));
    }
    if !(params.a[i] > 0.0 && params.a[l] > 0.0) {
        return Err(Error::NotApplicable(format!(
            "both growth rates must be positive, got a[{i}] = {}, a[{l}] = {}",
            params.a[i], params.a[l]
        )));
    }
    let pair = PeakPair { params, i, l };
    let axes = AxisRoots {
        rho1_i: root_or_inf(|r| pair.values(r, 0.0)[0]),
        rho2_i: root_or_inf(|r| pair.values(0.0, r)[0]),
        rho1_l: root_or_inf(|r| pair.values(r, 0.0)[1]),
        rho2_l: root_or_inf(|r| pair.values(0.0, r)[1]),
    };
    let f2_on_rho1_axis = pair.values(axes.rho1_i, 0.0)[1];
    let f2_on_rho2_axis = pair.values(0.0, axes.rho2_i)[1];
    if !(f2_on_rho1_axis * f2_on_rho2_axis < 0.0) {
        return Ok(TwoPeakOutcome::ConditionFailed {
            axes,
            f2_on_rho1_axis,
            f2_on_rho2_axis,
        });
    }

    let finite_mean = |a: f64, b: f64| match (a.is_finite(), b.is_finite()) {
        (true, true) => 0.5 * (a + b),
        (true, false) => a,
        (false, true) => b,
        (false, false) => 1.0,
    };
    let mut rho = [
        finite_mean(axes.rho1_i, axes.rho1_l),
        finite_mean(axes.rho2_i, axes.rho2_l),
    ];
    let scale = params.a[i].abs().max(params.a[l].abs()).max(1.0);
    let norm = |v: [f64; 2]| v[0].abs().max(v[1].abs());
    let mut residual = pair.values(rho[0], rho[1]);
    for iteration in 0..NEWTON_MAXIT {
        if norm(residual) <= 1e-14 * scale {
            let mut f_tilde = DVector::zeros(n);
            f_tilde[i] = rho[0] / params.h;
            f_tilde[l] = rho[1] / params.h;
            let r_tilde = params.reconstruct_r(&f_tilde)?;
            return Ok(TwoPeakOutcome::Found(TwoPeakSteadyState {
                i,
                l,
                rho1: rho[0],
                rho2: rho[1],
                f_tilde,
                r_tilde,
                newton_iterations: iteration,
            }));
        }
        let jac = pair.jacobian(rho[0], rho[1]);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(Error::NewtonFailed(format!(
                "singular Jacobian at ({}, {})",
                rho[0], rho[1]
            )));
        }
        let step = [
            (-residual[0] * jac[1][1] + residual[1] * jac[0][1]) / det,
            (-residual[1] * jac[0][0] + residual[0] * jac[1][0]) / det,
        ];
        // Damp until the trial point stays in the open quadrant and the residual drops.
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1e-12 {
            let trial = [rho[0] + lambda * step[0], rho[1] + lambda * step[1]];
            if trial[0] > 0.0 && trial[1] > 0.0 {
                let r = pair.values(trial[0], trial[1]);
                if norm(r) < (1.0 - 1e-4 * lambda) * norm(residual) || norm(r) <= 1e-14 * scale {
                    accepted = Some((trial, r));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                rho = trial;
                residual = r;
            }
            None => {
                let boundary = rho[0].min(rho[1]) <= 1e-8 * rho[0].max(rho[1]).max(1.0);
                if boundary {
                    return Ok(TwoPeakOutcome::LeftQuadrant {
                        rho1: rho[0],
                        rho2: rho[1],
                    });
                }
                return Err(Error::NewtonFailed(format!(
                    "line search stalled at ({}, {}) with residual {:e}",
                    rho[0],
                    rho[1],
                    norm(residual)
                )));
            }
        }
    }
    if rho[0].min(rho[1]) <= 1e-8 * rho[0].max(rho[1]).max(1.0) {
        return Ok(TwoPeakOutcome::LeftQuadrant {
            rho1: rho[0],
            rho2: rho[1],
        });
    }
    Err(Error::NewtonFailed(format!(
        "no convergence in {NEWTON_MAXIT} iterations, residual {:e}",
        norm(residual)
    )))
}
