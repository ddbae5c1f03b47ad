//! Coefficients, states and the pointwise functionals of the renormalized
//! resource-competition system
//!
//! ```text
//! f_j' = f_j G_j(R),        G_j(R) = a_j + h sum_k K_jk (R_k - R*_k)
//! R_k' = m_k (R*_k - R_k) - h R_k sum_j K_jk f_j
//! ```
//!
//! together with the convex objective `H` whose minimizer over the
//! nonnegative orthant is the evolutionary stable distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// All coefficients of one instance of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Resource weight (trait-cell width).
    pub h: f64,
    /// Intrinsic growth rates.
    pub a: DVector<f64>,
    /// Consumption probabilities, `k[(j, k)]` for species `j` and resource `k`.
    pub k: DMatrix<f64>,
    /// Resource relaxation rates.
    pub m: DVector<f64>,
    /// Resource carrying capacities.
    pub r_star: DVector<f64>,
}

/// Species abundances `f` and resource levels `r` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub f: DVector<f64>,
    pub r: DVector<f64>,
}

/// Sufficient step bound for the fully-implicit scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBound {
    Finite(f64),
    Unbounded,
}

impl StepBound {
    /// Whether `dt` lies strictly below the bound.
    pub fn admits(&self, dt: f64) -> bool {
        match *self {
            StepBound::Finite(mu0) => dt < mu0,
            StepBound::Unbounded => true,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            StepBound::Finite(mu0) => mu0,
            StepBound::Unbounded => f64::INFINITY,
        }
    }
}

/// Constants derived from validated coefficients and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    /// `-max_j a*_j`, strictly positive.
    pub gamma: f64,
    /// `max_jk K_jk`.
    pub k_max: f64,
    pub m_lower: f64,
    pub m_upper: f64,
    /// `min(gamma, m_lower)`.
    pub beta: f64,
    /// Initial total mass `|f0|_1 + |R0|_1`.
    pub m0: f64,
    /// Discrete mass bound `m0 + m_upper |R*|_1 / beta`.
    pub m_tilde: f64,
    pub mu0: StepBound,
    /// Resource caps `max(R*_k, R0_k)`.
    pub c_r: DVector<f64>,
}

/// Per-state diagnostics recorded along trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub mass: f64,
    /// Relative entropy against the reference, when one is given and it is defined.
    pub s: Option<f64>,
    /// `1/2 sum_k (R_k - ref_k)^2`; the reference resource is `R*` when no reference state is given.
    pub q: f64,
    /// Extinction functional `-sum_k R*_k ln R_k + |f|_1 + |R|_1`.
    pub f_ext: f64,
    pub h: f64,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

fn check_nonnegative(what: &'static str, v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        Some(index) => Err(Error::NegativeInput {
            what,
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

impl State {
    /// Builds a state, checking `f >= 0`, `R > 0` and finiteness.
    pub fn new(f: DVector<f64>, r: DVector<f64>) -> Result<Self> {
        check_len("resource vector", f.len(), r.len())?;
        check_nonnegative("f", &f)?;
        if let Some(index) = r.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "state",
                detail: format!("R[{index}] = {} must be positive and finite", r[index]),
            });
        }
        Ok(Self { f, r })
    }

    pub fn from_slices(f: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(f), DVector::from_column_slice(r))
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `|f|_1 + |R|_1`.
    pub fn total_mass(&self) -> f64 {
        self.f.iter().map(|x| x.abs()).sum::<f64>() + self.r.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Relative entropy against `reference`:
    /// `sum_j (-f~_j ln f_j + f_j) + sum_k (-R~_k ln R_k + R_k)`.
    ///
    /// Terms whose reference entry is zero contribute only the linear part.
    pub fn lyapunov_s(&self, reference: &State) -> Result<f64> {
        check_len("reference state", self.len(), reference.len())?;
        let mut s = 0.0;
        for (index, (&f, &ft)) in self.f.iter().zip(reference.f.iter()).enumerate() {
            if ft > 0.0 {
                if f <= 0.0 {
                    return Err(Error::UndefinedEntropy { what: "f", index });
                }
                s -= ft * f.ln();
            }
            s += f;
        }
        for (index, (&r, &rt)) in self.r.iter().zip(reference.r.iter()).enumerate() {
            if rt > 0.0 {
                if r <= 0.0 {
                    return Err(Error::UndefinedEntropy { what: "R", index });
                }
                s -= rt * r.ln();
            }
            s += r;
        }
        Ok(s)
    }

    /// Max-norm distance between two states, over both components.
    pub fn max_distance(&self, other: &State) -> f64 {
        let df = (&self.f - &other.f).amax();
        let dr = (&self.r - &other.r).amax();
        df.max(dr)
    }
}

impl ModelParams {
    /// Assembles an instance, checking only that the shapes agree.
    pub fn new(h: f64, a: DVector<f64>, k: DMatrix<f64>, m: DVector<f64>, r_star: DVector<f64>) -> Result<Self> {
        let n = a.len();
        check_len("K rows", n, k.nrows())?;
        check_len("K columns", n, k.ncols())?;
        check_len("m", n, m.len())?;
        check_len("R*", n, r_star.len())?;
        Ok(Self { h, a, k, m, r_star })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(h: f64, a: &[f64], k_rows: &[&[f64]], m: &[f64], r_star: &[f64]) -> Result<Self> {
        let n = a.len();
        check_len("K rows", n, k_rows.len())?;
        let mut k = DMatrix::zeros(n, n);
        for (j, row) in k_rows.iter().enumerate() {
            check_len("K columns", n, row.len())?;
            for (c, &v) in row.iter().enumerate() {
                k[(j, c)] = v;
            }
        }
        Self::new(
            h,
            DVector::from_column_slice(a),
            k,
            DVector::from_column_slice(m),
            DVector::from_column_slice(r_star),
        )
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// `a*_j = a_j - h sum_k K_jk R*_k`.
    pub fn a_star(&self) -> DVector<f64> {
        &self.a - (&self.k * &self.r_star) * self.h
    }

    fn check_state(&self, state: &State) -> Result<()> {
        check_len("f", self.n(), state.f.len())?;
        check_len("R", self.n(), state.r.len())
    }

    /// Checks the standing assumptions and derives the bound constants from
    /// the coefficients and the initial state.
    pub fn validate(&self, initial: &State) -> Result<DerivedConstants> {
        let n = self.n();
        if n == 0 {
            return Err(Error::AssumptionViolation {
                clause: "N",
                detail: "at least one trait is required".into(),
            });
        }
        self.check_state(initial)?;
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "h",
                detail: format!("resource weight h = {} must be positive and finite", self.h),
            });
        }
        if let Some(j) = self.a.iter().position(|x| !x.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "2.4a",
                detail: format!("a[{j}] is not finite"),
            });
        }
        if let Some(idx) = self.k.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
            let (j, c) = (idx % n, idx / n);
            return Err(Error::AssumptionViolation {
                clause: "2.4b",
                detail: format!("K[{j}][{c}] = {} must be finite and nonnegative", self.k[(j, c)]),
            });
        }
        if let Some(c) = self.m.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "2.4c",
                detail: format!("m[{c}] = {} must be positive and finite", self.m[c]),
            });
        }
        if let Some(c) = self.r_star.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "2.4d",
                detail: format!("R*[{c}] = {} must be positive and finite", self.r_star[c]),
            });
        }
        check_nonnegative("f0", &initial.f).map_err(|e| Error::AssumptionViolation {
            clause: "2.4e",
            detail: e.to_string(),
        })?;
        if let Some(c) = initial.r.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::AssumptionViolation {
                clause: "2.4e",
                detail: format!("R0[{c}] = {} must be positive and finite", initial.r[c]),
            });
        }

        let a_star = self.a_star();
        let (worst, max_a_star) =
            a_star.iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
            );
        let gamma = -max_a_star;
        if !(gamma > 0.0) {
            return Err(Error::AssumptionViolation {
                clause: "2.4a",
                detail: format!("a*[{worst}] = {max_a_star} must be strictly negative"),
            });
        }

        let k_max = self.k.max();
        let m_lower = self.m.min();
        let m_upper = self.m.max();
        let beta = gamma.min(m_lower);
        let m0 = initial.total_mass();
        let r_star_l1: f64 = self.r_star.iter().sum();
        let m_tilde = m0 + m_upper * r_star_l1 / beta;
        let excess = k_max * m_tilde - gamma;
        let mu0 = if excess > 0.0 {
            StepBound::Finite(1.0 / excess)
        } else {
            StepBound::Unbounded
        };
        let c_r = self.r_star.zip_map(&initial.r, f64::max);

        Ok(DerivedConstants {
            gamma,
            k_max,
            m_lower,
            m_upper,
            beta,
            m0,
            m_tilde,
            mu0,
            c_r,
        })
    }

    /// Effective growth rates `G_j(R) = a_j + h sum_k K_jk (R_k - R*_k)`.
    pub fn growth_rate(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("R", self.n(), r.len())?;
        Ok(self.growth_rate_unchecked(r))
    }

    pub(crate) fn growth_rate_unchecked(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.a + (&self.k * (r - &self.r_star)) * self.h
    }

    /// `h sum_j K_jk f_j` for every resource `k`.
    pub(crate) fn consumption(&self, f: &DVector<f64>) -> DVector<f64> {
        self.k.tr_mul(f) * self.h
    }

    /// Right-hand sides `(df/dt, dR/dt)`.
    pub fn rhs(&self, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_state(state)?;
        let g = self.growth_rate_unchecked(&state.r);
        let df = state.f.component_mul(&g);
        let uptake = self.consumption(&state.f);
        let dr = DVector::from_fn(self.n(), |c, _| {
            self.m[c] * (self.r_star[c] - state.r[c]) - state.r[c] * uptake[c]
        });
        Ok((df, dr))
    }

    /// Max-norm of the right-hand side, the steady-state residual.
    pub fn rhs_residual(&self, state: &State) -> Result<f64> {
        let (df, dr) = self.rhs(state)?;
        Ok(df.amax().max(dr.amax()))
    }

    /// `F = -sum_k R*_k ln R_k + |f|_1 + |R|_1`.
    pub fn extinction_f(&self, state: &State) -> Result<f64> {
        self.check_state(state)?;
        let log_term: f64 = self.r_star.iter().zip(state.r.iter()).map(|(rs, r)| rs * r.ln()).sum();
        Ok(-log_term + state.f.sum() + state.r.sum())
    }

    fn check_f(&self, f: &DVector<f64>) -> Result<()> {
        check_len("f", self.n(), f.len())?;
        check_nonnegative("f", f)
    }

    /// `H(f) = -sum_j a*_j f_j - sum_k m_k R*_k ln(m_k + h sum_j K_jk f_j)`.
    pub fn h_value(&self, f: &DVector<f64>) -> Result<f64> {
        self.check_f(f)?;
        Ok(self.h_value_unchecked(f))
    }

    pub(crate) fn h_value_unchecked(&self, f: &DVector<f64>) -> f64 {
        let linear = self.a_star().dot(f);
        let uptake = self.consumption(f);
        let log_term: f64 = (0..self.n())
            .map(|c| self.m[c] * self.r_star[c] * (self.m[c] + uptake[c]).ln())
            .sum();
        -linear - log_term
    }

    /// Gradient of `H`; equals `-G(R^(f))` with `R^` the reconstructed resource.
    pub fn h_gradient(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_f(f)?;
        Ok(self.h_gradient_unchecked(f))
    }

    pub(crate) fn h_gradient_unchecked(&self, f: &DVector<f64>) -> DVector<f64> {
        let uptake = self.consumption(f);
        let w = DVector::from_fn(self.n(), |c, _| self.m[c] * self.r_star[c] / (self.m[c] + uptake[c]));
        -self.a_star() - (&self.k * w) * self.h
    }

    /// Hessian of `H` assembled as `M M^T` with
    /// `M_jk = h sqrt(R*_k m_k) / (m_k + h sum_i K_ik f_i) K_jk`.
    pub fn h_hessian(&self, f: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_f(f)?;
        let uptake = self.consumption(f);
        let mut factor = self.k.clone();
        for c in 0..self.n() {
            let scale = self.h * (self.r_star[c] * self.m[c]).sqrt() / (self.m[c] + uptake[c]);
            factor.column_mut(c).scale_mut(scale);
        }
        Ok(&factor * factor.transpose())
    }

    /// Resource levels in equilibrium with `f`:
    /// `R^_k = m_k R*_k / (m_k + h sum_j K_jk f_j)`, always in `(0, R*_k]`.
    pub fn reconstruct_r(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_f(f)?;
        let uptake = self.consumption(f);
        Ok(DVector::from_fn(self.n(), |c, _| {
            self.m[c] * self.r_star[c] / (self.m[c] + uptake[c])
        }))
    }

    /// Mass, entropy (against `reference`), `Q`, `F` and `H` at `state`.
    pub fn diagnostics(&self, state: &State, reference: Option<&State>) -> Result<Diagnostics> {
        self.check_state(state)?;
        let s = match reference {
            Some(reference) => state.lyapunov_s(reference).ok(),
            None => None,
        };
        let r_ref = reference.map(|s| &s.r).unwrap_or(&self.r_star);
        let q = 0.5 * (&state.r - r_ref).norm_squared();
        Ok(Diagnostics {
            mass: state.total_mass(),
            s,
            q,
            f_ext: self.extinction_f(state)?,
            h: self.h_value(&state.f)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn n1() -> ModelParams {
        ModelParams::from_rows(1.0, &[0.5], &[&[1.0]], &[1.0], &[1.0]).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn derived_constants_of_single_trait_instance() {
        let p = n1();
        let c = p.validate(&State::from_slices(&[1.0], &[1.0]).unwrap()).unwrap();
        assert_relative_eq!(c.gamma, 0.5);
        assert_relative_eq!(c.k_max, 1.0);
        assert_relative_eq!(c.beta, 0.5);
        assert_relative_eq!(c.m0, 2.0);
        assert_relative_eq!(c.m_tilde, 4.0);
        assert_relative_eq!(c.mu0.as_f64(), 1.0 / 3.5, epsilon = 1e-15);
        assert_eq!(c.c_r, v(&[1.0]));
    }

    #[test]
    fn zero_kernel_gives_unbounded_step() {
        let p = ModelParams::from_rows(
            1.0,
            &[-1.0, -1.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[1.0, 1.0],
            &[1.0, 1.0],
        )
        .unwrap();
        let c = p
            .validate(&State::from_slices(&[1.0, 1.0], &[1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.k_max, 0.0);
        assert_eq!(c.mu0, StepBound::Unbounded);
    }

    #[test]
    fn positive_a_star_is_rejected() {
        let p = ModelParams::from_rows(1.0, &[0.5], &[&[0.0]], &[1.0], &[1.0]).unwrap();
        let err = p.validate(&State::from_slices(&[1.0], &[1.0]).unwrap()).unwrap_err();
        assert!(
            matches!(err, Error::AssumptionViolation { clause: "2.4a", .. }),
            "{err}"
        );
    }

    #[test]
    fn other_assumption_violations() {
        let s = State::from_slices(&[1.0], &[1.0]).unwrap();
        let neg_k = ModelParams::from_rows(1.0, &[-1.0], &[&[-0.1]], &[1.0], &[1.0]).unwrap();
        assert!(matches!(
            neg_k.validate(&s),
            Err(Error::AssumptionViolation { clause: "2.4b", .. })
        ));
        let zero_m = ModelParams::from_rows(1.0, &[-1.0], &[&[1.0]], &[0.0], &[1.0]).unwrap();
        assert!(matches!(
            zero_m.validate(&s),
            Err(Error::AssumptionViolation { clause: "2.4c", .. })
        ));
        let zero_rs = ModelParams::from_rows(1.0, &[-1.0], &[&[1.0]], &[1.0], &[0.0]).unwrap();
        assert!(matches!(
            zero_rs.validate(&s),
            Err(Error::AssumptionViolation { clause: "2.4d", .. })
        ));
        let nan_a = ModelParams::from_rows(1.0, &[f64::NAN], &[&[1.0]], &[1.0], &[1.0]).unwrap();
        assert!(nan_a.validate(&s).is_err());
        let two = State::from_slices(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(n1().validate(&two), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn state_rejects_invalid_entries() {
        assert!(State::from_slices(&[-1.0], &[1.0]).is_err());
        assert!(State::from_slices(&[1.0], &[0.0]).is_err());
        assert!(State::from_slices(&[1.0], &[f64::INFINITY]).is_err());
        assert!(State::from_slices(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn growth_rate_examples() {
        let p = n1();
        assert_eq!(p.growth_rate(&p.r_star).unwrap(), p.a);
        assert_relative_eq!(p.growth_rate(&v(&[0.5])).unwrap()[0], 0.0);
        let zero_k = ModelParams::from_rows(1.0, &[-0.3], &[&[0.0]], &[1.0], &[1.0]).unwrap();
        assert_eq!(zero_k.growth_rate(&v(&[7.0])).unwrap()[0], -0.3);
        assert!(matches!(
            p.growth_rate(&v(&[1.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rhs_examples() {
        let p = n1();
        let (df, dr) = p.rhs(&State::from_slices(&[0.0], &[1.0]).unwrap()).unwrap();
        assert_eq!((df[0], dr[0]), (0.0, 0.0));
        let (df, dr) = p.rhs(&State::from_slices(&[1.0], &[0.5]).unwrap()).unwrap();
        assert_eq!((df[0], dr[0]), (0.0, 0.0));
        let (df, dr) = p.rhs(&State::from_slices(&[1.0], &[1.0]).unwrap()).unwrap();
        assert_relative_eq!(df[0], 0.5);
        assert_relative_eq!(dr[0], -1.0);
    }

    #[test]
    fn mass_examples() {
        assert_eq!(State::from_slices(&[1.0], &[1.0]).unwrap().total_mass(), 2.0);
        assert_eq!(State::from_slices(&[1.0, 2.0], &[0.5, 0.5]).unwrap().total_mass(), 4.0);
    }

    #[test]
    fn entropy_examples() {
        let one = State::from_slices(&[1.0], &[1.0]).unwrap();
        assert_eq!(one.lyapunov_s(&one).unwrap(), 2.0);
        let reference = State::from_slices(&[0.0], &[1.0]).unwrap();
        let s = State::from_slices(&[0.5], &[1.0]).unwrap();
        assert_eq!(s.lyapunov_s(&reference).unwrap(), 1.5);
        let extinct = State::from_slices(&[0.0], &[1.0]).unwrap();
        assert!(matches!(
            extinct.lyapunov_s(&one),
            Err(Error::UndefinedEntropy { what: "f", index: 0 })
        ));
    }

    #[test]
    fn extinction_functional_examples() {
        let p = n1();
        assert_eq!(
            p.extinction_f(&State::from_slices(&[0.0], &[1.0]).unwrap()).unwrap(),
            1.0
        );
        assert_eq!(
            p.extinction_f(&State::from_slices(&[1.0], &[1.0]).unwrap()).unwrap(),
            2.0
        );
    }

    #[test]
    fn h_value_gradient_hessian_examples() {
        let p = n1();
        assert_eq!(p.h_value(&v(&[0.0])).unwrap(), 0.0);
        assert_relative_eq!(p.h_value(&v(&[1.0])).unwrap(), 0.5 - 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(p.h_gradient(&v(&[0.0])).unwrap()[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(p.h_gradient(&v(&[1.0])).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.h_hessian(&v(&[1.0])).unwrap()[(0, 0)], 0.25, epsilon = 1e-15);
        assert!(matches!(p.h_value(&v(&[-1.0])), Err(Error::NegativeInput { .. })));
        assert!(matches!(p.h_gradient(&v(&[-1.0])), Err(Error::NegativeInput { .. })));
        assert!(matches!(p.h_hessian(&v(&[-1.0])), Err(Error::NegativeInput { .. })));
    }

    #[test]
    fn zero_kernel_hessian_vanishes() {
        let p = ModelParams::from_rows(
            1.0,
            &[-1.0, -2.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[1.0, 2.0],
            &[1.0, 3.0],
        )
        .unwrap();
        assert_eq!(p.h_hessian(&v(&[0.3, 0.7])).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn reconstruct_examples() {
        let p = n1();
        assert_eq!(p.reconstruct_r(&v(&[0.0])).unwrap(), p.r_star);
        assert_relative_eq!(p.reconstruct_r(&v(&[1.0])).unwrap()[0], 0.5);
        assert!(p.reconstruct_r(&v(&[-0.1])).is_err());
    }

    #[test]
    fn diagnostics_use_r_star_without_reference() {
        let p = n1();
        let s = State::from_slices(&[1.0], &[2.0]).unwrap();
        let d = p.diagnostics(&s, None).unwrap();
        assert_eq!(d.s, None);
        assert_eq!(d.q, 0.5);
        assert_eq!(d.mass, 3.0);
        let d = p.diagnostics(&s, Some(&s)).unwrap();
        assert_eq!(d.q, 0.0);
        assert!(d.s.is_some());
    }
}
