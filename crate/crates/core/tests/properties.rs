use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rclab_core::esd::{minimize_h, SUPPORT_EPS};
use rclab_core::integrator::{implicit_residual, step_fully_implicit, DEFAULT_FP_MAXIT};
use rclab_core::steady::dirac_g;
use rclab_core::*;

// Random instance satisfying the standing assumptions. `diag` > 0 makes K
// strictly diagonally dominant, hence nonsingular.
fn instance(seed: u64, n: usize, diag: f64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(0.2..1.0);
    let mut k = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
    for j in 0..n {
        k[(j, j)] += diag * n as f64;
    }
    let m = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let r_star = DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0));
    let kr = &k * &r_star * h;
    let a = DVector::from_fn(n, |j, _| rng.random_range(-1.0..1.5f64).min(kr[j] - 0.05));
    ModelParams::new(h, a, k, m, r_star).unwrap()
}

fn random_f(seed: u64, n: usize, scale: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DVector::from_fn(n, |_, _| rng.random_range(0.0..scale))
}

fn initial(params: &ModelParams, seed: u64) -> State {
    let n = params.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let f = DVector::from_fn(n, |_, _| rng.random_range(0.01..2.0));
    let r = DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0));
    State::new(f, r).unwrap()
}

fn fd_gradient(params: &ModelParams, f: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(f.len(), |i, _| {
        let eps = 1e-6 * (1.0 + f[i]);
        let mut up = f.clone();
        let mut dn = f.clone();
        up[i] += eps;
        dn[i] -= eps;
        (params.h_value(&up).unwrap() - params.h_value(&dn).unwrap()) / (2.0 * eps)
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..=10) {
        let p = instance(seed, n, 0.0);
        // keep f away from 0 so the central stencil stays in the domain
        let f = random_f(seed, n, 3.0).add_scalar(0.01);
        let g = p.h_gradient(&f).unwrap();
        let fd = fd_gradient(&p, &f);
        for i in 0..n {
            prop_assert!(rel_err(fd[i], g[i]) < 1e-6, "i={} fd={} g={}", i, fd[i], g[i]);
        }
    }

    #[test]
    fn hessian_matches_finite_differences(seed in any::<u64>(), n in 1usize..=10) {
        let p = instance(seed, n, 0.0);
        let f = random_f(seed, n, 3.0).add_scalar(0.01);
        let hess = p.h_hessian(&f).unwrap();
        for i in 0..n {
            let eps = 1e-5 * (1.0 + f[i]);
            let mut up = f.clone();
            let mut dn = f.clone();
            up[i] += eps;
            dn[i] -= eps;
            let col = (p.h_gradient(&up).unwrap() - p.h_gradient(&dn).unwrap()) / (2.0 * eps);
            for j in 0..n {
                prop_assert!(rel_err(col[j], hess[(j, i)]) < 1e-5);
            }
        }
    }

    #[test]
    fn hessian_symmetric_and_positive_for_nonsingular_k(seed in any::<u64>(), n in 1usize..=10) {
        let p = instance(seed, n, 1.0);
        prop_assume!(check_k_nonsingular(&p).nonsingular);
        let f = random_f(seed, n, 3.0);
        let hess = p.h_hessian(&f).unwrap();
        prop_assert!((&hess - hess.transpose()).amax() < 1e-12);
        let eig = hess.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn h_is_midpoint_convex(seed in any::<u64>(), n in 1usize..=8) {
        let p = instance(seed, n, 0.0);
        let f = random_f(seed, n, 4.0);
        let g = random_f(seed.wrapping_add(1), n, 4.0);
        let mid = (&f + &g) * 0.5;
        let lhs = p.h_value(&mid).unwrap();
        let rhs = 0.5 * (p.h_value(&f).unwrap() + p.h_value(&g).unwrap());
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn reconstructed_resource_bounded_by_supply(seed in any::<u64>(), n in 1usize..=10) {
        let p = instance(seed, n, 0.0);
        let f = random_f(seed, n, 50.0);
        let r = p.reconstruct_r(&f).unwrap();
        for k in 0..n {
            prop_assert!(r[k] > 0.0 && r[k] <= p.r_star[k]);
        }
    }

    #[test]
    fn gradient_at_zero_is_minus_a(seed in any::<u64>(), n in 1usize..=10) {
        let p = instance(seed, n, 0.0);
        let g = p.h_gradient(&DVector::zeros(n)).unwrap();
        for i in 0..n {
            prop_assert!((g[i] + p.a[i]).abs() <= 1e-14 * (1.0 + p.a[i].abs()));
        }
    }

    #[test]
    fn esd_is_local_minimum_and_verified(seed in any::<u64>(), n in 1usize..=6) {
        let p = instance(seed, n, 1.0);
        let esd = solve_esd(&p, None, 1e-10, 100_000).unwrap();
        let rep = verify_esd(&p, &esd.f_tilde, &esd.r_tilde, 1e-9).unwrap();
        prop_assert!(rep.is_esd, "{:?}", rep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0f64));
            let d = &d * (0.1 / d.norm().max(1e-300));
            let trial = (&esd.f_tilde + d).map(|x| x.max(0.0));
            prop_assert!(p.h_value(&trial).unwrap() >= esd.h_at_min - 1e-9);
        }
        prop_assert!(steady::persistence_sum(&esd, &p) >= -1e-8);
        if positive_steady_state_excluded(&p) {
            prop_assert!(esd.persistence_set.len() < n);
        }
        let (df, dr) = p.rhs(&esd.state()).unwrap();
        prop_assert!(df.amax().max(dr.amax()) < 1e-10);
    }

    #[test]
    fn schemes_keep_positivity_and_mass_bound(seed in any::<u64>(), n in 1usize..=6, implicit in any::<bool>()) {
        let p = instance(seed, n, 0.0);
        let s0 = initial(&p, seed);
        let c = p.validate(&s0).unwrap();
        let dt = match c.mu0 {
            StepBound::Finite(mu0) => (0.5 * mu0).min(0.5),
            StepBound::Unbounded => 0.5,
        };
        let scheme = if implicit { Scheme::FullyImplicit } else { Scheme::SemiImplicit };
        let traj = simulate(&p, &s0, 40.0 * dt, &StepConfig::new(dt, scheme), None).unwrap();
        let mut prev = s0.clone();
        for s in &traj.states {
            prop_assert!(s.f.iter().all(|x| *x > 0.0) && s.r.iter().all(|x| *x > 0.0));
            prop_assert!(s.total_mass() <= c.m_tilde + 1e-9);
            if implicit {
                for k in 0..n {
                    let cap = prev.r[k].max(p.r_star[k]);
                    prop_assert!(s.r[k] <= cap * (1.0 + 1e-12));
                    prop_assert!(s.r[k] <= c.c_r[k] * (1.0 + 1e-12));
                }
            }
            prev = s.clone();
        }
    }

    #[test]
    fn implicit_step_is_self_consistent(seed in any::<u64>(), n in 1usize..=6) {
        let p = instance(seed, n, 0.0);
        let s0 = initial(&p, seed);
        let c = p.validate(&s0).unwrap();
        let dt = (0.5 * c.mu0.as_f64()).min(0.5);
        let tol = 1e-12;
        let (next, _) = step_fully_implicit(&p, &s0, dt, tol, DEFAULT_FP_MAXIT).unwrap();
        prop_assert!(implicit_residual(&p, &s0, &next, dt) <= 10.0 * tol);
    }

    #[test]
    fn zero_species_stays_zero(seed in any::<u64>(), n in 2usize..=6) {
        let p = instance(seed, n, 0.0);
        let mut s0 = initial(&p, seed);
        s0.f[0] = 0.0;
        let c = p.validate(&s0).unwrap();
        let dt = (0.5 * c.mu0.as_f64()).min(0.5);
        for scheme in [Scheme::SemiImplicit, Scheme::FullyImplicit] {
            let traj = simulate(&p, &s0, 10.0 * dt, &StepConfig::new(dt, scheme), None).unwrap();
            prop_assert!(traj.states.iter().all(|s| s.f[0] == 0.0));
        }
    }

    #[test]
    fn steady_states_are_fixed_points(seed in any::<u64>(), n in 1usize..=6) {
        let p = instance(seed, n, 1.0);
        let esd = solve_esd(&p, None, 1e-10, 100_000).unwrap();
        // exact zeros keep the fixed point exact
        let f = esd.f_tilde.map(|x| if x > SUPPORT_EPS { x } else { 0.0 });
        let s = State::new(f, p.reconstruct_r(&esd.f_tilde).unwrap()).unwrap();
        let semi = step_semi_implicit(&p, &s, 0.1).unwrap();
        let (imp, _) = step_fully_implicit(&p, &s, 0.1, 1e-12, DEFAULT_FP_MAXIT).unwrap();
        prop_assert!(semi.max_distance(&s) < 1e-8 * (1.0 + s.total_mass()));
        prop_assert!(imp.max_distance(&s) < 1e-8 * (1.0 + s.total_mass()));
    }

    #[test]
    fn implicit_entropy_never_increases(seed in any::<u64>(), n in 1usize..=5) {
        let p = instance(seed, n, 1.0);
        let s0 = initial(&p, seed);
        let c = p.validate(&s0).unwrap();
        let dt = (0.5 * c.mu0.as_f64()).min(0.5);
        let esd = solve_esd(&p, None, 1e-10, 100_000).unwrap();
        let traj = simulate(&p, &s0, 60.0 * dt, &StepConfig::new(dt, Scheme::FullyImplicit), None).unwrap();
        let trace = entropy_trace(&p, &traj, &esd).unwrap();
        prop_assert!(trace.flagged.is_empty(), "flagged {:?} excess {}", trace.flagged, trace.max_excess);
    }

    #[test]
    fn dirac_g_strictly_decreasing(seed in any::<u64>(), n in 1usize..=6, i in 0usize..6) {
        let p = instance(seed, n, 0.0);
        let i = i % n;
        let mut prev = dirac_g(&p, i, 0.0);
        prop_assert_eq!(prev, p.a[i]);
        for s in 1..200 {
            let rho = 0.05 * s as f64 * s as f64;
            let g = dirac_g(&p, i, rho);
            prop_assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn scenario_round_trip(n in 1usize..80, l in 0.1f64..10.0, c0 in -1.0f64..0.5, dt in 1e-3f64..1.0) {
        let mut spec = preset("example1").unwrap();
        spec.n = n;
        spec.l = l;
        spec.dt = dt;
        spec.growth = scenarios::Growth::Quadratic { c2: -2.0, c0 };
        let text = save_scenario(&spec);
        let back = load_scenario(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(save_scenario(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn esd_unique_across_restarts(seed in any::<u64>(), n in 1usize..=6) {
        let p = instance(seed, n, 1.0);
        prop_assume!(check_k_nonsingular(&p).nonsingular);
        let sols: Vec<DVector<f64>> = (0..10)
            .map(|r| {
                let start = random_f(seed.wrapping_add(r), n, 5.0);
                solve_esd(&p, Some(&start), 1e-10, 100_000).unwrap().f_tilde
            })
            .collect();
        for a in &sols {
            for b in &sols {
                prop_assert!((a - b).amax() <= 1e-6);
            }
        }
    }
}

#[test]
fn brute_force_agrees_on_small_instances() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let p = instance(seed, 2, 1.0);
        let esd = solve_esd(&p, None, 1e-10, 100_000).unwrap();
        if esd.f_tilde.amax() > 4.0 {
            continue;
        }
        let brute = brute_force_esd(&p, 5.0, 1e-2).unwrap();
        assert!(
            (&brute - &esd.f_tilde).amax() <= 1e-2 + 1e-12,
            "seed {seed}: {brute} vs {}",
            esd.f_tilde
        );
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} instances inside the grid box");
}

#[test]
fn gaussian_midpoint_convolution() {
    let spec = preset("example1").unwrap();
    let (p, _) = build_params(&spec).unwrap();
    let x = spec.grid();
    let var = spec.sigma_star.powi(2) + spec.sigma_k.powi(2);
    let conv = &p.k * &p.r_star * p.h;
    for j in 0..spec.n {
        let exact = (-x[j] * x[j] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        assert!((conv[j] - exact).abs() <= 1e-3, "j={j}: {} vs {exact}", conv[j]);
    }
}

#[test]
fn example1_grid_and_kernel_symmetric() {
    let spec = preset("example1").unwrap();
    let (p, _) = build_params(&spec).unwrap();
    let x = spec.grid();
    let n = spec.n;
    for j in 0..n {
        assert!((x[j] + x[n - 1 - j]).abs() < 1e-14);
        for k in 0..n {
            assert!((p.k[(j, k)] - p.k[(n - 1 - j, n - 1 - k)]).abs() < 1e-12);
        }
    }
    let esd = minimize_h(&p, None, 1e-10, 100_000).unwrap();
    for j in 0..n {
        assert!((esd.f_tilde[j] - esd.f_tilde[n - 1 - j]).abs() < 1e-6);
    }
}
