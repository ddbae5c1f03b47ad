//! Subcommand drivers. Each command fills a [`RunReport`]; model errors end
//! up in `report.error` rather than aborting, so `report.json` is always
//! written.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rclab_core::esd::{DEFAULT_MAXIT, DEFAULT_TOL};
use rclab_core::integrator::EntropyTrace;
use rclab_core::steady::{dirac_steady_state, two_peak_steady_state, TwoPeakOutcome};
use rclab_core::{
    brute_force_esd, build_params, entropy_trace, extinction_predicate, load_scenario, persistence_sum,
    positive_steady_state_excluded, preset, simulate, solve_esd, verify_esd, DerivedConstants, EsdResult, ModelParams,
    Outcome, ScenarioSpec, Scheme, State, Trajectory,
};

use crate::csvio::{read_trajectory, write_esd, write_trajectory, TrajectoryTable};
use crate::error::{io_err, CliError, Result};
use crate::report::{Comparison, EsdSummary, RunReport, TrajectorySummary};
use crate::svg::{self, PlotKind};

/// Default relative L1 tolerance of the `esd_convergence` verdict.
pub const ESD_CONVERGENCE_TOL: f64 = 1e-3;
/// Extinction verdict: `|f(T)|_1 <= EXTINCTION_TOL |f0|_1` and `|R(T) - R*|_inf <= EXTINCTION_TOL`.
pub const EXTINCTION_TOL: f64 = 1e-2;
pub const MASS_SLACK: f64 = 1e-9;
pub const PERSISTENCE_SLACK: f64 = 1e-8;
/// Tolerance handed to `verify_esd` when certifying a solver result.
pub const ESD_CHECK_TOL: f64 = 1e-9;
pub const BRUTE_GRID_MAX: f64 = 5.0;
pub const BRUTE_GRID_STEP: f64 = 1e-3;
pub const RESTARTS: usize = 10;
pub const RESTART_AGREEMENT: f64 = 1e-6;
const WATERFALL_LAYERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub spec: ScenarioSpec,
}

pub fn resolve_scenario(preset_name: Option<&str>, file: Option<&Path>) -> Result<Scenario> {
    match (preset_name, file) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either --preset or --scenario, not both".into())),
        (Some(name), None) => preset(name)
            .map(|spec| Scenario {
                name: name.to_string(),
                spec,
            })
            .ok_or_else(|| CliError::UnknownPreset(name.to_string())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let name = path
                .file_stem()
                .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            Ok(Scenario {
                name,
                spec: load_scenario(&text)?,
            })
        }
        (None, None) => Err(CliError::Usage(
            "a scenario is required: --preset NAME or --scenario FILE".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub scheme: Option<Scheme>,
    pub out: PathBuf,
    pub tol: Option<f64>,
    pub seed: u64,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            t_final: None,
            dt: None,
            scheme: None,
            out: out.into(),
            tol: None,
            seed: 0,
        }
    }

    fn apply(&self, spec: &ScenarioSpec) -> ScenarioSpec {
        let mut s = *spec;
        if let Some(t) = self.t_final {
            s.t_final = t;
        }
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
        if let Some(scheme) = self.scheme {
            s.scheme = scheme;
        }
        s
    }
}

struct Setup {
    spec: ScenarioSpec,
    params: ModelParams,
    state0: State,
    constants: DerivedConstants,
}

fn setup(scenario: &Scenario, opts: &RunOptions, report: &mut RunReport) -> rclab_core::Result<Setup> {
    let spec = opts.apply(&scenario.spec);
    let (params, state0) = build_params(&spec)?;
    let constants = params.validate(&state0)?;
    report.constants = Some(constants.clone());
    report.detail("N", spec.n as u64);
    report.detail_num("dt", spec.dt);
    report.detail_num("T_final", spec.t_final);
    report.detail("scheme", spec.scheme.name());
    Ok(Setup {
        spec,
        params,
        state0,
        constants,
    })
}

fn esd_summary(esd: &EsdResult) -> EsdSummary {
    EsdSummary {
        kkt_residual: esd.kkt_residual,
        persistence_count: esd.persistence_set.len(),
        h_at_min: esd.h_at_min,
        iterations: esd.iterations,
        unique: esd.unique,
    }
}

fn one_based(set: &[usize]) -> String {
    set.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(",")
}

/// Relative L1 distance on `f` (absolute when `f~ = 0`) and max distance on `R`.
pub fn compare(state: &State, esd: &EsdResult) -> Comparison {
    let diff = (&state.f - &esd.f_tilde).abs().sum();
    let scale = esd.f_tilde.sum();
    Comparison {
        l1_distance_f: if scale > 0.0 { diff / scale } else { diff },
        linf_distance_r: (&state.r - &esd.r_tilde).amax(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

// Runs the dynamics and records positivity, mass bound and summaries.
fn run_dynamics(s: &Setup, esd: Option<&EsdResult>, report: &mut RunReport) -> rclab_core::Result<Trajectory> {
    let reference = esd.map(|e| e.state());
    let traj = simulate(
        &s.params,
        &s.state0,
        s.spec.t_final,
        &s.spec.step_config(),
        reference.as_ref(),
    )?;
    let positive = traj
        .states
        .iter()
        .all(|st| st.f.iter().all(|x| x.is_finite() && *x >= 0.0) && st.r.iter().all(|x| x.is_finite() && *x > 0.0));
    let bounded = traj
        .diagnostics
        .iter()
        .all(|d| d.mass <= s.constants.m_tilde + MASS_SLACK);
    report.verdict("positivity", positive);
    report.verdict("mass_bound", bounded);
    let max_violation = match esd {
        Some(e) => defined_trace(&s.params, &traj, e)?.map(|t| t.max_excess),
        None => None,
    };
    let last = traj.diagnostics.last().expect("trajectory holds the initial state");
    report.trajectory_summary = Some(TrajectorySummary {
        steps: traj.steps(),
        final_mass: last.mass,
        final_s: last.s,
        max_entropy_violation: max_violation,
        max_fp_iterations: traj.fp_iterations.iter().max().copied(),
    });
    if let Some(e) = esd {
        report.comparison = Some(compare(traj.last(), e));
    }
    Ok(traj)
}

// `None` when the ESD charges a trait the trajectory has lost, so S is undefined.
fn defined_trace(params: &ModelParams, traj: &Trajectory, esd: &EsdResult) -> rclab_core::Result<Option<EntropyTrace>> {
    match entropy_trace(params, traj, esd) {
        Ok(t) => Ok(Some(t)),
        Err(rclab_core::Error::UndefinedEntropy { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn finish(report: &mut RunReport, outcome: Result<()>, dir: &Path) -> Result<()> {
    if let Err(e) = outcome {
        match e {
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Json(_) => return Err(e),
            other => report.error = Some(other.to_string()),
        }
    }
    report.write(&dir.join("report.json"))
}

/// `simulate`: writes `trajectory.csv`; verdicts `positivity`, `mass_bound`.
pub fn cmd_simulate(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    ensure_dir(&opts.out)?;
    let mut report = RunReport::new("simulate", &scenario.name);
    let outcome = (|| -> Result<()> {
        let s = setup(scenario, opts, &mut report)?;
        // the ESD only serves as the reference for S and Q here
        let esd = solve_esd(&s.params, None, DEFAULT_TOL, DEFAULT_MAXIT)
            .map_err(|e| log::warn!("no ESD reference: {e}"))
            .ok();
        if let Some(e) = &esd {
            report.esd_summary = Some(esd_summary(e));
        }
        let traj = run_dynamics(&s, esd.as_ref(), &mut report)?;
        write_trajectory(&opts.out.join("trajectory.csv"), &traj)
    })();
    finish(&mut report, outcome, &opts.out)?;
    Ok(report)
}

fn restart_spread(params: &ModelParams, reference: &DVector<f64>, seed: u64) -> rclab_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 2.0 / params.h;
    let mut sols = vec![reference.clone()];
    for _ in 0..RESTARTS {
        let start = DVector::from_fn(params.n(), |_, _| rng.random_range(0.0..scale));
        sols.push(solve_esd(params, Some(&start), DEFAULT_TOL, DEFAULT_MAXIT)?.f_tilde);
    }
    let mut spread = 0.0f64;
    for a in &sols {
        for b in &sols {
            spread = spread.max((a - b).amax());
        }
    }
    Ok(spread)
}

/// `esd`: writes `esd.csv`; verdicts `kkt`, plus `brute_force` for N <= 2
/// and `restarts_agree` when `K` is nonsingular.
pub fn cmd_esd(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    ensure_dir(&opts.out)?;
    let mut report = RunReport::new("esd", &scenario.name);
    let outcome = (|| -> Result<()> {
        let s = setup(scenario, opts, &mut report)?;
        let tol = opts.tol.unwrap_or(DEFAULT_TOL);
        let esd = solve_esd(&s.params, None, tol, DEFAULT_MAXIT)?;
        report.esd_summary = Some(esd_summary(&esd));
        report.detail("persistence_set", one_based(&esd.persistence_set));
        report.verdict("kkt", esd.kkt_residual <= tol);
        if s.params.n() <= 2 {
            let brute = brute_force_esd(&s.params, BRUTE_GRID_MAX, BRUTE_GRID_STEP)?;
            let gap = (&brute - &esd.f_tilde).amax();
            report.detail_num("brute_force_gap", gap);
            report.verdict("brute_force", gap <= BRUTE_GRID_STEP * (1.0 + 1e-9));
        }
        if esd.unique {
            let spread = restart_spread(&s.params, &esd.f_tilde, opts.seed)?;
            report.detail_num("restart_spread", spread);
            report.verdict("restarts_agree", spread <= RESTART_AGREEMENT);
        }
        write_esd(&opts.out.join("esd.csv"), &s.spec.grid(), &esd)
    })();
    finish(&mut report, outcome, &opts.out)?;
    Ok(report)
}

/// `verify`: simulate, solve the ESD and compare. Writes `trajectory.csv`,
/// `esd.csv` and the three plots. Verdicts: `positivity`, `mass_bound`,
/// `entropy_monotone` (fully-implicit only), `persistence_sum`, and
/// `esd_convergence`, or `extinction` when the ESD is the zero vector.
pub fn cmd_verify(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    ensure_dir(&opts.out)?;
    let mut report = RunReport::new("verify", &scenario.name);
    let outcome = (|| -> Result<()> {
        let s = setup(scenario, opts, &mut report)?;
        let esd = solve_esd(&s.params, None, DEFAULT_TOL, DEFAULT_MAXIT)?;
        report.esd_summary = Some(esd_summary(&esd));
        report.detail("persistence_set", one_based(&esd.persistence_set));
        let traj = run_dynamics(&s, Some(&esd), &mut report)?;

        if s.spec.scheme == Scheme::FullyImplicit {
            // vacuous when S is undefined along the run
            let flagged = defined_trace(&s.params, &traj, &esd)?.map_or(0, |t| t.flagged.len());
            report.detail("entropy_violations", flagged as u64);
            report.verdict("entropy_monotone", flagged == 0);
        }
        let certified = verify_esd(&s.params, &esd.f_tilde, &esd.r_tilde, ESD_CHECK_TOL)?.is_esd;
        let psum = persistence_sum(&esd, &s.params);
        report.detail_num("persistence_sum", psum);
        report.verdict("persistence_sum", certified && psum >= -PERSISTENCE_SLACK);

        let last = traj.last();
        if esd.persistence_set.is_empty() {
            let f_ratio = last.f.sum() / s.state0.f.sum().max(f64::MIN_POSITIVE);
            let r_gap = (&last.r - &s.params.r_star).amax();
            report.detail_num("extinction_mass_ratio", f_ratio);
            report.detail_num("extinction_resource_gap", r_gap);
            report.verdict("extinction", f_ratio <= EXTINCTION_TOL && r_gap <= EXTINCTION_TOL);
        } else {
            let tol = opts.tol.unwrap_or(ESD_CONVERGENCE_TOL);
            let c = compare(last, &esd);
            report.verdict("esd_convergence", c.l1_distance_f <= tol && c.linf_distance_r <= tol);
        }

        write_trajectory(&opts.out.join("trajectory.csv"), &traj)?;
        write_esd(&opts.out.join("esd.csv"), &s.spec.grid(), &esd)?;
        let table = TrajectoryTable::from_trajectory(&traj);
        for (name, svg) in [
            ("profile.svg", svg::profile(&table)),
            ("entropy.svg", svg::entropy(&table, true)),
            ("waterfall.svg", svg::waterfall(&table, WATERFALL_LAYERS)),
        ] {
            let path = opts.out.join(name);
            std::fs::write(&path, svg).map_err(io_err(path))?;
        }
        Ok(())
    })();
    finish(&mut report, outcome, &opts.out)?;
    Ok(report)
}

/// `analyze`: extinction predicate, Dirac steady states for every trait
/// with `a_i > 0`, and the two-peak attempt on the two largest growth rates.
/// Requests no verdicts; per-item failures are listed in the details.
pub fn cmd_analyze(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    ensure_dir(&opts.out)?;
    let mut report = RunReport::new("analyze", &scenario.name);
    let outcome = (|| -> Result<()> {
        let s = setup(scenario, opts, &mut report)?;
        let p = &s.params;
        let outcome = match extinction_predicate(p) {
            Outcome::Extinction => "extinction",
            Outcome::Survival => "survival",
        };
        report.detail("outcome", outcome);
        report.detail("positive_steady_state_excluded", positive_steady_state_excluded(p));
        let candidates: Vec<usize> = (0..p.n()).filter(|&i| p.a[i] > 0.0).collect();
        report.detail("dirac.count", candidates.len() as u64);
        for &i in &candidates {
            let key = format!("dirac.{:03}", i + 1);
            match dirac_steady_state(p, i) {
                Ok(d) => report.detail_num(format!("{key}.rho_bar"), d.rho_bar),
                Err(e) => report.detail(format!("{key}.error"), e.to_string()),
            }
        }
        let mut by_growth = candidates.clone();
        by_growth.sort_by(|&x, &y| p.a[y].total_cmp(&p.a[x]).then(x.cmp(&y)));
        if let [i, l, ..] = by_growth[..] {
            report.detail("two_peak.traits", format!("{},{}", i + 1, l + 1));
            match two_peak_steady_state(p, i, l) {
                Ok(TwoPeakOutcome::Found(tp)) => {
                    report.detail("two_peak.status", "found");
                    report.detail_num("two_peak.rho1", tp.rho1);
                    report.detail_num("two_peak.rho2", tp.rho2);
                }
                Ok(TwoPeakOutcome::ConditionFailed { .. }) => report.detail("two_peak.status", "condition_failed"),
                Ok(TwoPeakOutcome::LeftQuadrant { .. }) => report.detail("two_peak.status", "left_quadrant"),
                Err(e) => {
                    report.detail("two_peak.status", "error");
                    report.detail("two_peak.error", e.to_string());
                }
            }
        }
        Ok(())
    })();
    finish(&mut report, outcome, &opts.out)?;
    Ok(report)
}

/// `plot`: renders a stored `trajectory.csv`.
pub fn cmd_plot(csv_path: &Path, kind: PlotKind, log: bool, output: &Path) -> Result<()> {
    let table = read_trajectory(csv_path)?;
    let svg = svg::render(&table, kind, log);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    std::fs::write(output, svg).map_err(io_err(output))
}
