//! Experiment runners behind the subcommands. Everything here is
//! deterministic given the seeds.

use ddsf_core::datamat::DataMatrices;
use ddsf_core::linalg::{self, Mat};
use ddsf_core::lti::{generate_experiment, ExperimentSpec, LtiSystem};
use ddsf_core::noise::DisturbanceSet;
use ddsf_core::synth::{
    hinf_optimize, mixed_synthesis, quad_perf_design, stabilize, KnownMatrices, MixedSystem, PerformanceIndex,
    SynthOptions, SynthesisResult,
};
use ddsf_core::verify::{
    audit_gain, audit_mixed, hinf_norm_detailed, nominal_hinf_baseline, quadratic_performance_analysis,
    analysis_solver_options, AuditReport, ClosedLoop,
};
use ddsf_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{vector, ConfigError, DesignKind, ExperimentConfig, PlantSpec, SweepSpec, BENCHMARK_PRESET};

/// Bound used for the disturbance set when `w_bar = 0`: the set must have
/// `R_w > 0`, while the data themselves stay noise free.
pub const NOISE_FREE_SET_BOUND: f64 = 1e-9;

/// Relative tolerance of reported H-infinity norms.
pub const REPORT_HINF_TOL: f64 = 1e-6;

pub const SOLVER_TOL_ENV: &str = "DDSF_SOLVER_TOL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Feasible,
    Infeasible,
    Inconclusive,
    /// `verify`: some audited sample violates the requirement.
    Rejected,
    Error,
}

impl Status {
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Infeasible(_) => Status::Infeasible,
            Error::Inconclusive(_) => Status::Inconclusive,
            _ => Status::Error,
        }
    }
}

/// Synthesis options, with `DDSF_SOLVER_TOL` overriding the duality gap
/// and feasibility tolerances of the SDP solver.
pub fn synth_options(cfg: &ExperimentConfig) -> Result<SynthOptions, ConfigError> {
    let mut opts = SynthOptions { lambda_grid: cfg.lambda(), ..SynthOptions::default() };
    if let Ok(raw) = std::env::var(SOLVER_TOL_ENV) {
        let tol: f64 = raw.trim().parse().map_err(|_| ConfigError::Invalid {
            field: SOLVER_TOL_ENV.into(),
            message: format!("`{raw}` is not a number"),
        })?;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(ConfigError::Invalid { field: SOLVER_TOL_ENV.into(), message: "must lie in (0, 1)".into() });
        }
        opts.solver.gap_tol = tol;
        opts.solver.feas_tol = tol;
    }
    Ok(opts)
}

pub fn disturbance_set(w_bar: f64, m_w: usize, horizon: usize) -> Result<DisturbanceSet, Error> {
    DisturbanceSet::from_sigma_bound(w_bar.max(NOISE_FREE_SET_BOUND), m_w, horizon)
}

/// Data of one experiment, split for the data-driven part of the plant.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Plant the data come from.
    pub system: LtiSystem,
    /// `B_w`, `C`, `D_w`, `D` of the data-driven part.
    pub plant: KnownMatrices,
    pub data: DataMatrices,
    pub set: DisturbanceSet,
    pub mixed: Option<MixedSystem>,
}

/// Simulate the configured plant and assemble the data matrices.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Experiment, anyhow::Error> {
    let resolved = cfg.resolve()?;
    let system = resolved.system;
    let n = resolved.n_unknown;
    let mut spec = ExperimentSpec::new(cfg.horizon, cfg.input_bound, system.m(), cfg.noise_bound);
    spec.x0 = cfg.initial_state().map(|v| vector(&v));
    let record = generate_experiment(&system, &spec, seed)?;
    let set = disturbance_set(cfg.noise_bound, system.m_w(), cfg.horizon)?;
    let full = DataMatrices::build(&record)?;
    if n == system.n() {
        let plant = KnownMatrices::of(&system);
        return Ok(Experiment { system, plant, data: full, set, mixed: None });
    }
    let nt = system.n() - n;
    let x = full.x.rows(0, n).into_owned();
    let x_plus = full.x_plus.rows(0, n).into_owned();
    let x_tilde = full.x.rows(n, nt).into_owned();
    let data = DataMatrices::from_matrices(x, x_plus, full.u.clone())?;
    let block = |m: &Mat, r: (usize, usize), c: (usize, usize)| m.view((r.0, c.0), (r.1, c.1)).into_owned();
    let p_z = system.p_z();
    let ms = MixedSystem {
        a2: block(&system.a, (0, n), (n, nt)),
        a3: block(&system.a, (n, nt), (0, n)),
        a4: block(&system.a, (n, nt), (n, nt)),
        b2: system.b.rows(n, nt).into_owned(),
        b_w1: system.b_w.rows(0, n).into_owned(),
        b_w2: system.b_w.rows(n, nt).into_owned(),
        c1: block(&system.c, (0, p_z), (0, n)),
        c2: block(&system.c, (0, p_z), (n, nt)),
        d_w: system.d_w.clone(),
        d: system.d.clone(),
        data: data.clone(),
        x_tilde,
    };
    let plant = KnownMatrices::new(ms.b_w1.clone(), ms.c1.clone(), ms.d_w.clone(), ms.d.clone())?;
    Ok(Experiment { system, plant, data, set, mixed: Some(ms) })
}

/// Closed-loop facts about the true plant under a gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruePlantCheck {
    pub spectral_radius: f64,
    /// H-infinity norm (bisection value), when the loop is stable.
    pub hinf: Option<f64>,
    pub hinf_grid: Option<f64>,
    /// Analysis LMI for a general quadratic index.
    pub performance_satisfied: Option<bool>,
}

pub fn check_true_plant(sys: &LtiSystem, k: &Mat, perf: Option<&PerformanceIndex>) -> Result<TruePlantCheck, Error> {
    let cl = ClosedLoop::of_system(sys, k)?;
    let rho = cl.spectral_radius()?;
    let mut check = TruePlantCheck { spectral_radius: rho, hinf: None, hinf_grid: None, performance_satisfied: None };
    if rho < 1.0 {
        let h = hinf_norm_detailed(&cl, REPORT_HINF_TOL)?;
        check.hinf = Some(h.lmi);
        check.hinf_grid = Some(h.grid);
        if let Some(p) = perf.filter(|p| p.hinf_level().is_none()) {
            check.performance_satisfied = Some(quadratic_performance_analysis(&cl, p, &analysis_solver_options())?.satisfied);
        }
    } else if perf.is_some() {
        check.performance_satisfied = Some(false);
    }
    Ok(check)
}

/// Machine-readable outcome of `demo`, `synth` and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub status: Status,
    pub message: Option<String>,
    pub seed: u64,
    pub horizon: usize,
    pub noise_bound: f64,
    pub design: Option<DesignKind>,
    /// Level the design was asked to certify.
    pub gamma: Option<f64>,
    /// Smallest certified level (`hinf-optimize` and the demo).
    pub gamma_certified: Option<f64>,
    pub lambda: Option<f64>,
    pub gain: Option<Vec<Vec<f64>>>,
    pub certificate_margin: Option<f64>,
    pub equality_residual: Option<f64>,
    pub solves: Option<usize>,
    pub true_plant: Option<TruePlantCheck>,
    pub nominal_gamma: Option<f64>,
    pub nominal_gain: Option<Vec<Vec<f64>>>,
    pub audit: Option<AuditReport>,
}

impl RunReport {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            status: Status::Error,
            message: None,
            seed: cfg.seed,
            horizon: cfg.horizon,
            noise_bound: cfg.noise_bound,
            design: None,
            gamma: None,
            gamma_certified: None,
            lambda: None,
            gain: None,
            certificate_margin: None,
            equality_residual: None,
            solves: None,
            true_plant: None,
            nominal_gamma: None,
            nominal_gain: None,
            audit: None,
        }
    }

    fn fail(mut self, e: &Error) -> Self {
        self.status = Status::of_error(e);
        self.message = Some(e.to_string());
        self
    }

    fn record(&mut self, r: &SynthesisResult) {
        self.status = Status::Feasible;
        self.lambda = r.lambda;
        self.gain = Some(linalg::rows::to_rows(&r.k));
        self.certificate_margin = Some(r.diagnostics.certificate_margin);
        self.equality_residual = Some(r.diagnostics.equality_residual);
        self.solves = Some(r.diagnostics.solves);
    }

    /// 0 on a feasible design whose audit passed (or a passing `verify`),
    /// 1 on a certified infeasible design or a rejected gain, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Feasible if self.audit.as_ref().is_none_or(AuditReport::passed) => 0,
            Status::Infeasible | Status::Rejected => 1,
            _ => 2,
        }
    }
}

/// The benchmark experiment: feasibility at `gamma`, the optimized level,
/// a sampled audit, the true closed loop and the nominal baseline.
pub fn run_demo(cfg: &ExperimentConfig) -> anyhow::Result<RunReport> {
    if cfg.plant != PlantSpec::Preset(BENCHMARK_PRESET.into()) || cfg.mixed.is_some() {
        anyhow::bail!("demo runs the `{BENCHMARK_PRESET}` plant; use `synth` for other plants");
    }
    let cfg = ExperimentConfig { design: DesignKind::HinfOptimize, ..cfg.clone() };
    let opts = synth_options(&cfg)?;
    let ex = prepare(&cfg, cfg.seed)?;
    let mut report = RunReport::new("demo", &cfg);
    report.design = Some(DesignKind::HinfOptimize);
    report.gamma = Some(cfg.gamma);
    let sys = &ex.system;

    match nominal_hinf_baseline(sys, REPORT_HINF_TOL, &opts.solver) {
        Ok(nom) => {
            report.nominal_gamma = Some(nom.gamma);
            report.nominal_gain = Some(linalg::rows::to_rows(&nom.k));
        }
        Err(e) => report.message = Some(format!("nominal baseline: {e}")),
    }

    let perf = PerformanceIndex::hinf(cfg.gamma, sys.m_w(), sys.p_z());
    if let Err(e) = quad_perf_design(&ex.data, &ex.plant, &ex.set, &perf, &opts) {
        return Ok(report.fail(&e));
    }
    let lo = cfg.gamma_bracket.0.min(0.5 * cfg.gamma);
    let best = match hinf_optimize(&ex.data, &ex.plant, &ex.set, (lo, cfg.gamma), &opts) {
        Ok(r) => r,
        Err(e) => return Ok(report.fail(&e)),
    };
    report.record(&best);
    report.gamma_certified = best.gamma;
    let certified = PerformanceIndex::hinf(best.gamma.unwrap_or(cfg.gamma), sys.m_w(), sys.p_z());
    let mut audit = audit_gain(&best.k, &ex.data, &ex.plant, &ex.set, Some(&certified), cfg.audit_samples, cfg.seed);
    audit.certificate_margin = report.certificate_margin;
    audit.equality_residual = report.equality_residual;
    report.audit = Some(audit);
    match check_true_plant(sys, &best.k, None) {
        Ok(c) => report.true_plant = Some(c),
        Err(e) => report.message = Some(format!("true plant: {e}")),
    }
    Ok(report)
}

/// General synthesis from a config, followed by a sampled audit.
pub fn run_synth(cfg: &ExperimentConfig) -> anyhow::Result<RunReport> {
    let opts = synth_options(cfg)?;
    let ex = prepare(cfg, cfg.seed)?;
    let sys = &ex.system;
    let mut report = RunReport::new("synth", cfg);
    report.design = Some(cfg.design);
    let perf = cfg.performance_index(sys.m_w(), sys.p_z())?;
    report.gamma = perf.hinf_level();

    let (k, audit_perf) = match cfg.design {
        DesignKind::Stabilize => match stabilize(&ex.data, &ex.plant.b_w, &ex.set, &opts) {
            Ok(r) => {
                report.gamma = None;
                report.record(&r);
                (r.k, None)
            }
            Err(e) => return Ok(report.fail(&e)),
        },
        DesignKind::QuadPerf => match quad_perf_design(&ex.data, &ex.plant, &ex.set, &perf, &opts) {
            Ok(r) => {
                report.record(&r);
                (r.k, Some(perf.clone()))
            }
            Err(e) => return Ok(report.fail(&e)),
        },
        DesignKind::HinfOptimize => {
            report.gamma = None;
            match hinf_optimize(&ex.data, &ex.plant, &ex.set, cfg.gamma_bracket, &opts) {
                Ok(r) => {
                    report.record(&r);
                    report.gamma_certified = r.gamma;
                    let g = r.gamma.expect("optimized level");
                    (r.k, Some(PerformanceIndex::hinf(g, sys.m_w(), sys.p_z())))
                }
                Err(e) => return Ok(report.fail(&e)),
            }
        }
        DesignKind::Mixed => {
            let ms = ex.mixed.as_ref().expect("mixed configs carry the known blocks");
            match mixed_synthesis(ms, &ex.set, &perf, &opts) {
                Ok(r) => {
                    let k = r.gain();
                    report.status = Status::Feasible;
                    report.lambda = Some(r.lambda);
                    report.gain = Some(linalg::rows::to_rows(&k));
                    report.certificate_margin = Some(r.diagnostics.certificate_margin);
                    report.equality_residual = Some(r.diagnostics.equality_residual);
                    report.solves = Some(r.diagnostics.solves);
                    (k, Some(perf.clone()))
                }
                Err(e) => return Ok(report.fail(&e)),
            }
        }
    };
    let mut audit = audit_for(&ex, &k, audit_perf.as_ref(), cfg.audit_samples, cfg.seed);
    audit.certificate_margin = report.certificate_margin;
    audit.equality_residual = report.equality_residual;
    report.audit = Some(audit);
    match check_true_plant(sys, &k, audit_perf.as_ref()) {
        Ok(c) => report.true_plant = Some(c),
        Err(e) => report.message = Some(format!("true plant: {e}")),
    }
    Ok(report)
}

fn audit_for(ex: &Experiment, k: &Mat, perf: Option<&PerformanceIndex>, count: usize, seed: u64) -> AuditReport {
    match &ex.mixed {
        Some(ms) => audit_mixed(k, ms, &ex.set, perf, count, seed),
        None => audit_gain(k, &ex.data, &ex.plant, &ex.set, perf, count, seed),
    }
}

/// Audit of a given gain (`gain` in the config) on fresh data. The index
/// is the configured one, none for `stabilize`.
pub fn run_verify(cfg: &ExperimentConfig) -> anyhow::Result<RunReport> {
    let ex = prepare(cfg, cfg.seed)?;
    let sys = &ex.system;
    let Some(k) = cfg.gain_matrix()? else {
        anyhow::bail!("verify needs a `gain` in the config");
    };
    let mut report = RunReport::new("verify", cfg);
    report.design = Some(cfg.design);
    let perf = match cfg.design {
        DesignKind::Stabilize => None,
        _ => Some(cfg.performance_index(sys.m_w(), sys.p_z())?),
    };
    report.gamma = perf.as_ref().and_then(|p| p.hinf_level());
    report.gain = Some(linalg::rows::to_rows(&k));
    let audit = audit_for(&ex, &k, perf.as_ref(), cfg.audit_samples, cfg.seed);
    report.status = if audit.passed() {
        Status::Feasible
    } else if audit.errors.is_empty() && audit.samples > 0 {
        Status::Rejected
    } else {
        Status::Error
    };
    report.audit = Some(audit);
    match check_true_plant(sys, &k, perf.as_ref()) {
        Ok(c) => report.true_plant = Some(c),
        Err(e) => report.message = Some(format!("true plant: {e}")),
    }
    Ok(report)
}

/// One seeded design at a fixed H-infinity level.
#[derive(Debug, Clone)]
pub struct Trial {
    pub horizon: usize,
    pub noise_bound: f64,
    pub seed: u64,
    pub data: Option<DataMatrices>,
    pub set: Option<DisturbanceSet>,
    pub outcome: Result<SynthesisResult, Error>,
}

impl Trial {
    pub fn status(&self) -> Status {
        match &self.outcome {
            Ok(_) => Status::Feasible,
            Err(e) => Status::of_error(e),
        }
    }
}

pub fn run_trial(
    sys: &LtiSystem,
    horizon: usize,
    w_bar: f64,
    input_bound: f64,
    gamma: f64,
    seed: u64,
    opts: &SynthOptions,
) -> Trial {
    let mut trial = Trial { horizon, noise_bound: w_bar, seed, data: None, set: None, outcome: Err(Error::Malformed("not run".into())) };
    let prepared = (|| {
        let rec = generate_experiment(sys, &ExperimentSpec::new(horizon, input_bound, sys.m(), w_bar), seed)?;
        Ok::<_, Error>((DataMatrices::build(&rec)?, disturbance_set(w_bar, sys.m_w(), horizon)?))
    })();
    let (data, set) = match prepared {
        Ok(p) => p,
        Err(e) => {
            trial.outcome = Err(e);
            return trial;
        }
    };
    let perf = PerformanceIndex::hinf(gamma, sys.m_w(), sys.p_z());
    trial.outcome = quad_perf_design(&data, &KnownMatrices::of(sys), &set, &perf, opts);
    trial.data = Some(data);
    trial.set = Some(set);
    trial
}

impl Trial {
    /// Sampled audit of a feasible trial against its certified level.
    pub fn audit(&self, sys: &LtiSystem, gamma: f64, count: usize) -> Option<AuditReport> {
        let (Ok(r), Some(data), Some(set)) = (&self.outcome, &self.data, &self.set) else { return None };
        let perf = PerformanceIndex::hinf(gamma, sys.m_w(), sys.p_z());
        let mut a = audit_gain(&r.k, data, &KnownMatrices::of(sys), set, Some(&perf), count, self.seed);
        a.certificate_margin = Some(r.diagnostics.certificate_margin);
        a.equality_residual = Some(r.diagnostics.equality_residual);
        Some(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub noise_bound: f64,
    pub trials: usize,
    pub successes: usize,
    pub infeasible: usize,
    pub inconclusive: usize,
    pub errors: usize,
    /// Feasible trials whose audit passed (when audits ran).
    pub audits_passed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub gamma: f64,
    pub base_seed: u64,
    pub audit_samples: usize,
    pub rows: Vec<SweepRow>,
    /// First few audit failures, for the report.
    pub audit_failures: Vec<String>,
}

/// Seed of trial `t` at horizon index `i`: every design in the sweep gets
/// its own seed, independent of scheduling.
pub fn sweep_seed(base: u64, horizon_index: usize, trials: usize, t: usize) -> u64 {
    base + (horizon_index * trials + t) as u64
}

/// Success counts versus `N` at a fixed level, trials in parallel.
pub fn run_sweep(
    sys: &LtiSystem,
    spec: &SweepSpec,
    trials: usize,
    base_seed: u64,
    gamma: f64,
    input_bound: f64,
    audit_samples: usize,
    opts: &SynthOptions,
) -> SweepReport {
    let horizons: Vec<usize> = (spec.n_min..=spec.n_max).collect();
    let jobs: Vec<(usize, usize)> = (0..horizons.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let results: Vec<(Status, Option<AuditReport>)> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let n = horizons[i];
            let trial = run_trial(sys, n, spec.noise_per_sample * n as f64, input_bound, gamma, sweep_seed(base_seed, i, trials, t), opts);
            let audit = if audit_samples > 0 { trial.audit(sys, gamma, audit_samples) } else { None };
            (trial.status(), audit)
        })
        .collect();
    let mut rows = Vec::with_capacity(horizons.len());
    let mut audit_failures = Vec::new();
    for (i, &n) in horizons.iter().enumerate() {
        let chunk = &results[i * trials..(i + 1) * trials];
        let count = |s: Status| chunk.iter().filter(|(st, _)| *st == s).count();
        let audits_passed = (audit_samples > 0).then(|| chunk.iter().filter(|(_, a)| a.as_ref().is_some_and(AuditReport::passed)).count());
        for (t, (_, a)) in chunk.iter().enumerate() {
            if let Some(a) = a.as_ref().filter(|a| !a.passed()) {
                if audit_failures.len() < 20 {
                    audit_failures.push(format!(
                        "N={n} seed {}: {}/{} stable, performance {:?}, errors {:?}",
                        sweep_seed(base_seed, i, trials, t),
                        a.stable,
                        a.samples,
                        a.performance_pass,
                        a.errors
                    ));
                }
            }
        }
        rows.push(SweepRow {
            n,
            noise_bound: spec.noise_per_sample * n as f64,
            trials,
            successes: count(Status::Feasible),
            infeasible: count(Status::Infeasible),
            inconclusive: count(Status::Inconclusive),
            errors: count(Status::Error),
            audits_passed,
        });
    }
    SweepReport { gamma, base_seed, audit_samples, rows, audit_failures }
}
