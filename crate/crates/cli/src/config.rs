//! Experiment configuration: one JSON file, matrices as nested row arrays.

use std::path::Path;

use ddsf_core::linalg::{self, Mat, Vector};
use ddsf_core::lti::LtiSystem;
use ddsf_core::synth::{LambdaGrid, PerformanceIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("invalid config: field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

type Rows = Vec<Vec<f64>>;

/// Either the `"benchmark"` preset or explicit plant matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Preset(String),
    Matrices(PlantMatrices),
}

/// `b_w` defaults to the identity, `c` to the identity, `d_w` and `d` to
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    pub a: Rows,
    pub b: Rows,
    #[serde(default)]
    pub b_w: Option<Rows>,
    #[serde(default)]
    pub c: Option<Rows>,
    #[serde(default)]
    pub d_w: Option<Rows>,
    #[serde(default)]
    pub d: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Robust stabilization only.
    Stabilize,
    /// Quadratic performance with the given index (H-infinity at `gamma`
    /// when none is given).
    QuadPerf,
    /// Smallest certified H-infinity level.
    HinfOptimize,
    /// Partially known plant, see [`MixedSpec`].
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceSpec {
    pub q: Rows,
    pub s: Rows,
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    pub min_exp: f64,
    pub max_exp: f64,
    pub points: usize,
    #[serde(default)]
    pub refine: bool,
}

/// Known blocks of a partially known plant. `plant` then describes the
/// unknown part `(A1, B1)` together with `B_w1`, `C1`, `D_w` and `D`; the
/// full state is `[x; x~]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedSpec {
    pub a2: Rows,
    pub a3: Rows,
    pub a4: Rows,
    pub b2: Rows,
    #[serde(default)]
    pub b_w2: Option<Rows>,
    #[serde(default)]
    pub c2: Option<Rows>,
    #[serde(default)]
    pub x0_tilde: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_min: usize,
    pub n_max: usize,
    /// `w_bar = noise_per_sample * N`.
    pub noise_per_sample: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { n_min: 4, n_max: 20, noise_per_sample: 0.001 }
    }
}

fn default_plant() -> PlantSpec {
    PlantSpec::Preset(BENCHMARK_PRESET.into())
}
fn default_horizon() -> usize {
    20
}
fn default_noise() -> f64 {
    0.02
}
fn default_input_bound() -> f64 {
    1.0
}
fn default_design() -> DesignKind {
    DesignKind::HinfOptimize
}
fn default_gamma() -> f64 {
    2.4
}
fn default_bracket() -> (f64, f64) {
    (1.0, 4.0)
}
fn default_audit_samples() -> usize {
    500
}
fn default_trials() -> usize {
    100
}

pub const BENCHMARK_PRESET: &str = "benchmark";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_plant")]
    pub plant: PlantSpec,
    /// Number of samples `N`.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// `w_bar`: bound on the disturbance sequence, `||W|| <= w_bar`.
    #[serde(default = "default_noise")]
    pub noise_bound: f64,
    /// Inputs are drawn uniformly from `[-input_bound, input_bound]`.
    #[serde(default = "default_input_bound")]
    pub input_bound: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_design")]
    pub design: DesignKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_bracket")]
    pub gamma_bracket: (f64, f64),
    #[serde(default)]
    pub performance: Option<PerformanceSpec>,
    #[serde(default)]
    pub lambda_grid: Option<LambdaSpec>,
    #[serde(default = "default_audit_samples")]
    pub audit_samples: usize,
    /// Gain checked by `verify`.
    #[serde(default)]
    pub gain: Option<Rows>,
    #[serde(default)]
    pub mixed: Option<MixedSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Validated plant, split into the known blocks when the config is mixed.
#[derive(Debug, Clone)]
pub struct ResolvedPlant {
    /// Plant used for simulation (the full plant for mixed configs).
    pub system: LtiSystem,
    /// Size of the unknown part `n` (equal to the state dimension unless
    /// mixed).
    pub n_unknown: usize,
}

fn matrix(field: &str, rows: &Rows) -> Result<Mat, ConfigError> {
    let m = linalg::rows::from_rows(rows).map_err(|e| invalid(field, e))?;
    if !linalg::all_finite(&m) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(m)
}

fn shaped(field: &str, rows: &Option<Rows>, shape: (usize, usize), default: Mat) -> Result<Mat, ConfigError> {
    let m = match rows {
        Some(r) => matrix(field, r)?,
        None => default,
    };
    if m.shape() != shape {
        return Err(invalid(field, format!("is {}x{}, expected {}x{}", m.nrows(), m.ncols(), shape.0, shape.1)));
    }
    Ok(m)
}

fn check_shape(field: &str, m: &Mat, shape: (usize, usize)) -> Result<(), ConfigError> {
    if m.shape() != shape {
        return Err(invalid(field, format!("is {}x{}, expected {}x{}", m.nrows(), m.ncols(), shape.0, shape.1)));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: name.clone(), source })?;
        Self::from_json(&text, &name)
    }

    /// The unknown-part plant `(A, B, B_w, C, D_w, D)` as written.
    fn base_plant(&self) -> Result<LtiSystem, ConfigError> {
        match &self.plant {
            PlantSpec::Preset(name) if name == BENCHMARK_PRESET => Ok(LtiSystem::benchmark()),
            PlantSpec::Preset(name) => {
                Err(invalid("plant", format!("unknown preset `{name}` (expected `{BENCHMARK_PRESET}` or matrices)")))
            }
            PlantSpec::Matrices(p) => {
                let a = matrix("plant.a", &p.a)?;
                let n = a.nrows();
                check_shape("plant.a", &a, (n, n))?;
                if n == 0 {
                    return Err(invalid("plant.a", "must have at least one state"));
                }
                let b = matrix("plant.b", &p.b)?;
                if b.nrows() != n || b.ncols() == 0 {
                    return Err(invalid("plant.b", format!("is {}x{}, expected {n} rows and at least one column", b.nrows(), b.ncols())));
                }
                let m = b.ncols();
                let b_w = match &p.b_w {
                    Some(r) => matrix("plant.b_w", r)?,
                    None => Mat::identity(n, n),
                };
                if b_w.nrows() != n || b_w.ncols() == 0 {
                    return Err(invalid("plant.b_w", format!("is {}x{}, expected {n} rows", b_w.nrows(), b_w.ncols())));
                }
                let m_w = b_w.ncols();
                let c = match &p.c {
                    Some(r) => matrix("plant.c", r)?,
                    None => Mat::identity(n, n),
                };
                if c.ncols() != n || c.nrows() == 0 {
                    return Err(invalid("plant.c", format!("is {}x{}, expected {n} columns", c.nrows(), c.ncols())));
                }
                let p_z = c.nrows();
                let d_w = shaped("plant.d_w", &p.d_w, (p_z, m_w), Mat::zeros(p_z, m_w))?;
                let d = shaped("plant.d", &p.d, (p_z, m), Mat::zeros(p_z, m))?;
                LtiSystem::new(a, b, b_w, c, d_w, d).map_err(|e| invalid("plant", e.to_string()))
            }
        }
    }

    /// Check every field and build the simulated plant. Nothing is solved
    /// before this succeeds.
    pub fn resolve(&self) -> Result<ResolvedPlant, ConfigError> {
        let base = self.base_plant()?;
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(self.noise_bound >= 0.0 && self.noise_bound.is_finite()) {
            return Err(invalid("noise_bound", "must be finite and non-negative"));
        }
        if !(self.input_bound >= 0.0 && self.input_bound.is_finite()) {
            return Err(invalid("input_bound", "must be finite and non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive and finite"));
        }
        let (lo, hi) = self.gamma_bracket;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid("gamma_bracket", "needs 0 <= lo < hi < inf"));
        }
        if let Some(g) = &self.lambda_grid {
            if g.points == 0 || !(g.min_exp <= g.max_exp) {
                return Err(invalid("lambda_grid", "needs points >= 1 and min_exp <= max_exp"));
            }
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        let s = &self.sweep;
        if s.n_min == 0 || s.n_max < s.n_min {
            return Err(invalid("sweep", "needs 1 <= n_min <= n_max"));
        }
        if !(s.noise_per_sample >= 0.0 && s.noise_per_sample.is_finite()) {
            return Err(invalid("sweep.noise_per_sample", "must be finite and non-negative"));
        }

        let n = base.n();
        let system = match (&self.mixed, self.design) {
            (None, DesignKind::Mixed) => return Err(invalid("mixed", "design `mixed` needs a `mixed` section")),
            (None, _) => base.clone(),
            (Some(_), d) if d != DesignKind::Mixed => {
                return Err(invalid("mixed", "a `mixed` section needs design `mixed`"))
            }
            (Some(mx), _) => {
                let a4 = matrix("mixed.a4", &mx.a4)?;
                let nt = a4.nrows();
                check_shape("mixed.a4", &a4, (nt, nt))?;
                let (m, m_w, p_z) = (base.m(), base.m_w(), base.p_z());
                let a2 = shaped("mixed.a2", &Some(mx.a2.clone()), (n, nt), Mat::zeros(0, 0))?;
                let a3 = shaped("mixed.a3", &Some(mx.a3.clone()), (nt, n), Mat::zeros(0, 0))?;
                let b2 = shaped("mixed.b2", &Some(mx.b2.clone()), (nt, m), Mat::zeros(0, 0))?;
                let b_w2 = shaped("mixed.b_w2", &mx.b_w2, (nt, m_w), Mat::zeros(nt, m_w))?;
                let c2 = shaped("mixed.c2", &mx.c2, (p_z, nt), Mat::zeros(p_z, nt))?;
                if let Some(x0t) = &mx.x0_tilde {
                    if x0t.len() != nt {
                        return Err(invalid("mixed.x0_tilde", format!("has length {}, expected {nt}", x0t.len())));
                    }
                }
                let stack = |top: &[&Mat], bottom: &[&Mat]| -> Result<Mat, ConfigError> {
                    let t = linalg::hstack(top).map_err(|e| invalid("mixed", e.to_string()))?;
                    let b = linalg::hstack(bottom).map_err(|e| invalid("mixed", e.to_string()))?;
                    linalg::vstack(&[&t, &b]).map_err(|e| invalid("mixed", e.to_string()))
                };
                let a = stack(&[&base.a, &a2], &[&a3, &a4])?;
                let b = linalg::vstack(&[&base.b, &b2]).map_err(|e| invalid("mixed", e.to_string()))?;
                let b_w = linalg::vstack(&[&base.b_w, &b_w2]).map_err(|e| invalid("mixed", e.to_string()))?;
                let c = linalg::hstack(&[&base.c, &c2]).map_err(|e| invalid("mixed", e.to_string()))?;
                
                LtiSystem::new(a, b, b_w, c, base.d_w.clone(), base.d.clone())
                    .map_err(|e| invalid("mixed", e.to_string()))?
            }
        };
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(invalid("x0", format!("has length {}, expected {n}", x0.len())));
            }
        }
        if let Some(p) = &self.performance {
            self.performance_from(p, system.m_w(), system.p_z())?;
        }
        if let Some(g) = &self.gain {
            let k = matrix("gain", g)?;
            check_shape("gain", &k, (system.m(), system.n()))?;
        }
        Ok(ResolvedPlant { system, n_unknown: n })
    }

    fn performance_from(&self, p: &PerformanceSpec, m_w: usize, p_z: usize) -> Result<PerformanceIndex, ConfigError> {
        let q = matrix("performance.q", &p.q)?;
        let s = matrix("performance.s", &p.s)?;
        let r = matrix("performance.r", &p.r)?;
        check_shape("performance.q", &q, (m_w, m_w))?;
        check_shape("performance.s", &s, (m_w, p_z))?;
        check_shape("performance.r", &r, (p_z, p_z))?;
        PerformanceIndex::new(q, s, r).map_err(|e| invalid("performance", e.to_string()))
    }

    /// The configured index, or H-infinity at `gamma`.
    pub fn performance_index(&self, m_w: usize, p_z: usize) -> Result<PerformanceIndex, ConfigError> {
        match &self.performance {
            Some(p) => self.performance_from(p, m_w, p_z),
            None => Ok(PerformanceIndex::hinf(self.gamma, m_w, p_z)),
        }
    }

    pub fn lambda(&self) -> LambdaGrid {
        match &self.lambda_grid {
            Some(g) => LambdaGrid { min_exp: g.min_exp, max_exp: g.max_exp, points: g.points, refine: g.refine },
            None => LambdaGrid::default(),
        }
    }

    pub fn initial_state(&self) -> Option<Vec<f64>> {
        match (&self.x0, &self.mixed) {
            (None, None) => None,
            (x0, mixed) => {
                let mut v = x0.clone().unwrap_or_default();
                if let Some(mx) = mixed {
                    if v.is_empty() {
                        let n = self.base_plant().map(|p| p.n()).unwrap_or(0);
                        v = vec![0.0; n];
                    }
                    let nt = mx.a4.len();
                    v.extend(mx.x0_tilde.clone().unwrap_or_else(|| vec![0.0; nt]));
                }
                Some(v)
            }
        }
    }

    pub fn gain_matrix(&self) -> Result<Option<Mat>, ConfigError> {
        self.gain.as_ref().map(|g| matrix("gain", g)).transpose()
    }
}

pub fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}
