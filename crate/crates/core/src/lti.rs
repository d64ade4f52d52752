//! Discrete-time LTI plant `x+ = A x + B_w w + B u`, `z = C x + D_w w + D u`,
//! trajectory simulation and randomized open-loop experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    #[serde(with = "linalg::rows")]
    pub a: Mat,
    #[serde(with = "linalg::rows")]
    pub b: Mat,
    #[serde(with = "linalg::rows")]
    pub b_w: Mat,
    #[serde(with = "linalg::rows")]
    pub c: Mat,
    #[serde(with = "linalg::rows")]
    pub d_w: Mat,
    #[serde(with = "linalg::rows")]
    pub d: Mat,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, b_w: Mat, c: Mat, d_w: Mat, d: Mat) -> Result<Self> {
        let sys = Self { a, b, b_w, c, d_w, d };
        sys.validate()?;
        Ok(sys)
    }

    /// Plant with performance output `z = x` and no feedthrough.
    pub fn with_state_output(a: Mat, b: Mat, b_w: Mat) -> Result<Self> {
        let (n, m, m_w) = (a.nrows(), b.ncols(), b_w.ncols());
        Self::new(a, b, b_w, Mat::identity(n, n), Mat::zeros(n, m_w), Mat::zeros(n, m))
    }

    /// The unstable three-state, two-input benchmark plant with `B_w = C = I`
    /// and `D = D_w = 0`.
    pub fn benchmark() -> Self {
        let a = Mat::from_row_slice(3, 3, &[-0.5, 1.4, 0.4, -0.9, 0.3, -1.5, 1.1, 1.0, -0.4]);
        let b = Mat::from_row_slice(3, 2, &[0.1, -0.3, -0.1, -0.7, 0.7, -1.0]);
        Self::with_state_output(a, b, Mat::identity(3, 3)).expect("benchmark dimensions are consistent")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn m_w(&self) -> usize {
        self.b_w.ncols()
    }
    pub fn p_z(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let checks = [
            (self.a.ncols() == n, "A must be square"),
            (self.b.nrows() == n, "B must have n rows"),
            (self.b_w.nrows() == n, "B_w must have n rows"),
            (self.c.ncols() == n, "C must have n columns"),
            (self.d_w.shape() == (self.c.nrows(), self.b_w.ncols()), "D_w must be p_z x m_w"),
            (self.d.shape() == (self.c.nrows(), self.b.ncols()), "D must be p_z x m"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Dimension(msg.into()));
            }
        }
        let all = [&self.a, &self.b, &self.b_w, &self.c, &self.d_w, &self.d];
        if !all.iter().all(|m| linalg::all_finite(m)) {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(())
    }
}

/// Trajectory of the plant: `x_{k+1} = A x_k + B u_k + B_w w_k`,
/// `z_k = C x_k + D u_k + D_w w_k`.
pub fn simulate(
    sys: &LtiSystem,
    x0: &Vector,
    u: &[Vector],
    w: &[Vector],
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    if u.len() != w.len() {
        return Err(Error::Dimension(format!(
            "input sequence has {} samples, disturbance has {}",
            u.len(),
            w.len()
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!("x0 has dimension {}, expected {}", x0.len(), sys.n())));
    }
    if let Some(k) = u.iter().position(|v| v.len() != sys.m()) {
        return Err(Error::Dimension(format!("u[{k}] has wrong dimension")));
    }
    if let Some(k) = w.iter().position(|v| v.len() != sys.m_w()) {
        return Err(Error::Dimension(format!("w[{k}] has wrong dimension")));
    }
    let mut states = Vec::with_capacity(u.len() + 1);
    let mut outputs = Vec::with_capacity(u.len());
    let mut x = x0.clone();
    states.push(x.clone());
    for (uk, wk) in u.iter().zip(w) {
        outputs.push(&sys.c * &x + &sys.d * uk + &sys.d_w * wk);
        x = &sys.a * &x + &sys.b * uk + &sys.b_w * wk;
        states.push(x.clone());
    }
    Ok((states, outputs))
}

/// Measured open-loop trajectory `x_0..x_N`, `u_0..u_{N-1}`.
///
/// `true_disturbance` is kept only so tests can replay the experiment; the
/// synthesis routines never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    #[serde(with = "vectors")]
    pub states: Vec<Vector>,
    #[serde(with = "vectors")]
    pub inputs: Vec<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vectors")]
    pub true_disturbance: Option<Vec<Vector>>,
}

impl DataRecord {
    pub fn new(states: Vec<Vector>, inputs: Vec<Vector>) -> Result<Self> {
        let rec = Self { states, inputs, true_disturbance: None };
        rec.validate()?;
        Ok(rec)
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.inputs.len() + 1 {
            return Err(Error::Dimension(format!(
                "record has {} states and {} inputs; expected one more state than inputs",
                self.states.len(),
                self.inputs.len()
            )));
        }
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        if self.states.iter().any(|x| x.len() != n) || self.inputs.iter().any(|u| u.len() != m) {
            return Err(Error::Dimension("inconsistent sample dimensions in record".into()));
        }
        if let Some(w) = &self.true_disturbance {
            if w.len() != self.inputs.len() {
                return Err(Error::Dimension("disturbance length differs from input length".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub horizon: usize,
    /// Per-channel bound; inputs are drawn uniformly from `[-b_i, b_i]`.
    pub input_bounds: Vec<f64>,
    /// Radius of the disturbance ball over the whole stacked sequence, so
    /// that `||W||_F <= noise_bound`.
    pub noise_bound: f64,
    pub x0: Option<Vector>,
}

impl ExperimentSpec {
    pub fn new(horizon: usize, input_bound: f64, inputs: usize, noise_bound: f64) -> Self {
        Self { horizon, input_bounds: vec![input_bound; inputs], noise_bound, x0: None }
    }
}

/// Open-loop experiment with i.i.d. uniform inputs and a disturbance drawn
/// uniformly from the Frobenius ball of radius `noise_bound`.
pub fn generate_experiment(sys: &LtiSystem, spec: &ExperimentSpec, seed: u64) -> Result<DataRecord> {
    if spec.horizon == 0 {
        return Err(Error::InvalidArgument("experiment horizon must be at least 1".into()));
    }
    if spec.input_bounds.len() != sys.m() {
        return Err(Error::Dimension(format!(
            "{} input bounds given for {} inputs",
            spec.input_bounds.len(),
            sys.m()
        )));
    }
    if spec.noise_bound < 0.0 || spec.input_bounds.iter().any(|&b| b < 0.0) {
        return Err(Error::InvalidArgument("bounds must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vector> = (0..spec.horizon)
        .map(|_| {
            Vector::from_iterator(
                sys.m(),
                spec.input_bounds.iter().map(|&b| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 }),
            )
        })
        .collect();
    let disturbance = sample_frobenius_ball(&mut rng, sys.m_w(), spec.horizon, spec.noise_bound);
    let x0 = match &spec.x0 {
        Some(x0) => x0.clone(),
        None => Vector::zeros(sys.n()),
    };
    let (states, _) = simulate(sys, &x0, &inputs, &disturbance)?;
    Ok(DataRecord { states, inputs, true_disturbance: Some(disturbance) })
}

/// `cols` vectors of dimension `dim` whose stacked concatenation is uniform
/// in the Euclidean ball of radius `radius`.
pub fn sample_frobenius_ball<R: Rng>(rng: &mut R, dim: usize, cols: usize, radius: f64) -> Vec<Vector> {
    let total = dim * cols;
    if total == 0 || radius == 0.0 {
        return vec![Vector::zeros(dim); cols];
    }
    let mut flat: Vec<f64> = (0..total).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.gen::<f64>().powf(1.0 / total as f64);
    for v in &mut flat {
        *v *= r / norm;
    }
    flat.chunks(dim).map(Vector::from_column_slice).collect()
}

/// Stack a sequence of equal-length vectors as matrix columns.
pub fn columns(seq: &[Vector], dim: usize) -> Mat {
    let mut m = Mat::zeros(dim, seq.len());
    for (k, v) in seq.iter().enumerate() {
        m.set_column(k, v);
    }
    m
}

mod vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = v.iter().map(|x| x.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(Vector::from_vec).collect())
    }
}

mod opt_vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vector>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::vectors::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vector>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        Ok(rows.map(|r| r.into_iter().map(Vector::from_vec).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_reachability() {
        let n = 2;
        let sys = LtiSystem::with_state_output(Mat::zeros(n, n), Mat::identity(n, n), Mat::identity(n, 1))
            .unwrap();
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let (x, _) = simulate(&sys, &Vector::zeros(n), std::slice::from_ref(&e1), &[Vector::zeros(1)]).unwrap();
        assert_eq!(x[1], e1);
    }

    #[test]
    fn zero_inputs_give_zero_trajectory() {
        let sys = LtiSystem::benchmark();
        let u = vec![Vector::zeros(2); 5];
        let w = vec![Vector::zeros(3); 5];
        let (x, z) = simulate(&sys, &Vector::zeros(3), &u, &w).unwrap();
        assert!(x.iter().chain(z.iter()).all(|v| v.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn simulate_rejects_mismatch() {
        let sys = LtiSystem::benchmark();
        let u = vec![Vector::zeros(2); 2];
        let w = vec![Vector::zeros(3); 3];
        assert!(matches!(simulate(&sys, &Vector::zeros(3), &u, &w), Err(Error::Dimension(_))));
        assert!(matches!(simulate(&sys, &Vector::zeros(2), &u, &u), Err(Error::Dimension(_))));
    }

    #[test]
    fn experiment_is_deterministic_and_noise_free_when_asked() {
        let sys = LtiSystem::benchmark();
        let spec = ExperimentSpec::new(10, 1.0, 2, 0.0);
        let a = generate_experiment(&sys, &spec, 7).unwrap();
        let b = generate_experiment(&sys, &spec, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.true_disturbance.unwrap().iter().all(|w| w.iter().all(|&e| e == 0.0)));
        let c = generate_experiment(&sys, &spec, 8).unwrap();
        assert_ne!(b.inputs, c.inputs);
    }

    #[test]
    fn inputs_respect_box() {
        let sys = LtiSystem::benchmark();
        let spec = ExperimentSpec { horizon: 50, input_bounds: vec![0.5, 2.0], noise_bound: 0.1, x0: None };
        let rec = generate_experiment(&sys, &spec, 1).unwrap();
        assert!(rec.inputs.iter().all(|u| u[0].abs() <= 0.5 && u[1].abs() <= 2.0));
    }

    #[test]
    fn record_json_roundtrip() {
        let sys = LtiSystem::benchmark();
        let rec = generate_experiment(&sys, &ExperimentSpec::new(3, 1.0, 2, 0.01), 3).unwrap();
        let text = serde_json::to_string(&rec).unwrap();
        let back: DataRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
        let sys_text = serde_json::to_string(&sys).unwrap();
        assert!(sys_text.contains("[[-0.5,1.4,0.4],"));
    }
}
