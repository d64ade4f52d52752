//! Disturbance model: the set of noise matrices `W` (m_w x N) satisfying the
//! quadratic matrix inequality
//! `[W; I]' [Q_w S_w; S_w' R_w] [W; I] >= 0` with `R_w > 0`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

const SYMMETRY_TOL: f64 = 1e-12;
const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet")]
pub struct DisturbanceSet {
    #[serde(with = "linalg::rows")]
    q_w: Mat,
    #[serde(with = "linalg::rows")]
    s_w: Mat,
    #[serde(with = "linalg::rows")]
    r_w: Mat,
}

#[derive(Deserialize)]
struct RawSet {
    #[serde(with = "linalg::rows")]
    q_w: Mat,
    #[serde(with = "linalg::rows")]
    s_w: Mat,
    #[serde(with = "linalg::rows")]
    r_w: Mat,
}

impl TryFrom<RawSet> for DisturbanceSet {
    type Error = Error;
    fn try_from(raw: RawSet) -> Result<Self> {
        DisturbanceSet::new(raw.q_w, raw.s_w, raw.r_w)
    }
}

impl DisturbanceSet {
    /// General quadratic-matrix-inequality set. Only `R_w > 0` and the
    /// symmetry of `Q_w`, `R_w` are checked.
    pub fn new(q_w: Mat, s_w: Mat, r_w: Mat) -> Result<Self> {
        let m_w = q_w.nrows();
        let n = r_w.nrows();
        if q_w.ncols() != m_w || r_w.ncols() != n || s_w.shape() != (m_w, n) {
            return Err(Error::Dimension(format!(
                "Q_w {:?}, S_w {:?}, R_w {:?} are inconsistent",
                q_w.shape(),
                s_w.shape(),
                r_w.shape()
            )));
        }
        for (name, m) in [("Q_w", &q_w), ("R_w", &r_w)] {
            let scale = m.amax().max(1.0);
            if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        if n == 0 || linalg::min_sym_eigenvalue(&r_w) <= 0.0 {
            return Err(Error::InvalidArgument("R_w must be positive definite".into()));
        }
        Ok(Self { q_w: linalg::sym(&q_w), s_w, r_w: linalg::sym(&r_w) })
    }

    /// Set of all `W` with `sigma_max(W) <= w_bar`: `Q_w = -I`, `S_w = 0`,
    /// `R_w = w_bar^2 I`.
    pub fn from_sigma_bound(w_bar: f64, m_w: usize, horizon: usize) -> Result<Self> {
        if !(w_bar > 0.0) || !w_bar.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise bound must be positive and finite, got {w_bar}"
            )));
        }
        Self::new(
            -Mat::identity(m_w, m_w),
            Mat::zeros(m_w, horizon),
            Mat::identity(horizon, horizon) * (w_bar * w_bar),
        )
    }

    pub fn q_w(&self) -> &Mat {
        &self.q_w
    }
    pub fn s_w(&self) -> &Mat {
        &self.s_w
    }
    pub fn r_w(&self) -> &Mat {
        &self.r_w
    }
    pub fn m_w(&self) -> usize {
        self.q_w.nrows()
    }
    pub fn horizon(&self) -> usize {
        self.r_w.nrows()
    }

    /// `Some(w_bar)` when the set is exactly a singular-value ball.
    pub fn sigma_bound(&self) -> Option<f64> {
        let m_w = self.m_w();
        let n = self.horizon();
        let r = self.r_w[(0, 0)];
        let q_ok = (&self.q_w + Mat::identity(m_w, m_w)).amax() == 0.0;
        let r_ok = (&self.r_w - Mat::identity(n, n) * r).amax() == 0.0;
        (q_ok && r_ok && self.s_w.amax() == 0.0).then(|| r.sqrt())
    }

    /// `W' Q_w W + W' S_w + S_w' W + R_w`.
    pub fn qmi_value(&self, w: &Mat) -> Result<Mat> {
        if w.shape() != (self.m_w(), self.horizon()) {
            return Err(Error::Dimension(format!(
                "W is {:?}, set expects {}x{}",
                w.shape(),
                self.m_w(),
                self.horizon()
            )));
        }
        let cross = w.transpose() * &self.s_w;
        Ok(w.transpose() * &self.q_w * w + &cross + cross.transpose() + &self.r_w)
    }

    pub fn contains(&self, w: &Mat) -> Result<bool> {
        membership(w, self, DEFAULT_MEMBERSHIP_TOL)
    }

    /// Whether the set is convex in the sense needed for sampling and the
    /// Schur-complement LMI form (`Q_w < 0`).
    pub fn has_negative_definite_q(&self) -> bool {
        self.m_w() == 0 || linalg::max_sym_eigenvalue(&self.q_w) < 0.0
    }

    /// Random element. The set is the matrix ellipsoid
    /// `W = W_c + (-Q_w)^{-1/2} D Rt^{1/2}` with `sigma_max(D) <= 1`; `D` gets
    /// a Gaussian direction and a radius uniform in `[0, 1]` (or exactly 1
    /// with probability one half when `boundary_bias` is set).
    pub fn sample<R: Rng>(&self, rng: &mut R, boundary_bias: bool) -> Result<Mat> {
        let (m_w, n) = (self.m_w(), self.horizon());
        if m_w == 0 {
            return Ok(Mat::zeros(0, n));
        }
        if !self.has_negative_definite_q() {
            return Err(Error::UnsupportedModel(
                "sampling needs Q_w negative definite (bounded set)".into(),
            ));
        }
        let qn = -&self.q_w;
        let qn_inv = linalg::spd_inverse(&qn)?;
        let center = &qn_inv * &self.s_w;
        let r_tilde = &self.r_w + self.s_w.transpose() * &qn_inv * &self.s_w;
        let dir = Mat::from_fn(m_w, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let smax = linalg::sigma_max(&dir);
        let radius = if boundary_bias && rng.gen_bool(0.5) { 1.0 } else { rng.gen::<f64>() };
        let unit = if smax > 0.0 { dir * (radius / smax) } else { dir };
        let left = linalg::psd_sqrt(&qn_inv);
        let right = linalg::psd_sqrt(&r_tilde);
        Ok(center + left * unit * right)
    }
}

/// `true` iff the QMI holds for `W` up to `-tol * ||R_w||` on the smallest
/// eigenvalue.
pub fn membership(w: &Mat, set: &DisturbanceSet, tol: f64) -> Result<bool> {
    let value = set.qmi_value(w)?;
    let scale = linalg::max_sym_eigenvalue(set.r_w());
    Ok(linalg::min_sym_eigenvalue(&value) >= -tol * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_bound_matrices() {
        let set = DisturbanceSet::from_sigma_bound(0.02, 3, 20).unwrap();
        assert_eq!(set.q_w(), &-Mat::identity(3, 3));
        assert_eq!(set.s_w(), &Mat::zeros(3, 20));
        assert!((set.r_w() - Mat::identity(20, 20) * 0.0004).amax() < 1e-18);
        assert_eq!(set.sigma_bound(), Some(0.02));

        let unit = DisturbanceSet::from_sigma_bound(1.0, 1, 1).unwrap();
        assert_eq!((unit.q_w()[(0, 0)], unit.s_w()[(0, 0)], unit.r_w()[(0, 0)]), (-1.0, 0.0, 1.0));
    }

    #[test]
    fn nonpositive_bound_is_rejected() {
        assert!(DisturbanceSet::from_sigma_bound(0.0, 2, 3).is_err());
        assert!(DisturbanceSet::from_sigma_bound(-1.0, 2, 3).is_err());
        assert!(DisturbanceSet::new(Mat::zeros(1, 1), Mat::zeros(1, 2), Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_disturbance_is_member() {
        let set = DisturbanceSet::from_sigma_bound(0.3, 2, 5).unwrap();
        assert!(set.contains(&Mat::zeros(2, 5)).unwrap());
    }

    #[test]
    fn rank_one_above_bound_is_not_member() {
        let set = DisturbanceSet::from_sigma_bound(1.0, 2, 3).unwrap();
        let u = nalgebra::DVector::from_vec(vec![0.6, 0.8]);
        let v = nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let w = &u * v.transpose() * 2.0;
        assert!(!set.contains(&w).unwrap());
    }

    #[test]
    fn boundary_is_member_within_tolerance() {
        // W = U diag(w_bar, w_bar/2) V' built from orthogonal factors.
        let w_bar = 0.7;
        let th: f64 = 0.3;
        let u = Mat::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let v = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
        let s = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![w_bar, w_bar / 2.0]));
        let w = u * s * v.transpose();
        let set = DisturbanceSet::from_sigma_bound(w_bar, 2, 3).unwrap();
        assert!(set.contains(&w).unwrap());
        assert!(!set.contains(&(w * 1.001)).unwrap());
    }

    #[test]
    fn membership_checks_dimensions() {
        let set = DisturbanceSet::from_sigma_bound(1.0, 2, 3).unwrap();
        assert!(matches!(set.contains(&Mat::zeros(3, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn samples_of_general_ellipsoid_are_members() {
        let q = Mat::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        let s = Mat::from_row_slice(2, 3, &[0.1, 0.0, -0.2, 0.05, 0.1, 0.0]);
        let r = Mat::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.5, 0.1, 0.0, 0.1, 0.8]);
        let set = DisturbanceSet::new(q, s, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let w = set.sample(&mut rng, true).unwrap();
            assert!(membership(&w, &set, 1e-9).unwrap());
        }
    }

    #[test]
    fn sampling_rejects_indefinite_q() {
        let set = DisturbanceSet::new(Mat::identity(1, 1), Mat::zeros(1, 2), Mat::identity(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(set.sample(&mut rng, false), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn json_rejects_indefinite_r() {
        let bad = r#"{"q_w":[[-1.0]],"s_w":[[0.0]],"r_w":[[-1.0]]}"#;
        assert!(serde_json::from_str::<DisturbanceSet>(bad).is_err());
        let good = r#"{"q_w":[[-1.0]],"s_w":[[0.0]],"r_w":[[4.0]]}"#;
        let set: DisturbanceSet = serde_json::from_str(good).unwrap();
        assert_eq!(set.sigma_bound(), Some(2.0));
    }
}
