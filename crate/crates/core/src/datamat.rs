//! Data matrices `X`, `X+`, `U` of one measured trajectory, excitation
//! tests, and the set of systems consistent with the data.
//!
//! A pair `(A, B)` is consistent when `X+ = A X + B U + B_w W` for some
//! admissible `W`. When `[X; U]` has full row rank this pins `W` to the
//! affine section `B_w W K = X+ K` (`K` spanning the kernel of `[X; U]`)
//! and `[A B] = (X+ - B_w W) [X; U]^+`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::lti::{columns, DataRecord};
use crate::noise::{self, DisturbanceSet};
use crate::sdp::{self, EqBuilder, LmiBuilder, SdpProblem, SdpStatus, SolverOptions, Strictness};

/// Relative singular-value cutoff for rank and kernel decisions on data.
pub const DATA_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x: Mat,
    pub x_plus: Mat,
    pub u: Mat,
}

impl DataMatrices {
    pub fn build(record: &DataRecord) -> Result<Self> {
        record.validate()?;
        let horizon = record.horizon();
        if horizon == 0 {
            return Err(Error::InsufficientData("record has no inputs".into()));
        }
        let n = record.states[0].len();
        let m = record.inputs[0].len();
        let x = columns(&record.states[..horizon], n);
        let x_plus = columns(&record.states[1..], n);
        let u = columns(&record.inputs, m);
        Ok(Self { x, x_plus, u })
    }

    /// Direct construction; shapes are checked but the overlap is not, so
    /// data from several experiments can be stacked.
    pub fn from_matrices(x: Mat, x_plus: Mat, u: Mat) -> Result<Self> {
        let horizon = x.ncols();
        if horizon == 0 {
            return Err(Error::InsufficientData("data matrices have no columns".into()));
        }
        if x_plus.shape() != x.shape() || u.ncols() != horizon {
            return Err(Error::Dimension(format!(
                "X {:?}, X+ {:?}, U {:?} are inconsistent",
                x.shape(),
                x_plus.shape(),
                u.shape()
            )));
        }
        Ok(Self { x, x_plus, u })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn m(&self) -> usize {
        self.u.nrows()
    }
    pub fn horizon(&self) -> usize {
        self.x.ncols()
    }

    /// `[X; U]`.
    pub fn stacked(&self) -> Mat {
        linalg::vstack(&[&self.x, &self.u]).expect("shapes checked on construction")
    }

    /// Column `k` of `X+` equals column `k + 1` of `X` for `k < N - 1`.
    pub fn overlap_holds(&self) -> bool {
        let horizon = self.horizon();
        (0..horizon.saturating_sub(1)).all(|k| self.x_plus.column(k) == self.x.column(k + 1))
    }

    pub fn rank(&self, tol: f64) -> usize {
        linalg::rank(&self.stacked(), tol)
    }

    /// Orthonormal basis of the kernel of `[X; U]`.
    pub fn kernel(&self) -> Mat {
        linalg::kernel_basis(&self.stacked(), DATA_RANK_TOL)
    }

    /// Scale `X`, `X+`, `U` by a common factor.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { x: &self.x * factor, x_plus: &self.x_plus * factor, u: &self.u * factor }
    }
}

/// `rank [X; U] = n + m` with relative singular value cutoff `tol`.
pub fn is_persistently_exciting(dm: &DataMatrices, tol: f64) -> bool {
    let required = dm.n() + dm.m();
    dm.horizon() >= required && dm.rank(tol) == required
}

/// Whether the depth-`(n+1)` Hankel matrix of disturbance and input has
/// full row rank. Together with controllability of `(A, [B B_w])` this
/// implies persistent excitation of the state-input data.
pub fn willems_sufficient_check(w_seq: &[Vector], u_seq: &[Vector], n: usize) -> Result<bool> {
    let horizon = u_seq.len();
    if w_seq.len() != horizon {
        return Err(Error::Dimension(format!("{} disturbance and {horizon} input samples", w_seq.len())));
    }
    if horizon < 2 * n + 1 {
        return Err(Error::InsufficientData(format!(
            "need at least {} samples for state dimension {n}, got {horizon}",
            2 * n + 1
        )));
    }
    if w_seq.first().is_some_and(|w| w.is_empty()) {
        return Err(Error::InvalidArgument("disturbance dimension must be positive".into()));
    }
    let hw = linalg::hankel(w_seq, 0, n + 1, horizon - n)?;
    let hu = linalg::hankel(u_seq, 0, n + 1, horizon - n)?;
    let h = linalg::vstack(&[&hw, &hu])?;
    Ok(linalg::rank(&h, linalg::default_rank_tol(&h)) == h.nrows())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentModel {
    pub a: Mat,
    pub b: Mat,
    pub w: Mat,
}

impl ConsistentModel {
    /// `max |X+ - A X - B U - B_w W|`.
    pub fn residual(&self, dm: &DataMatrices, b_w: &Mat) -> f64 {
        (&dm.x_plus - &self.a * &dm.x - &self.b * &dm.u - b_w * &self.w).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct SampleOptions {
    /// Put half of the samples on the boundary of the admissible section.
    pub boundary_bias: bool,
    /// Accept rank-deficient `[X; U]` by adding random components along
    /// its left kernel. Closed loops `A + B K` with `K = U G` do not depend
    /// on them.
    pub allow_rank_deficient: bool,
}


/// Ellipsoid form of a disturbance set with `Q_w < 0`:
/// `W` is admissible iff `lambda_max(D D') <= 1` with
/// `D = (-Q_w)^{1/2} (W - W_c) Rt^{-1/2}`.
struct Ellipsoid {
    center: Mat,
    left: Mat,
    right: Mat,
}

impl Ellipsoid {
    fn new(set: &DisturbanceSet) -> Result<Self> {
        if !set.has_negative_definite_q() {
            return Err(Error::UnsupportedModel("consistent-system sampling needs Q_w negative definite".into()));
        }
        let qn = -set.q_w();
        let qn_inv = linalg::spd_inverse(&qn)?;
        let center = &qn_inv * set.s_w();
        let r_tilde = set.r_w() + set.s_w().transpose() * &qn_inv * set.s_w();
        let right = linalg::psd_sqrt(&linalg::spd_inverse(&r_tilde)?);
        Ok(Self { center, left: linalg::psd_sqrt(&qn), right })
    }

    fn normalized(&self, w: &Mat) -> Mat {
        &self.left * (w - &self.center) * &self.right
    }

    fn level(d: &Mat) -> f64 {
        linalg::max_sym_eigenvalue(&(d * d.transpose()))
    }
}

/// Affine section `{W : B_w W K = X+ K}` as `W_p + span(H_i)`.
struct Section {
    particular: Mat,
    directions: Vec<Mat>,
}

fn section(dm: &DataMatrices, b_w: &Mat, kernel: &Mat) -> Result<Section> {
    let (m_w, horizon) = (b_w.ncols(), dm.horizon());
    let k = kernel.ncols();
    let dim = m_w * horizon;
    // vec(B_w W K) = (K' kron B_w) vec(W), column-major vec.
    let kron = kernel.transpose().kronecker(b_w);
    let target = &dm.x_plus * kernel;
    let rhs = Vector::from_column_slice(target.as_slice());
    let particular_vec = if k == 0 { Vector::zeros(dim) } else { linalg::pinv(&kron, DATA_RANK_TOL) * &rhs };
    if k > 0 {
        let resid = (&kron * &particular_vec - &rhs).amax();
        if resid > 1e-8 * (1.0 + rhs.amax()) {
            return Err(Error::Infeasible(format!(
                "no disturbance reproduces the data through B_w (residual {resid:.2e})"
            )));
        }
    }
    let null = if k == 0 { Mat::identity(dim, dim) } else { linalg::kernel_basis(&kron, DATA_RANK_TOL) };
    let to_mat = |v: &[f64]| Mat::from_column_slice(m_w, horizon, v);
    let directions = (0..null.ncols()).map(|j| to_mat(null.column(j).as_slice())).collect();
    Ok(Section { particular: to_mat(particular_vec.as_slice()), directions })
}

/// A point of the section strictly inside the disturbance set: the
/// minimum-norm solution when it is admissible, otherwise the point
/// maximizing the margin `[[I, D], [D', I]] > 0`.
fn section_center(sec: &Section, ell: &Ellipsoid) -> Result<Mat> {
    let d0 = ell.normalized(&sec.particular);
    if Ellipsoid::level(&d0) < 1.0 - 1e-9 {
        return Ok(sec.particular.clone());
    }
    let (m_w, horizon) = d0.shape();
    let size = m_w + horizon;
    let embed = |d: &Mat| {
        let mut f = Mat::zeros(size, size);
        f.view_mut((0, m_w), (m_w, horizon)).copy_from(&-d);
        f.view_mut((m_w, 0), (horizon, m_w)).copy_from(&-d.transpose());
        f
    };
    let mut p = SdpProblem::new();
    let mut coeffs = Vec::with_capacity(sec.directions.len());
    for h in &sec.directions {
        let c = p.scalar("c");
        let f = embed(&(&ell.left * h * &ell.right));
        let entries = (0..size)
            .flat_map(|r| (0..size).map(move |c| (r, c)))
            .filter(|&(r, c)| f[(r, c)] != 0.0).map(|(r, c)| (r, c, f[(r, c)]))
            .collect();
        coeffs.push((c.offset(), entries));
    }
    let mut constant = embed(&d0);
    for r in 0..size {
        constant[(r, r)] = -1.0;
    }
    p.add_lmi(sdp::LmiBlock { name: "center".into(), size, constant, coeffs, strictness: Strictness::Strict })?;
    let opts = SolverOptions { target_margin: f64::INFINITY, ..SolverOptions::default() };
    let out = sdp::solve(&p, &opts)?;
    match (out.status, out.values) {
        (SdpStatus::Feasible, Some(x)) => {
            let mut w = sec.particular.clone();
            for (h, c) in sec.directions.iter().zip(&x) {
                w += h * *c;
            }
            if Ellipsoid::level(&ell.normalized(&w)) < 1.0 {
                return Ok(w);
            }
            Err(Error::Inconclusive("interior point of the disturbance section failed its check".into()))
        }
        (SdpStatus::Infeasible, _) => {
            Err(Error::Infeasible("no admissible disturbance is consistent with the data".into()))
        }
        _ => Err(Error::Inconclusive(format!("interior point search undecided: {}", out.diagnostics.message))),
    }
}

/// Draw `count` models from the consistent set; see [`SampleOptions`].
pub fn sample_consistent_systems(
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    count: usize,
    seed: u64,
) -> Result<Vec<ConsistentModel>> {
    sample_consistent_systems_with(dm, b_w, set, count, seed, &SampleOptions::default())
}

pub fn sample_consistent_systems_with(
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    count: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Vec<ConsistentModel>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let sampler = ConsistentSampler::new(dm, b_w, set, opts.allow_rank_deficient)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sampler.sample(&mut rng, opts.boundary_bias)).collect()
}

/// Precomputed state for repeated consistent-model draws.
pub struct ConsistentSampler {
    dm: DataMatrices,
    b_w: Mat,
    ell: Ellipsoid,
    sec: Section,
    center: Mat,
    stacked_pinv: Mat,
    left_kernel: Mat,
}

impl ConsistentSampler {
    pub fn new(dm: &DataMatrices, b_w: &Mat, set: &DisturbanceSet, allow_rank_deficient: bool) -> Result<Self> {
        let (n, m_w) = (dm.n(), set.m_w());
        if b_w.shape() != (n, m_w) {
            return Err(Error::Dimension(format!("B_w is {:?}, expected {n}x{m_w}", b_w.shape())));
        }
        if set.horizon() != dm.horizon() {
            return Err(Error::Dimension(format!(
                "disturbance set horizon {} differs from data length {}",
                set.horizon(),
                dm.horizon()
            )));
        }
        let stacked = dm.stacked();
        let required = n + dm.m();
        let rank = linalg::rank(&stacked, DATA_RANK_TOL);
        if rank < required && !allow_rank_deficient {
            return Err(Error::RankDeficient { rank, required });
        }
        let ell = Ellipsoid::new(set)?;
        let sec = section(dm, b_w, &dm.kernel())?;
        let center = section_center(&sec, &ell)?;
        Ok(Self {
            dm: dm.clone(),
            b_w: b_w.clone(),
            ell,
            sec,
            center,
            stacked_pinv: linalg::pinv(&stacked, DATA_RANK_TOL),
            left_kernel: linalg::kernel_basis(&stacked.transpose(), DATA_RANK_TOL),
        })
    }

    /// Admissible disturbance in the section: random direction from the
    /// center, distance uniform up to the boundary.
    pub fn sample_disturbance<R: Rng>(&self, rng: &mut R, boundary_bias: bool) -> Mat {
        let mut w = self.center.clone();
        if self.sec.directions.is_empty() {
            return w;
        }
        let mut h = Mat::zeros(w.nrows(), w.ncols());
        for d in &self.sec.directions {
            h += d * rng.sample::<f64, _>(StandardNormal);
        }
        let d0 = self.ell.normalized(&self.center);
        let dh = &self.ell.left * &h * &self.ell.right;
        let inside = |s: f64| Ellipsoid::level(&(&d0 + &dh * s)) <= 1.0;
        let mut hi = 1.0 / linalg::sigma_max(&dh).max(1e-300);
        while inside(hi) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        let frac = if boundary_bias && rng.gen_bool(0.5) { 1.0 } else { rng.gen::<f64>() };
        w += h * (lo * frac);
        w
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, boundary_bias: bool) -> Result<ConsistentModel> {
        let w = self.sample_disturbance(rng, boundary_bias);
        Ok(self.reconstruct(w, rng))
    }

    fn reconstruct<R: Rng>(&self, w: Mat, rng: &mut R) -> ConsistentModel {
        let n = self.dm.n();
        let mut ab = (&self.dm.x_plus - &self.b_w * &w) * &self.stacked_pinv;
        if self.left_kernel.ncols() > 0 {
            let xi = Mat::from_fn(n, self.left_kernel.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            ab += xi * self.left_kernel.transpose();
        }
        let a = ab.columns(0, n).into_owned();
        let b = ab.columns(n, self.dm.m()).into_owned();
        ConsistentModel { a, b, w }
    }
}

/// Least-squares model for a given disturbance, `[A B] = (X+ - B_w W) [X; U]^+`.
pub fn reconstruct_model(dm: &DataMatrices, b_w: &Mat, w: &Mat) -> ConsistentModel {
    let n = dm.n();
    let ab = (&dm.x_plus - b_w * w) * linalg::pinv(&dm.stacked(), DATA_RANK_TOL);
    ConsistentModel { a: ab.columns(0, n).into_owned(), b: ab.columns(n, dm.m()).into_owned(), w: w.clone() }
}

/// Witness disturbance for membership of `A_cand` in the exact closed-loop
/// set of `G`, or `None` when there is none.
pub fn closed_loop_witness(
    a_cand: &Mat,
    g: &Mat,
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    opts: &SolverOptions,
) -> Result<Option<Mat>> {
    let (n, horizon, m_w) = (dm.n(), dm.horizon(), set.m_w());
    if a_cand.shape() != (n, n) || g.shape() != (horizon, n) || b_w.shape() != (n, m_w) {
        return Err(Error::Dimension("candidate, G or B_w has the wrong shape".into()));
    }
    if set.horizon() != horizon {
        return Err(Error::Dimension("disturbance set horizon differs from data length".into()));
    }
    if !set.has_negative_definite_q() {
        return Err(Error::UnsupportedModel("membership test needs Q_w negative definite".into()));
    }
    let kernel = dm.kernel();
    let mut p = SdpProblem::new();
    let w = p.rect("W", m_w, horizon);
    let mut e1 = EqBuilder::new(n, n);
    e1.term(b_w, w, g).constant(&(a_cand - &dm.x_plus * g));
    p.add_equalities(e1.build("closed-loop")?)?;
    if kernel.ncols() > 0 {
        let mut e2 = EqBuilder::new(n, kernel.ncols());
        e2.term(b_w, w, &kernel).constant(&-(&dm.x_plus * &kernel));
        p.add_equalities(e2.build("kernel")?)?;
    }
    // -[[R_w + S_w'W + W'S_w, W'], [W, -Q_w^-1]] <= 0
    let q_inv = linalg::spd_inverse(&-set.q_w())?;
    let (i_h, i_m) = (Mat::identity(horizon, horizon), Mat::identity(m_w, m_w));
    let mut b = LmiBuilder::new(&[horizon, m_w]);
    b.constant(0, 0, &-set.r_w())
        .term_t(0, 0, &i_h, w, &-set.s_w())
        .term(0, 0, &-set.s_w().transpose(), w, &i_h)
        .term(1, 0, &-&i_m, w, &i_h)
        .constant(1, 1, &-q_inv);
    p.add_lmi(b.build("qmi", Strictness::NonStrict)?)?;
    let out = sdp::solve(&p, opts)?;
    match out.status {
        SdpStatus::Feasible => {
            let wv = out.value(&w).expect("feasible outcome carries values");
            Ok(Some(wv))
        }
        SdpStatus::Infeasible => Ok(None),
        SdpStatus::Inconclusive => Err(Error::Inconclusive(format!(
            "membership problem undecided: {}",
            out.diagnostics.message
        ))),
    }
}

/// Solver settings for the membership problem: a non-strict QMI with the
/// equalities held to 1e-7.
pub fn membership_solver_options() -> SolverOptions {
    SolverOptions { eps_strict: 0.0, nonstrict_slack: 1e-9, eq_tol: 1e-7, ..SolverOptions::default() }
}

/// Whether `A_cand = (X+ - B_w W) G` for some admissible `W` that also
/// reproduces the data along the kernel of `[X; U]`.
pub fn exact_closed_loop_membership(
    a_cand: &Mat,
    g: &Mat,
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    opts: &SolverOptions,
) -> Result<bool> {
    let witness = closed_loop_witness(a_cand, g, dm, b_w, set, opts)?;
    let Some(w) = witness else { return Ok(false) };
    // Independent check of the witness. The QMI is checked with a loose
    // relative tolerance since non-strict solutions sit on the boundary.
    let resid = (&dm.x_plus * g - b_w * &w * g - a_cand).amax();
    let scale = 1.0 + a_cand.amax() + (&dm.x_plus * g).amax();
    let kernel = dm.kernel();
    let kresid = if kernel.ncols() > 0 { ((&dm.x_plus - b_w * &w) * &kernel).amax() } else { 0.0 };
    let ok = resid <= 1e-6 * scale && kresid <= 1e-6 * (1.0 + dm.x_plus.amax()) && noise::membership(&w, set, 1e-6)?;
    if !ok {
        return Err(Error::Inconclusive(format!(
            "membership witness failed re-substitution (residuals {resid:.2e}, {kresid:.2e})"
        )));
    }
    Ok(true)
}

/// Random admissible `W` for which some consistent model realizes a closed
/// loop. Used to sample members of the exact closed-loop set.
pub fn sample_section_disturbances(
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    count: usize,
    seed: u64,
) -> Result<Vec<Mat>> {
    let sampler = ConsistentSampler::new(dm, b_w, set, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sampler.sample_disturbance(&mut rng, true)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{generate_experiment, ExperimentSpec, LtiSystem};

    fn benchmark_data(w_bar: f64, horizon: usize, seed: u64) -> (LtiSystem, DataMatrices, DisturbanceSet) {
        let sys = LtiSystem::benchmark();
        let rec = generate_experiment(&sys, &ExperimentSpec::new(horizon, 1.0, 2, w_bar), seed).unwrap();
        let dm = DataMatrices::build(&rec).unwrap();
        let set = DisturbanceSet::from_sigma_bound(w_bar.max(1e-9), 3, horizon).unwrap();
        (sys, dm, set)
    }

    #[test]
    fn build_shapes_and_overlap() {
        let (_, dm, _) = benchmark_data(0.02, 7, 1);
        assert_eq!((dm.n(), dm.m(), dm.horizon()), (3, 2, 7));
        assert_eq!(dm.x_plus.shape(), (3, 7));
        assert!(dm.overlap_holds());
        assert!(is_persistently_exciting(&dm, DATA_RANK_TOL));
        assert_eq!(dm.kernel().ncols(), 2);
    }

    #[test]
    fn pseudo_inverse_projector_matches_kernel() {
        // A data set on which nalgebra's own SVD loses two digits.
        let (_, dm, _) = benchmark_data(0.013, 13, 972);
        let s = dm.stacked();
        let k = dm.kernel();
        let proj = Mat::identity(13, 13) - linalg::pinv(&s, DATA_RANK_TOL) * &s;
        assert!((proj - &k * k.transpose()).amax() < 1e-10);
    }

    #[test]
    fn from_matrices_checks_shapes() {
        let x = Mat::zeros(2, 4);
        assert!(DataMatrices::from_matrices(x.clone(), Mat::zeros(2, 3), Mat::zeros(1, 4)).is_err());
        assert!(DataMatrices::from_matrices(x.clone(), x.clone(), Mat::zeros(1, 3)).is_err());
        assert!(DataMatrices::from_matrices(Mat::zeros(2, 0), Mat::zeros(2, 0), Mat::zeros(1, 0)).is_err());
    }

    #[test]
    fn short_data_are_not_persistently_exciting() {
        let (_, dm, set) = benchmark_data(0.02, 4, 2);
        assert!(!is_persistently_exciting(&dm, DATA_RANK_TOL));
        assert!(matches!(
            ConsistentSampler::new(&dm, &Mat::identity(3, 3), &set, false),
            Err(Error::RankDeficient { rank: 4, required: 5 })
        ));
        assert!(ConsistentSampler::new(&dm, &Mat::identity(3, 3), &set, true).is_ok());
    }

    #[test]
    fn true_disturbance_reconstructs_true_plant() {
        let sys = LtiSystem::benchmark();
        let rec = generate_experiment(&sys, &ExperimentSpec::new(12, 1.0, 2, 0.05), 3).unwrap();
        let dm = DataMatrices::build(&rec).unwrap();
        let w = columns(rec.true_disturbance.as_ref().unwrap(), 3);
        let model = reconstruct_model(&dm, &sys.b_w, &w);
        assert!((&model.a - &sys.a).amax() < 1e-9);
        assert!((&model.b - &sys.b).amax() < 1e-9);
        assert!(model.residual(&dm, &sys.b_w) < 1e-9);
    }

    #[test]
    fn samples_reproduce_the_data_and_stay_admissible() {
        let (_, dm, set) = benchmark_data(0.05, 10, 4);
        let models = sample_consistent_systems_with(
            &dm,
            &Mat::identity(3, 3),
            &set,
            40,
            9,
            &SampleOptions { boundary_bias: true, allow_rank_deficient: false },
        )
        .unwrap();
        for m in &models {
            assert!(m.residual(&dm, &Mat::identity(3, 3)) < 1e-9);
            assert!(noise::membership(&m.w, &set, 1e-9).unwrap());
        }
        let on_boundary = models.iter().filter(|m| linalg::sigma_max(&m.w) > 0.05 * (1.0 - 1e-8)).count();
        assert!(on_boundary > 5, "{on_boundary} boundary samples");
    }

    #[test]
    fn sampling_is_seeded() {
        let (_, dm, set) = benchmark_data(0.02, 8, 5);
        let a = sample_consistent_systems(&dm, &Mat::identity(3, 3), &set, 3, 17).unwrap();
        let b = sample_consistent_systems(&dm, &Mat::identity(3, 3), &set, 3, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn section_without_admissible_point_is_infeasible() {
        // A noise-free trajectory of an unrelated plant cannot be explained
        // by a tiny disturbance when the data are not square-consistent.
        let x = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let x_plus = Mat::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let u = Mat::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        let dm = DataMatrices::from_matrices(x, x_plus, u).unwrap();
        let set = DisturbanceSet::from_sigma_bound(0.1, 1, 3).unwrap();
        let r = ConsistentSampler::new(&dm, &Mat::identity(1, 1), &set, true);
        assert!(matches!(r, Err(Error::Infeasible(_))), "{:?}", r.err());
    }

    #[test]
    fn willems_check_needs_enough_samples() {
        let seq: Vec<Vector> = (0..4).map(|k| Vector::from_element(1, k as f64)).collect();
        assert!(matches!(willems_sufficient_check(&seq, &seq, 2), Err(Error::InsufficientData(_))));
        assert!(willems_sufficient_check(&seq[..3], &seq, 1).is_err());
    }

    #[test]
    fn membership_accepts_true_loop_and_rejects_a_far_one() {
        let (sys, dm, set) = benchmark_data(0.02, 15, 6);
        let k = Mat::from_row_slice(2, 3, &[-2.5, -1.3, -2.4, -0.6, 0.0, -2.2]);
        let target = linalg::vstack(&[&Mat::identity(3, 3), &k]).unwrap();
        let g = linalg::pinv(&dm.stacked(), DATA_RANK_TOL) * target;
        let a_true = &sys.a + &sys.b * &k;
        let opts = membership_solver_options();
        assert!(exact_closed_loop_membership(&a_true, &g, &dm, &sys.b_w, &set, &opts).unwrap());
        let far = &a_true + Mat::identity(3, 3);
        assert!(!exact_closed_loop_membership(&far, &g, &dm, &sys.b_w, &set, &opts).unwrap());
    }
}
