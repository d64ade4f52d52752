//! Controller synthesis from data: robust stabilization, robust quadratic
//! performance with a line search over the multiplier, H-infinity
//! optimization by bisection, and the mixed model/data design.
//!
//! Every feasible solver outcome is re-checked here by assembling the LMI
//! densely from the returned `(Y, M)` before a gain is handed out.

use crate::datamat::DataMatrices;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::noise::DisturbanceSet;
use crate::sdp::schur::{self, KnownPlant, MixedParts, PerfVars};
use crate::sdp::{self, EqBuilder, SdpDiagnostics, SdpProblem, SdpStatus, SolverOptions};

/// Quadratic performance index `(Q, S, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceIndex {
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
}

impl PerformanceIndex {
    pub fn new(q: Mat, s: Mat, r: Mat) -> Result<Self> {
        let (m_w, p_z) = (q.nrows(), r.nrows());
        if q.ncols() != m_w || r.ncols() != p_z || s.shape() != (m_w, p_z) {
            return Err(Error::Dimension("performance index blocks are inconsistent".into()));
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        if p_z > 0 && linalg::min_sym_eigenvalue(&r) < -1e-12 {
            return Err(Error::InvalidArgument("R must be positive semidefinite".into()));
        }
        Ok(Self { q, s, r })
    }

    /// `Q = -gamma^2 I`, `S = 0`, `R = I`.
    pub fn hinf(gamma: f64, m_w: usize, p_z: usize) -> Self {
        Self {
            q: -Mat::identity(m_w, m_w) * (gamma * gamma),
            s: Mat::zeros(m_w, p_z),
            r: Mat::identity(p_z, p_z),
        }
    }

    /// `gamma` when the index is the H-infinity one.
    pub fn hinf_level(&self) -> Option<f64> {
        let (m_w, p_z) = (self.q.nrows(), self.r.nrows());
        let g2 = -self.q.get((0, 0)).copied()?;
        let is_hinf = (&self.q + Mat::identity(m_w, m_w) * g2).amax() == 0.0
            && self.s.amax() == 0.0
            && (&self.r - Mat::identity(p_z, p_z)).amax() == 0.0
            && g2 > 0.0;
        is_hinf.then(|| g2.sqrt())
    }
}

/// Plant matrices that are known: `B_w`, `C`, `D_w`, `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownMatrices {
    pub b_w: Mat,
    pub c: Mat,
    pub d_w: Mat,
    pub d: Mat,
}

impl KnownMatrices {
    pub fn new(b_w: Mat, c: Mat, d_w: Mat, d: Mat) -> Result<Self> {
        let (n, m_w, p_z) = (b_w.nrows(), b_w.ncols(), c.nrows());
        if c.ncols() != n || d_w.shape() != (p_z, m_w) || d.nrows() != p_z {
            return Err(Error::Dimension("B_w, C, D_w, D are inconsistent".into()));
        }
        Ok(Self { b_w, c, d_w, d })
    }

    pub fn of(sys: &crate::lti::LtiSystem) -> Self {
        Self { b_w: sys.b_w.clone(), c: sys.c.clone(), d_w: sys.d_w.clone(), d: sys.d.clone() }
    }

    fn as_plant(&self) -> KnownPlant<'_> {
        KnownPlant { b_w: &self.b_w, c: &self.c, d_w: &self.d_w, d: &self.d }
    }
}

/// Logarithmic multiplier grid, tried from the middle outwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub min_exp: f64,
    pub max_exp: f64,
    pub points: usize,
    /// Golden-section refinement of `log10 lambda` around the first
    /// feasible point, maximizing the certified margin.
    pub refine: bool,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self { min_exp: -6.0, max_exp: 6.0, points: 25, refine: false }
    }
}

impl LambdaGrid {
    /// Grid values ordered by distance from the middle exponent, the
    /// larger one first on ties.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 0 {
            return Vec::new();
        }
        if self.points == 1 {
            return vec![10f64.powf(0.5 * (self.min_exp + self.max_exp))];
        }
        let step = (self.max_exp - self.min_exp) / (self.points - 1) as f64;
        let exps: Vec<f64> = (0..self.points).map(|i| self.min_exp + step * i as f64).collect();
        let mid = 0.5 * (self.min_exp + self.max_exp);
        let mut idx: Vec<usize> = (0..self.points).collect();
        idx.sort_by(|&a, &b| {
            let (da, db) = ((exps[a] - mid).abs(), (exps[b] - mid).abs());
            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
        });
        idx.into_iter().map(|i| 10f64.powf(exps[i])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub solver: SolverOptions,
    pub lambda_grid: LambdaGrid,
    /// Relative tolerance of the gamma bisection.
    pub gamma_tol: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), lambda_grid: LambdaGrid::default(), gamma_tol: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthDiagnostics {
    pub solver: SdpDiagnostics,
    /// Largest equilibrated eigenvalue of the densely re-assembled LMI.
    pub certificate_margin: f64,
    /// `max |X M - Y| / (1 + max |Y|)`.
    pub equality_residual: f64,
    /// Solves performed (multiplier and bisection steps included).
    pub solves: usize,
    pub lambdas_tried: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub k: Mat,
    pub y: Mat,
    pub m: Mat,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub diagnostics: SynthDiagnostics,
}

fn check_data(dm: &DataMatrices, b_w: &Mat, set: &DisturbanceSet) -> Result<()> {
    if b_w.shape() != (dm.n(), set.m_w()) {
        return Err(Error::Dimension(format!("B_w is {:?}, expected {}x{}", b_w.shape(), dm.n(), set.m_w())));
    }
    if set.horizon() != dm.horizon() {
        return Err(Error::Dimension(format!(
            "disturbance set horizon {} differs from data length {}",
            set.horizon(),
            dm.horizon()
        )));
    }
    Ok(())
}

/// Dense symmetric matrix from lower-triangle blocks.
fn assemble(sizes: &[usize], blocks: &[(usize, usize, Mat)]) -> Mat {
    let mut offsets = vec![0; sizes.len()];
    for i in 1..sizes.len() {
        offsets[i] = offsets[i - 1] + sizes[i - 1];
    }
    let total: usize = sizes.iter().sum();
    let mut f = Mat::zeros(total, total);
    for (i, j, b) in blocks {
        debug_assert_eq!(b.shape(), (sizes[*i], sizes[*j]));
        f.view_mut((offsets[*i], offsets[*j]), b.shape()).add_assign(b);
        if i != j {
            f.view_mut((offsets[*j], offsets[*i]), (b.ncols(), b.nrows())).add_assign(&b.transpose());
        }
    }
    f
}

trait AddAssignView {
    fn add_assign(&mut self, b: &Mat);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, b: &Mat) {
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                self[(r, c)] += b[(r, c)];
            }
        }
    }
}

/// The stabilization LMI evaluated at `(Y, M)`.
pub fn stabilization_matrix(y: &Mat, m: &Mat, x_plus: &Mat, b_w: &Mat, set: &DisturbanceSet) -> Result<Mat> {
    let (n, horizon, m_w) = (y.nrows(), m.nrows(), set.m_w());
    let r_inv = linalg::spd_inverse(set.r_w())?;
    Ok(assemble(
        &[n, m_w, n, horizon],
        &[
            (0, 0, -y),
            (1, 0, -(set.s_w() * m)),
            (1, 1, set.q_w().clone()),
            (2, 0, x_plus * m),
            (2, 1, b_w.clone()),
            (2, 2, -y),
            (3, 0, m.clone()),
            (3, 3, -r_inv),
        ],
    ))
}

/// Numeric values of the mixed performance LMI variables.
#[derive(Debug, Clone, Copy)]
pub struct PerfValues<'a> {
    pub y1: &'a Mat,
    pub m1: &'a Mat,
    pub y2: &'a Mat,
    pub m2: &'a Mat,
}

/// The quadratic-performance LMI evaluated at given variables, written out
/// block by block (independent of the sparse builder).
pub fn mixed_performance_matrix(
    parts: &MixedParts,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
    v: PerfValues,
) -> Result<Mat> {
    let (n, nt, m_w, horizon) = (v.y1.nrows(), v.y2.nrows(), set.m_w(), v.m1.nrows());
    let p_z = perf.r.nrows();
    // R = L L' when singular
    let (zdiag, zmap) = if p_z == 0 {
        (Mat::zeros(0, 0), Mat::zeros(0, 0))
    } else if linalg::min_sym_eigenvalue(&perf.r) > 1e-12 * linalg::max_sym_eigenvalue(&perf.r).max(1.0) {
        (-linalg::spd_inverse(&perf.r)?, Mat::identity(p_z, p_z))
    } else {
        let eig = linalg::sym(&perf.r).symmetric_eigen();
        let keep: Vec<usize> = (0..p_z).filter(|&i| eig.eigenvalues[i] > 1e-12).collect();
        let mut l = Mat::zeros(p_z, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            l.set_column(k, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
        }
        (-Mat::identity(keep.len(), keep.len()), l.transpose())
    };
    let pe = zdiag.nrows();
    let t = parts.d_w.transpose() * &perf.r + &perf.s;
    let sd = &perf.s * parts.d_w;
    let wdiag = &perf.q + &sd + sd.transpose() + parts.d_w.transpose() * &perf.r * parts.d_w;
    let du = parts.d * parts.u;
    let x_eff = parts.x_plus - parts.a2 * parts.x_tilde;
    let b2u = parts.b2 * parts.u;
    let cy1 = parts.c1 * v.y1 + &du * v.m1;
    let cy2 = parts.c2 * v.y2 + &du * v.m2;
    let rl_inv = linalg::spd_inverse(&(set.r_w() * lambda))?;
    let sizes = [n, nt, m_w, m_w, n, nt, pe, horizon];
    let blocks = vec![
        (0, 0, -v.y1),
        (1, 1, -v.y2),
        (2, 0, &t * &cy1),
        (2, 1, &t * &cy2),
        (2, 2, wdiag),
        (3, 0, -(set.s_w() * v.m1) * lambda),
        (3, 1, -(set.s_w() * v.m2) * lambda),
        (3, 3, set.q_w() * lambda),
        (4, 0, &x_eff * v.m1),
        (4, 1, parts.a2 * v.y2 + &x_eff * v.m2),
        (4, 2, parts.b_w1.clone()),
        (4, 3, parts.b_w1.clone()),
        (4, 4, -v.y1),
        (5, 0, parts.a3 * v.y1 + &b2u * v.m1),
        (5, 1, parts.a4 * v.y2 + &b2u * v.m2),
        (5, 2, parts.b_w2.clone()),
        (5, 5, -v.y2),
        (6, 0, &zmap * &cy1),
        (6, 1, &zmap * &cy2),
        (6, 6, zdiag),
        (7, 0, v.m1.clone()),
        (7, 1, v.m2.clone()),
        (7, 7, -rl_inv),
    ];
    Ok(assemble(&sizes, &blocks))
}

/// Equilibrated largest eigenvalue of `f`, scaled by the diagonal of its
/// variable-free part `f0`.
fn certified_margin(f: &Mat, f0: &Mat) -> f64 {
    sdp::equilibrated_max_eigenvalue(f, f0)
}

fn equality_residual(x: &Mat, m: &Mat, y: &Mat) -> f64 {
    (x * m - y).amax() / (1.0 + y.amax())
}

fn outcome_error(status: SdpStatus, diag: &SdpDiagnostics, what: &str) -> Error {
    match status {
        SdpStatus::Infeasible => Error::Infeasible(format!("{what}: {}", diag.message)),
        _ => Error::Inconclusive(format!("{what}: {}", diag.message)),
    }
}

/// Accept `(Y, M)` only if the dense LMI and the equality pass the
/// independent check.
fn certify(
    f: &Mat,
    f0: &Mat,
    x: &Mat,
    m: &Mat,
    y: &Mat,
    opts: &SolverOptions,
    diag: &mut SynthDiagnostics,
) -> Result<()> {
    diag.certificate_margin = certified_margin(f, f0);
    diag.equality_residual = equality_residual(x, m, y);
    if diag.certificate_margin > -0.5 * opts.eps_strict || diag.equality_residual > 1e-6 {
        return Err(Error::Inconclusive(format!(
            "solver point failed re-substitution (margin {:.3e}, equality residual {:.3e})",
            diag.certificate_margin, diag.equality_residual
        )));
    }
    Ok(())
}

fn gain(u: &Mat, m: &Mat, y: &Mat) -> Result<Mat> {
    Ok(u * m * linalg::spd_inverse(y)?)
}

/// Robust stabilization of all systems consistent with the data.
pub fn stabilize(dm: &DataMatrices, b_w: &Mat, set: &DisturbanceSet, opts: &SynthOptions) -> Result<SynthesisResult> {
    check_data(dm, b_w, set)?;
    let (n, horizon) = (dm.n(), dm.horizon());
    let mut p = SdpProblem::new();
    let y = p.symmetric("Y", n);
    let m = p.rect("M", horizon, n);
    p.add_lmi(schur::stabilization_lmi(y, m, &dm.x_plus, b_w, set)?)?;
    let mut eq = EqBuilder::new(n, n);
    eq.term(&dm.x, m, &Mat::identity(n, n)).term(&-Mat::identity(n, n), y, &Mat::identity(n, n));
    p.add_equalities(eq.build("XM=Y")?)?;
    let out = sdp::solve(&p, &opts.solver)?;
    let mut diag = SynthDiagnostics { solver: out.diagnostics.clone(), solves: 1, ..Default::default() };
    if out.status != SdpStatus::Feasible {
        return Err(outcome_error(out.status, &out.diagnostics, "stabilization"));
    }
    let (yv, mv) = (out.value(&y).expect("values"), out.value(&m).expect("values"));
    let f = stabilization_matrix(&yv, &mv, &dm.x_plus, b_w, set)?;
    let f0 = stabilization_matrix(&Mat::zeros(n, n), &Mat::zeros(horizon, n), &dm.x_plus, b_w, set)?;
    certify(&f, &f0, &dm.x, &mv, &yv, &opts.solver, &mut diag)?;
    let k = gain(&dm.u, &mv, &yv)?;
    Ok(SynthesisResult { k, y: yv, m: mv, lambda: None, gamma: None, diagnostics: diag })
}

fn empty_parts<'a>(dm: &'a DataMatrices, plant: &'a KnownMatrices, scratch: &'a [Mat; 7]) -> MixedParts<'a> {
    MixedParts {
        x_plus: &dm.x_plus,
        u: &dm.u,
        x_tilde: &scratch[0],
        a2: &scratch[1],
        a3: &scratch[2],
        a4: &scratch[3],
        b2: &scratch[4],
        b_w1: &plant.b_w,
        b_w2: &scratch[5],
        c1: &plant.c,
        c2: &scratch[6],
        d_w: &plant.d_w,
        d: &plant.d,
    }
}

fn empty_scratch(dm: &DataMatrices, plant: &KnownMatrices) -> [Mat; 7] {
    let (n, m, m_w, p_z, h) = (dm.n(), dm.m(), plant.b_w.ncols(), plant.c.nrows(), dm.horizon());
    [
        Mat::zeros(0, h),
        Mat::zeros(n, 0),
        Mat::zeros(0, n),
        Mat::zeros(0, 0),
        Mat::zeros(0, m),
        Mat::zeros(0, m_w),
        Mat::zeros(p_z, 0),
    ]
}

/// Robust quadratic performance at a fixed multiplier.
pub fn quad_perf_synthesis(
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    check_data(dm, &plant.b_w, set)?;
    if plant.d.ncols() != dm.m() {
        return Err(Error::Dimension("D has the wrong number of columns".into()));
    }
    let (n, horizon) = (dm.n(), dm.horizon());
    let mut p = SdpProblem::new();
    let y = p.symmetric("Y", n);
    let m = p.rect("M", horizon, n);
    p.add_lmi(schur::performance_lmi(&dm.x_plus, &dm.u, &plant.as_plant(), set, perf, lambda, y, m)?)?;
    let mut eq = EqBuilder::new(n, n);
    eq.term(&dm.x, m, &Mat::identity(n, n)).term(&-Mat::identity(n, n), y, &Mat::identity(n, n));
    p.add_equalities(eq.build("XM=Y")?)?;
    let out = sdp::solve(&p, &opts.solver)?;
    let mut diag = SynthDiagnostics {
        solver: out.diagnostics.clone(),
        solves: 1,
        lambdas_tried: vec![lambda],
        ..Default::default()
    };
    if out.status != SdpStatus::Feasible {
        return Err(outcome_error(out.status, &out.diagnostics, "quadratic performance"));
    }
    let (yv, mv) = (out.value(&y).expect("values"), out.value(&m).expect("values"));
    let scratch = empty_scratch(dm, plant);
    let parts = empty_parts(dm, plant, &scratch);
    let z0 = Mat::zeros(0, 0);
    let z2 = Mat::zeros(horizon, 0);
    let f = mixed_performance_matrix(&parts, set, perf, lambda, PerfValues { y1: &yv, m1: &mv, y2: &z0, m2: &z2 })?;
    let (zy, zm) = (Mat::zeros(n, n), Mat::zeros(horizon, n));
    let f0 = mixed_performance_matrix(&parts, set, perf, lambda, PerfValues { y1: &zy, m1: &zm, y2: &z0, m2: &z2 })?;
    certify(&f, &f0, &dm.x, &mv, &yv, &opts.solver, &mut diag)?;
    let k = gain(&dm.u, &mv, &yv)?;
    Ok(SynthesisResult { k, y: yv, m: mv, lambda: Some(lambda), gamma: perf.hinf_level(), diagnostics: diag })
}

/// Golden-section search of a unimodal score over `[a, b]`; returns the
/// best evaluated point.
fn golden_max(mut a: f64, mut b: f64, iters: usize, mut score: impl FnMut(f64) -> f64) -> (f64, f64) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = score(d);
        }
        for (x, f) in [(c, fc), (d, fd)] {
            if f > best.1 {
                best = (x, f);
            }
        }
    }
    best
}

/// Try the multiplier grid until a solve succeeds.
///
/// Design infeasibility is reported only when every grid point is
/// infeasible; any undecided point makes the overall verdict inconclusive.
pub fn lambda_search<F>(mut solve_at: F, grid: &LambdaGrid) -> Result<SynthesisResult>
where
    F: FnMut(f64) -> Result<SynthesisResult>,
{
    let values = grid.values();
    if values.is_empty() {
        return Err(Error::InvalidArgument("multiplier grid is empty".into()));
    }
    let mut tried = Vec::new();
    let mut undecided = None;
    for lambda in values {
        tried.push(lambda);
        match solve_at(lambda) {
            Ok(mut res) => {
                if grid.refine {
                    let step = (grid.max_exp - grid.min_exp) / (grid.points.max(2) - 1) as f64;
                    let center = lambda.log10();
                    let mut best_res = None;
                    let (_, best_score) = golden_max(center - step, center + step, 8, |e| {
                        let l = 10f64.powf(e);
                        tried.push(l);
                        match solve_at(l) {
                            Ok(r) => {
                                let s = -r.diagnostics.certificate_margin;
                                if best_res.as_ref().is_none_or(|(bs, _)| s > *bs) {
                                    best_res = Some((s, r));
                                }
                                s
                            }
                            Err(_) => f64::NEG_INFINITY,
                        }
                    });
                    if let Some((s, r)) = best_res {
                        if s >= best_score && s > -res.diagnostics.certificate_margin {
                            res = r;
                        }
                    }
                }
                res.diagnostics.solves = tried.len();
                res.diagnostics.lambdas_tried = tried;
                return Ok(res);
            }
            Err(Error::Infeasible(_)) => {}
            Err(e @ Error::Inconclusive(_)) => {
                undecided.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match undecided {
        Some(Error::Inconclusive(msg)) => {
            Err(Error::Inconclusive(format!("no multiplier succeeded on {} grid points; last undecided: {msg}", tried.len())))
        }
        _ => Err(Error::Infeasible(format!("infeasible at all {} multiplier grid points", tried.len()))),
    }
}

/// Quadratic-performance design with the multiplier line search.
pub fn quad_perf_design(
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    lambda_search(|l| quad_perf_synthesis(dm, plant, set, perf, l, opts), &opts.lambda_grid)
}

/// Smallest certified H-infinity level by bisection on `gamma`.
///
/// `bracket = (lo, hi)`; `hi` is enlarged by factors of 4 (at most ten
/// times) until feasible. A feasible `lo` is returned directly.
pub fn hinf_optimize(
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    bracket: (f64, f64),
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid gamma bracket ({lo}, {hi})")));
    }
    let (m_w, p_z) = (plant.b_w.ncols(), plant.c.nrows());
    let mut solves = 0;
    let attempt = |gamma: f64, solves: &mut usize| {
        let perf = PerformanceIndex::hinf(gamma, m_w, p_z);
        let r = quad_perf_design(dm, plant, set, &perf, opts);
        *solves += match &r {
            Ok(res) => res.diagnostics.solves,
            Err(_) => opts.lambda_grid.points,
        };
        r
    };
    let mut best = None;
    let mut undecided = None;
    for expansion in 0..=10 {
        match attempt(hi, &mut solves) {
            Ok(res) => {
                best = Some(res);
                break;
            }
            Err(e @ (Error::Infeasible(_) | Error::Inconclusive(_))) => {
                if e.is_inconclusive() {
                    undecided = Some(e);
                }
                if expansion == 10 {
                    break;
                }
                lo = hi;
                hi *= 4.0;
            }
            Err(e) => return Err(e),
        }
    }
    let Some(mut best) = best else {
        return Err(match undecided {
            Some(e) => e,
            None => Error::Infeasible(format!("no certified H-infinity level up to {hi}")),
        });
    };
    if lo > 0.0 {
        if let Ok(res) = attempt(lo, &mut solves) {
            best = res;
            hi = lo;
        }
    }
    while hi - lo > opts.gamma_tol * hi {
        let mid = 0.5 * (lo + hi);
        match attempt(mid, &mut solves) {
            Ok(res) => {
                best = res;
                hi = mid;
            }
            Err(Error::Infeasible(_) | Error::Inconclusive(_)) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    best.gamma = Some(hi);
    best.diagnostics.solves = solves;
    Ok(best)
}

/// Plant with an unknown data-driven part `(A1, B1)` and known remaining
/// blocks; `u = K1 x + K2 x~`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSystem {
    pub a2: Mat,
    pub a3: Mat,
    pub a4: Mat,
    pub b2: Mat,
    pub b_w1: Mat,
    pub b_w2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d_w: Mat,
    pub d: Mat,
    pub data: DataMatrices,
    /// Measured known-part states `x~_0 .. x~_{N-1}`.
    pub x_tilde: Mat,
}

impl MixedSystem {
    pub fn n(&self) -> usize {
        self.data.n()
    }
    pub fn n_tilde(&self) -> usize {
        self.a4.nrows()
    }

    pub fn parts(&self) -> MixedParts<'_> {
        MixedParts {
            x_plus: &self.data.x_plus,
            u: &self.data.u,
            x_tilde: &self.x_tilde,
            a2: &self.a2,
            a3: &self.a3,
            a4: &self.a4,
            b2: &self.b2,
            b_w1: &self.b_w1,
            b_w2: &self.b_w2,
            c1: &self.c1,
            c2: &self.c2,
            d_w: &self.d_w,
            d: &self.d,
        }
    }

    pub fn validate(&self, set: &DisturbanceSet, perf: &PerformanceIndex) -> Result<()> {
        let (n, nt, m, m_w, p_z, h) = (
            self.n(),
            self.n_tilde(),
            self.data.m(),
            self.b_w1.ncols(),
            self.c1.nrows(),
            self.data.horizon(),
        );
        let shapes = [
            ("A2", &self.a2, (n, nt)),
            ("A3", &self.a3, (nt, n)),
            ("A4", &self.a4, (nt, nt)),
            ("B2", &self.b2, (nt, m)),
            ("B_w1", &self.b_w1, (n, m_w)),
            ("B_w2", &self.b_w2, (nt, m_w)),
            ("C1", &self.c1, (p_z, n)),
            ("C2", &self.c2, (p_z, nt)),
            ("D_w", &self.d_w, (p_z, m_w)),
            ("D", &self.d, (p_z, m)),
            ("X~", &self.x_tilde, (nt, h)),
        ];
        for (name, mat, shape) in shapes {
            if mat.shape() != shape {
                return Err(Error::Dimension(format!("{name} is {:?}, expected {:?}", mat.shape(), shape)));
            }
        }
        if set.m_w() != m_w || set.horizon() != h {
            return Err(Error::Dimension("disturbance set does not match the mixed system".into()));
        }
        if perf.q.nrows() != m_w || perf.r.nrows() != p_z {
            return Err(Error::Dimension("performance index does not match the mixed system".into()));
        }
        Ok(())
    }
}

/// Blocks of the closed-loop LFT for given `(G1, G2)`: state matrix
/// `[x+; x~+] = A [x; x~] + B_w w + B_wt w~`, `z = C [x; x~] + D_w w`,
/// `z~ = C_t [x; x~]`, `w~ = W z~`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedLft {
    pub a: Mat,
    pub b_w: Mat,
    pub b_wt: Mat,
    pub c: Mat,
    pub d_w: Mat,
    pub c_t: Mat,
}

pub fn mixed_lft_assemble(ms: &MixedSystem, g1: &Mat, g2: &Mat) -> Result<MixedLft> {
    let (n, nt, h) = (ms.n(), ms.n_tilde(), ms.data.horizon());
    if g1.shape() != (h, n) || g2.shape() != (h, nt) {
        return Err(Error::Dimension("G1 or G2 has the wrong shape".into()));
    }
    let e1 = (&ms.data.x * g1 - Mat::identity(n, n)).amax();
    let e2 = (&ms.data.x * g2).amax();
    if e1 > 1e-8 || e2 > 1e-8 {
        return Err(Error::InvalidArgument(format!("X G1 = I, X G2 = 0 violated ({e1:.2e}, {e2:.2e})")));
    }
    let x_eff = &ms.data.x_plus - &ms.a2 * &ms.x_tilde;
    let (k1, k2) = (&ms.data.u * g1, &ms.data.u * g2);
    let top = linalg::hstack(&[&(&x_eff * g1), &(&ms.a2 + &x_eff * g2)])?;
    let bottom = linalg::hstack(&[&(&ms.a3 + &ms.b2 * &k1), &(&ms.a4 + &ms.b2 * &k2)])?;
    let a = linalg::vstack(&[&top, &bottom])?;
    let b_w = linalg::vstack(&[&ms.b_w1, &ms.b_w2])?;
    let b_wt = linalg::vstack(&[&ms.b_w1, &Mat::zeros(nt, ms.b_w1.ncols())])?;
    let c = linalg::hstack(&[&(&ms.c1 + &ms.d * &k1), &(&ms.c2 + &ms.d * &k2)])?;
    let c_t = -linalg::hstack(&[g1, g2])?;
    Ok(MixedLft { a, b_w, b_wt, c, d_w: ms.d_w.clone(), c_t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedResult {
    pub k1: Mat,
    pub k2: Mat,
    pub y1: Mat,
    pub y2: Mat,
    pub m1: Mat,
    pub m2: Mat,
    pub lambda: f64,
    pub diagnostics: SynthDiagnostics,
}

impl MixedResult {
    /// `[K1 K2]`.
    pub fn gain(&self) -> Mat {
        linalg::hstack(&[&self.k1, &self.k2]).expect("gains share the input dimension")
    }
}

/// Mixed design at a fixed multiplier with `Y = diag(Y1, Y2)`,
/// `X M1 = Y1`, `X M2 = 0`.
pub fn mixed_synthesis_at(
    ms: &MixedSystem,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
    opts: &SynthOptions,
) -> Result<MixedResult> {
    ms.validate(set, perf)?;
    let (n, nt, h) = (ms.n(), ms.n_tilde(), ms.data.horizon());
    if h < n + nt {
        return Err(Error::InsufficientData(format!("mixed design needs N >= n + n~ = {}, got {h}", n + nt)));
    }
    let mut p = SdpProblem::new();
    let y1 = p.symmetric("Y1", n);
    let m1 = p.rect("M1", h, n);
    let (y2, m2) = if nt > 0 { (Some(p.symmetric("Y2", nt)), Some(p.rect("M2", h, nt))) } else { (None, None) };
    let parts = ms.parts();
    p.add_lmi(schur::mixed_performance_lmi(&parts, set, perf, lambda, PerfVars { y1, m1, y2, m2 })?)?;
    let mut eq = EqBuilder::new(n, n);
    eq.term(&ms.data.x, m1, &Mat::identity(n, n)).term(&-Mat::identity(n, n), y1, &Mat::identity(n, n));
    p.add_equalities(eq.build("XM1=Y1")?)?;
    if let Some(m2) = m2 {
        let mut eq2 = EqBuilder::new(n, nt);
        eq2.term(&ms.data.x, m2, &Mat::identity(nt, nt));
        p.add_equalities(eq2.build("XM2=0")?)?;
    }
    let out = sdp::solve(&p, &opts.solver)?;
    let mut diag = SynthDiagnostics {
        solver: out.diagnostics.clone(),
        solves: 1,
        lambdas_tried: vec![lambda],
        ..Default::default()
    };
    if out.status != SdpStatus::Feasible {
        return Err(outcome_error(out.status, &out.diagnostics, "mixed design"));
    }
    let y1v = out.value(&y1).expect("values");
    let m1v = out.value(&m1).expect("values");
    let y2v = y2.map_or(Mat::zeros(0, 0), |v| out.value(&v).expect("values"));
    let m2v = m2.map_or(Mat::zeros(h, 0), |v| out.value(&v).expect("values"));
    let f = mixed_performance_matrix(&parts, set, perf, lambda, PerfValues { y1: &y1v, m1: &m1v, y2: &y2v, m2: &m2v })?;
    let zeros = (Mat::zeros(n, n), Mat::zeros(h, n), Mat::zeros(nt, nt), Mat::zeros(h, nt));
    let f0 = mixed_performance_matrix(
        &parts,
        set,
        perf,
        lambda,
        PerfValues { y1: &zeros.0, m1: &zeros.1, y2: &zeros.2, m2: &zeros.3 },
    )?;
    certify(&f, &f0, &ms.data.x, &m1v, &y1v, &opts.solver, &mut diag)?;
    let r2 = (&ms.data.x * &m2v).amax() / (1.0 + y2v.amax());
    diag.equality_residual = diag.equality_residual.max(r2);
    if r2 > 1e-6 {
        return Err(Error::Inconclusive(format!("X M2 = 0 violated by {r2:.2e}")));
    }
    let k1 = gain(&ms.data.u, &m1v, &y1v)?;
    let k2 = if nt > 0 { gain(&ms.data.u, &m2v, &y2v)? } else { Mat::zeros(ms.data.m(), 0) };
    Ok(MixedResult { k1, k2, y1: y1v, y2: y2v, m1: m1v, m2: m2v, lambda, diagnostics: diag })
}

/// Mixed design with the multiplier line search.
pub fn mixed_synthesis(
    ms: &MixedSystem,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    opts: &SynthOptions,
) -> Result<MixedResult> {
    let (n, nt, h) = (ms.n(), ms.n_tilde(), ms.data.horizon());
    if h < n + nt {
        return Err(Error::InsufficientData(format!("mixed design needs N >= n + n~ = {}, got {h}", n + nt)));
    }
    let mut last: Option<MixedResult> = None;
    let res = lambda_search(
        |l| {
            let r = mixed_synthesis_at(ms, set, perf, l, opts)?;
            let summary = SynthesisResult {
                k: r.k1.clone(),
                y: r.y1.clone(),
                m: r.m1.clone(),
                lambda: Some(l),
                gamma: perf.hinf_level(),
                diagnostics: r.diagnostics.clone(),
            };
            last = Some(r);
            Ok(summary)
        },
        &opts.lambda_grid,
    )?;
    let mut out = last.expect("successful search stores its result");
    // with refinement the last stored result may not be the selected one
    if res.lambda != Some(out.lambda) {
        out = mixed_synthesis_at(ms, set, perf, res.lambda.expect("performance path records lambda"), opts)?;
    }
    out.diagnostics.solves = res.diagnostics.solves;
    out.diagnostics.lambdas_tried = res.diagnostics.lambdas_tried;
    Ok(out)
}
