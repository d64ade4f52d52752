//! A-posteriori checks of closed loops: spectral radius, H-infinity norm,
//! quadratic-performance analysis, the model-based baseline, and sampled
//! audits over the systems consistent with the data.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamat::{ConsistentModel, ConsistentSampler, DataMatrices};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::LtiSystem;
use crate::noise::DisturbanceSet;
use crate::sdp::{self, LmiBuilder, SdpDiagnostics, SdpProblem, SdpStatus, SolverOptions, Strictness};
use crate::synth::{KnownMatrices, MixedSystem, PerformanceIndex, SynthesisResult};

/// `x+ = A_cl x + B_w w`, `z = C_cl x + D_w w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_cl: Mat,
    pub b_w: Mat,
    pub c_cl: Mat,
    pub d_w: Mat,
}

impl ClosedLoop {
    pub fn new(a_cl: Mat, b_w: Mat, c_cl: Mat, d_w: Mat) -> Result<Self> {
        let n = a_cl.nrows();
        if a_cl.ncols() != n
            || b_w.nrows() != n
            || c_cl.ncols() != n
            || d_w.shape() != (c_cl.nrows(), b_w.ncols())
        {
            return Err(Error::Dimension(format!(
                "closed loop A {:?}, B_w {:?}, C {:?}, D_w {:?} are inconsistent",
                a_cl.shape(),
                b_w.shape(),
                c_cl.shape(),
                d_w.shape()
            )));
        }
        Ok(Self { a_cl, b_w, c_cl, d_w })
    }

    /// `A + B K`, `C + D K` for a model `(A, B)` and known output matrices.
    pub fn from_model(a: &Mat, b: &Mat, k: &Mat, plant: &KnownMatrices) -> Result<Self> {
        if b.shape() != (a.nrows(), k.nrows()) || k.ncols() != a.nrows() || plant.d.ncols() != k.nrows() {
            return Err(Error::Dimension("model, gain and plant matrices are inconsistent".into()));
        }
        Self::new(a + b * k, plant.b_w.clone(), &plant.c + &plant.d * k, plant.d_w.clone())
    }

    pub fn of_system(sys: &LtiSystem, k: &Mat) -> Result<Self> {
        Self::from_model(&sys.a, &sys.b, k, &KnownMatrices::of(sys))
    }

    pub fn n(&self) -> usize {
        self.a_cl.nrows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.a_cl)
    }

    /// `sigma_max(C_cl (e^{j w} I - A_cl)^-1 B_w + D_w)`.
    pub fn gain_at(&self, omega: f64) -> f64 {
        let (n, m_w, p_z) = (self.n(), self.b_w.ncols(), self.c_cl.nrows());
        if m_w == 0 || p_z == 0 {
            return 0.0;
        }
        let z = Complex::new(omega.cos(), omega.sin());
        let lhs = DMatrix::from_fn(n, n, |r, c| {
            let d = if r == c { z } else { Complex::new(0.0, 0.0) };
            d - Complex::new(self.a_cl[(r, c)], 0.0)
        });
        let rhs = self.b_w.map(|v| Complex::new(v, 0.0));
        let Some(sol) = lhs.lu().solve(&rhs) else {
            return f64::INFINITY;
        };
        let g = self.c_cl.map(|v| Complex::new(v, 0.0)) * sol + self.d_w.map(|v| Complex::new(v, 0.0));
        // sigma_max from the Hermitian Gram matrix of the smaller side
        let gram = if g.nrows() <= g.ncols() { &g * g.adjoint() } else { g.adjoint() * &g };
        gram.symmetric_eigenvalues().iter().fold(0.0f64, |m, &v| m.max(v)).sqrt()
    }
}

fn require_stable(cl: &ClosedLoop) -> Result<f64> {
    let rho = cl.spectral_radius()?;
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    Ok(rho)
}

/// Solver settings for analysis: strictness margin 1e-8.
pub fn analysis_solver_options() -> SolverOptions {
    SolverOptions { eps_strict: 1e-8, ..SolverOptions::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutcome {
    pub satisfied: bool,
    /// Storage matrix when satisfied.
    pub x: Option<Mat>,
    /// Equilibrated largest eigenvalue of the re-assembled LMI.
    pub margin: f64,
    pub diagnostics: SdpDiagnostics,
}

/// Dissipation inequality of the closed loop for the index `(Q, S, R)`:
///
/// ```text
/// [A' X A - X    A' X B_w  ]   [0   I  ]' [Q  S] [0   I  ]
/// [B_w' X A      B_w' X B_w] + [C   D_w]  [S' R] [C   D_w]  < 0,  X > 0
/// ```
pub fn analysis_matrix(cl: &ClosedLoop, perf: &PerformanceIndex, x: &Mat) -> Mat {
    let (a, b, c, d) = (&cl.a_cl, &cl.b_w, &cl.c_cl, &cl.d_w);
    let (q, s, r) = (&perf.q, &perf.s, &perf.r);
    let top_left = a.transpose() * x * a - x + c.transpose() * r * c;
    let bottom_left = b.transpose() * x * a + s * c + d.transpose() * r * c;
    let bottom_right =
        b.transpose() * x * b + q + s * d + d.transpose() * s.transpose() + d.transpose() * r * d;
    let (n, m_w) = (cl.n(), b.ncols());
    let mut f = Mat::zeros(n + m_w, n + m_w);
    f.view_mut((0, 0), (n, n)).copy_from(&top_left);
    f.view_mut((n, 0), (m_w, n)).copy_from(&bottom_left);
    f.view_mut((0, n), (n, m_w)).copy_from(&bottom_left.transpose());
    f.view_mut((n, n), (m_w, m_w)).copy_from(&bottom_right);
    linalg::sym(&f)
}

/// Quadratic performance of a closed loop; unstable loops are reported as
/// not satisfied.
pub fn quadratic_performance_analysis(
    cl: &ClosedLoop,
    perf: &PerformanceIndex,
    opts: &SolverOptions,
) -> Result<AnalysisOutcome> {
    let (n, m_w, p_z) = (cl.n(), cl.b_w.ncols(), cl.c_cl.nrows());
    if perf.q.nrows() != m_w || perf.r.nrows() != p_z {
        return Err(Error::Dimension("performance index does not match the closed loop".into()));
    }
    let not_satisfied = |margin, diagnostics| AnalysisOutcome { satisfied: false, x: None, margin, diagnostics };
    if cl.spectral_radius()? >= 1.0 {
        return Ok(not_satisfied(f64::INFINITY, SdpDiagnostics::default()));
    }
    let mut p = SdpProblem::new();
    let xv = p.symmetric("X", n);
    let i_n = Mat::identity(n, n);
    let zero = Mat::zeros(n, n);
    let constant = analysis_matrix(cl, perf, &zero);
    let mut b = LmiBuilder::new(&[n, m_w]);
    b.term(0, 0, &cl.a_cl.transpose(), xv, &cl.a_cl)
        .term(0, 0, &-&i_n, xv, &i_n)
        .term(1, 0, &cl.b_w.transpose(), xv, &cl.a_cl)
        .term(1, 1, &cl.b_w.transpose(), xv, &cl.b_w);
    let cn = constant.view((0, 0), (n, n)).into_owned();
    let cb = constant.view((n, 0), (m_w, n)).into_owned();
    let cw = constant.view((n, n), (m_w, m_w)).into_owned();
    b.constant(0, 0, &cn).constant(1, 0, &cb).constant(1, 1, &cw);
    p.add_lmi(b.build("dissipation", Strictness::Strict)?)?;
    let mut pos = LmiBuilder::new(&[n]);
    pos.term(0, 0, &-&i_n, xv, &i_n);
    p.add_lmi(pos.build("X>0", Strictness::Strict)?)?;
    let out = sdp::solve(&p, opts)?;
    match out.status {
        SdpStatus::Feasible => {
            let x = out.value(&xv).expect("values");
            let f = analysis_matrix(cl, perf, &x);
            let margin = sdp::equilibrated_max_eigenvalue(&f, &constant).max(-linalg::min_sym_eigenvalue(&x));
            if margin > -0.5 * opts.eps_strict {
                return Err(Error::Inconclusive(format!("analysis certificate failed re-substitution ({margin:.3e})")));
            }
            Ok(AnalysisOutcome { satisfied: true, x: Some(x), margin, diagnostics: out.diagnostics })
        }
        SdpStatus::Infeasible => Ok(not_satisfied(f64::INFINITY, out.diagnostics)),
        SdpStatus::Inconclusive => Err(Error::Inconclusive(format!("analysis undecided: {}", out.diagnostics.message))),
    }
}

/// Both H-infinity estimates computed by [`hinf_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HinfEstimate {
    /// Smallest level certified by the analysis LMI.
    pub lmi: f64,
    /// Frequency-grid maximum after refinement.
    pub grid: f64,
    /// Frequency of the grid maximum in rad/sample.
    pub peak_frequency: f64,
}

pub const GRID_POINTS: usize = 2048;

/// Golden-section maximization of `f` on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `max_w sigma_max(G(e^{jw}))` over a uniform grid of `points` values in
/// `[0, pi]` with golden-section refinement around the three largest local
/// maxima. Returns `(value, frequency)`.
pub fn hinf_norm_grid(cl: &ClosedLoop, points: usize) -> Result<(f64, f64)> {
    require_stable(cl)?;
    let points = points.max(2);
    let step = std::f64::consts::PI / (points - 1) as f64;
    let values: Vec<f64> = (0..points).map(|i| cl.gain_at(i as f64 * step)).collect();
    let mut peaks: Vec<usize> = (0..points)
        .filter(|&i| {
            let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < points { values[i + 1] } else { f64::NEG_INFINITY };
            values[i] >= left && values[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let (mut best, mut best_w) = (f64::NEG_INFINITY, 0.0);
    for &i in peaks.iter().take(3) {
        let w = i as f64 * step;
        if values[i] > best {
            best = values[i];
            best_w = w;
        }
        let lo = (w - step).max(0.0);
        let hi = (w + step).min(std::f64::consts::PI);
        let (rw, rv) = golden_max(lo, hi, |x| cl.gain_at(x));
        if rv > best {
            best = rv;
            best_w = rw;
        }
    }
    Ok((best, best_w))
}

/// Smallest level `gamma` certified by the analysis LMI with the index
/// `(-gamma^2 I, 0, I)`, to relative accuracy `tol`.
pub fn hinf_norm_lmi(cl: &ClosedLoop, tol: f64, opts: &SolverOptions) -> Result<f64> {
    require_stable(cl)?;
    let (m_w, p_z) = (cl.b_w.ncols(), cl.c_cl.nrows());
    if m_w == 0 || p_z == 0 {
        return Ok(0.0);
    }
    let holds = |gamma: f64| -> Result<bool> {
        match quadratic_performance_analysis(cl, &PerformanceIndex::hinf(gamma, m_w, p_z), opts) {
            Ok(o) => Ok(o.satisfied),
            Err(Error::Inconclusive(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut hi = 1.0;
    let mut lo = 0.0;
    let mut found = false;
    for _ in 0..80 {
        if holds(hi)? {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return Err(Error::Inconclusive(format!("no certified H-infinity level up to {hi:.3e}")));
    }
    if lo == 0.0 {
        // shrink towards zero until the level fails
        lo = hi;
        while lo > 1e-9 {
            lo *= 0.5;
            if !holds(lo)? {
                break;
            }
            hi = lo;
        }
        if lo <= 1e-9 {
            return Ok(hi);
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// H-infinity norm by LMI bisection, cross-checked against the frequency
/// grid; the two must agree within `2 tol` (relative).
pub fn hinf_norm_detailed(cl: &ClosedLoop, tol: f64) -> Result<HinfEstimate> {
    let (grid, peak_frequency) = hinf_norm_grid(cl, GRID_POINTS)?;
    let lmi = hinf_norm_lmi(cl, tol, &analysis_solver_options())?;
    let scale = lmi.max(grid);
    if (lmi - grid).abs() > 2.0 * tol * scale + 1e-12 {
        return Err(Error::Inconclusive(format!(
            "H-infinity estimates disagree: LMI {lmi:.6}, grid {grid:.6}"
        )));
    }
    Ok(HinfEstimate { lmi, grid, peak_frequency })
}

/// H-infinity norm (the LMI-certified level) with relative accuracy `tol`.
pub fn hinf_norm(cl: &ClosedLoop, tol: f64) -> Result<f64> {
    Ok(hinf_norm_detailed(cl, tol)?.lmi)
}

/// Fast H-infinity norm for audits: bilinear map to continuous time and
/// the Hamiltonian level-set iteration of Bruinsma and Steinbuch. Returns
/// an upper bound within `tol` (relative) of the norm.
pub fn hinf_norm_fast(cl: &ClosedLoop, tol: f64) -> Result<f64> {
    require_stable(cl)?;
    let (n, m_w, p_z) = (cl.n(), cl.b_w.ncols(), cl.c_cl.nrows());
    if m_w == 0 || p_z == 0 {
        return Ok(0.0);
    }
    let pi = std::f64::consts::PI;
    // lower bound from a few frequencies and the pole angles
    let mut lb = (0..=16).map(|i| cl.gain_at(i as f64 * pi / 16.0)).fold(0.0, f64::max);
    for z in linalg::eigenvalues(&cl.a_cl)? {
        lb = lb.max(cl.gain_at(z.arg().abs()));
    }
    if n == 0 {
        return Ok(linalg::sigma_max(&cl.d_w));
    }
    if lb == 0.0 {
        return Ok(0.0);
    }
    let i_n = Mat::identity(n, n);
    let inv = (&cl.a_cl + &i_n)
        .try_inverse()
        .ok_or_else(|| Error::Inconclusive("bilinear transform is singular".into()))?;
    let s2 = 2f64.sqrt();
    let ac = &inv * (&cl.a_cl - &i_n);
    let bc = &inv * &cl.b_w * s2;
    let cc = &cl.c_cl * &inv * s2;
    let dc = &cl.d_w - &cl.c_cl * &inv * &cl.b_w;
    let i_p = Mat::identity(p_z, p_z);
    for _ in 0..50 {
        let gamma = (1.0 + 2.0 * tol) * lb;
        let r = Mat::identity(m_w, m_w) * (gamma * gamma) - dc.transpose() * &dc;
        let r_inv = linalg::spd_inverse(&r)?;
        let a_h = &ac + &bc * &r_inv * dc.transpose() * &cc;
        let mut h = Mat::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&a_h);
        h.view_mut((0, n), (n, n)).copy_from(&(&bc * &r_inv * bc.transpose()));
        h.view_mut((n, 0), (n, n))
            .copy_from(&-(cc.transpose() * (&i_p + &dc * &r_inv * dc.transpose()) * &cc));
        h.view_mut((n, n), (n, n)).copy_from(&-a_h.transpose());
        let scale = h.amax().max(1.0);
        let mut nus: Vec<f64> = linalg::eigenvalues(&h)?
            .into_iter()
            .filter(|z| z.re.abs() <= 1e-8 * scale && z.im >= 0.0)
            .map(|z| z.im)
            .collect();
        if nus.is_empty() {
            return Ok(gamma);
        }
        nus.sort_by(f64::total_cmp);
        let to_omega = |nu: f64| 2.0 * nu.atan();
        let mut next = lb;
        for &nu in &nus {
            next = next.max(cl.gain_at(to_omega(nu)));
        }
        for pair in nus.windows(2) {
            next = next.max(cl.gain_at(to_omega(0.5 * (pair[0] + pair[1]))));
        }
        if next <= lb * (1.0 + 0.1 * tol) {
            // crossings did not raise the bound: refine locally around them
            for &nu in &nus {
                let w = to_omega(nu);
                let (_, v) = golden_max((w - 1e-2).max(0.0), (w + 1e-2).min(pi), |x| cl.gain_at(x));
                next = next.max(v);
            }
            if next <= lb * (1.0 + 0.1 * tol) {
                return Ok(gamma);
            }
        }
        lb = next;
    }
    Err(Error::Inconclusive("Hamiltonian iteration did not settle".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalDesign {
    pub k: Mat,
    pub gamma: f64,
    pub y: Mat,
    pub m: Mat,
    /// Equilibrated margin of the re-assembled LMI.
    pub certificate_margin: f64,
}

/// Model-based state-feedback LMI with `K = M Y^-1`, block order
/// `[x, w, x+, z]`:
///
/// ```text
/// [ -Y           *         *    *  ]
/// [  0          -g^2 I     *    *  ]
/// [  A Y + B M   B_w      -Y    *  ]  < 0
/// [  C Y + D M   D_w       0   -I  ]
/// ```
pub fn nominal_matrix(sys: &LtiSystem, gamma: f64, y: &Mat, m: &Mat) -> Mat {
    let (n, m_w, p_z) = (sys.n(), sys.m_w(), sys.p_z());
    let sizes = [n, m_w, n, p_z];
    let off = [0, n, n + m_w, 2 * n + m_w];
    let total = 2 * n + m_w + p_z;
    let mut f = Mat::zeros(total, total);
    let mut put = |i: usize, j: usize, b: &Mat| {
        debug_assert_eq!(b.shape(), (sizes[i], sizes[j]));
        f.view_mut((off[i], off[j]), b.shape()).copy_from(b);
        if i != j {
            f.view_mut((off[j], off[i]), (b.ncols(), b.nrows())).copy_from(&b.transpose());
        }
    };
    put(0, 0, &-y);
    put(1, 1, &(-Mat::identity(m_w, m_w) * (gamma * gamma)));
    put(2, 0, &(&sys.a * y + &sys.b * m));
    put(3, 0, &(&sys.c * y + &sys.d * m));
    put(2, 1, &sys.b_w);
    put(3, 1, &sys.d_w);
    put(2, 2, &-y);
    put(3, 3, &-Mat::identity(p_z, p_z));
    f
}

fn nominal_at(sys: &LtiSystem, gamma: f64, opts: &SolverOptions) -> Result<NominalDesign> {
    let (n, m_w, p_z, nu) = (sys.n(), sys.m_w(), sys.p_z(), sys.m());
    let mut p = SdpProblem::new();
    let y = p.symmetric("Y", n);
    let m = p.rect("M", nu, n);
    let i_n = Mat::identity(n, n);
    let mut b = LmiBuilder::new(&[n, m_w, n, p_z]);
    b.term(0, 0, &-&i_n, y, &i_n)
        .constant(1, 1, &(-Mat::identity(m_w, m_w) * (gamma * gamma)))
        .term(2, 0, &sys.a, y, &i_n)
        .term(2, 0, &sys.b, m, &i_n)
        .term(3, 0, &sys.c, y, &i_n)
        .term(3, 0, &sys.d, m, &i_n)
        .constant(2, 1, &sys.b_w)
        .constant(3, 1, &sys.d_w)
        .term(2, 2, &-&i_n, y, &i_n)
        .constant(3, 3, &-Mat::identity(p_z, p_z));
    p.add_lmi(b.build("nominal", Strictness::Strict)?)?;
    let out = sdp::solve(&p, opts)?;
    match out.status {
        SdpStatus::Feasible => {}
        SdpStatus::Infeasible => return Err(Error::Infeasible(format!("nominal LMI at {gamma}: {}", out.diagnostics.message))),
        SdpStatus::Inconclusive => {
            return Err(Error::Inconclusive(format!("nominal LMI at {gamma}: {}", out.diagnostics.message)))
        }
    }
    let (yv, mv) = (out.value(&y).expect("values"), out.value(&m).expect("values"));
    let f = nominal_matrix(sys, gamma, &yv, &mv);
    let f0 = nominal_matrix(sys, gamma, &Mat::zeros(n, n), &Mat::zeros(nu, n));
    let margin = sdp::equilibrated_max_eigenvalue(&f, &f0);
    if margin > -0.5 * opts.eps_strict {
        return Err(Error::Inconclusive(format!("nominal certificate failed re-substitution ({margin:.3e})")));
    }
    let k = &mv * linalg::spd_inverse(&yv)?;
    Ok(NominalDesign { k, gamma, y: yv, m: mv, certificate_margin: margin })
}

/// Whether some static state feedback stabilizes `(A, B)`.
fn nominal_stabilizable(sys: &LtiSystem, opts: &SolverOptions) -> Result<bool> {
    let (n, nu) = (sys.n(), sys.m());
    let mut p = SdpProblem::new();
    let y = p.symmetric("Y", n);
    let m = p.rect("M", nu, n);
    let i_n = Mat::identity(n, n);
    let mut b = LmiBuilder::new(&[n, n]);
    b.term(0, 0, &-&i_n, y, &i_n)
        .term(1, 0, &sys.a, y, &i_n)
        .term(1, 0, &sys.b, m, &i_n)
        .term(1, 1, &-&i_n, y, &i_n);
    p.add_lmi(b.build("lyapunov", Strictness::Strict)?)?;
    let out = sdp::solve(&p, opts)?;
    match out.status {
        SdpStatus::Feasible => Ok(true),
        SdpStatus::Infeasible => Ok(false),
        SdpStatus::Inconclusive => Err(Error::Inconclusive(format!("stabilizability undecided: {}", out.diagnostics.message))),
    }
}

/// Minimal H-infinity level of model-based state feedback, by bisection to
/// relative accuracy `tol`.
pub fn nominal_hinf_baseline(sys: &LtiSystem, tol: f64, opts: &SolverOptions) -> Result<NominalDesign> {
    sys.validate()?;
    if !nominal_stabilizable(sys, opts)? {
        return Err(Error::Infeasible("(A, B) is not stabilizable by state feedback".into()));
    }
    let attempt = |gamma: f64| match nominal_at(sys, gamma, opts) {
        Ok(d) => Ok(Some(d)),
        Err(Error::Infeasible(_) | Error::Inconclusive(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let mut hi = 1.0;
    let mut lo = 0.0;
    let mut best = None;
    for _ in 0..60 {
        if let Some(d) = attempt(hi)? {
            best = Some(d);
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let Some(mut best) = best else {
        return Err(Error::Inconclusive(format!("no certified nominal level up to {hi:.3e}")));
    };
    if lo == 0.0 {
        lo = hi;
        while lo > 1e-9 {
            lo *= 0.5;
            match attempt(lo)? {
                Some(d) => {
                    best = d;
                    hi = lo;
                }
                None => break,
            }
        }
        if lo <= 1e-9 {
            return Ok(best);
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        match attempt(mid)? {
            Some(d) => {
                best = d;
                hi = mid;
            }
            None => lo = mid,
        }
    }
    Ok(best)
}

/// Result of a sampled robustness audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub samples: usize,
    pub stable: usize,
    pub stable_fraction: f64,
    pub max_spectral_radius: f64,
    /// Certified level when the index is the H-infinity one.
    pub gamma: Option<f64>,
    pub max_hinf: Option<f64>,
    /// Samples meeting the performance index (when one was given).
    pub performance_pass: Option<usize>,
    /// Largest data residual `|X+ - A X - B U - B_w W| / (1 + |X+|)` over
    /// the samples.
    pub max_data_residual: f64,
    /// Re-substitution margin and equality residual of the certificate.
    pub certificate_margin: Option<f64>,
    pub equality_residual: Option<f64>,
    pub errors: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.errors.is_empty()
            && self.samples > 0
            && self.stable == self.samples
            && self.max_data_residual <= AUDIT_RESIDUAL_TOL
            && self.performance_pass.is_none_or(|p| p == self.samples)
    }
}

/// Largest relative data residual of a sample counted as consistent.
pub const AUDIT_RESIDUAL_TOL: f64 = 1e-6;

/// Relative tolerance of the audit H-infinity evaluations.
pub const AUDIT_HINF_TOL: f64 = 1e-7;

/// Consistent models for an audit: `count` draws, half of them on the
/// boundary of the disturbance set. Sampling failures go to `errors`.
fn audit_models(
    dm: &DataMatrices,
    b_w: &Mat,
    set: &DisturbanceSet,
    count: usize,
    seed: u64,
    errors: &mut Vec<String>,
) -> Vec<ConsistentModel> {
    let sampler = match ConsistentSampler::new(dm, b_w, set, true) {
        Ok(s) => s,
        Err(e) => {
            errors.push(format!("sampler: {e}"));
            return Vec::new();
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        match sampler.sample(&mut rng, true) {
            Ok(m) => out.push(m),
            Err(e) => {
                errors.push(format!("sampling: {e}"));
                break;
            }
        }
    }
    out
}

fn run_audit(
    models: &[ConsistentModel],
    dm: &DataMatrices,
    b_w: &Mat,
    perf: Option<&PerformanceIndex>,
    closed_loop: impl Fn(&ConsistentModel) -> Result<ClosedLoop>,
    mut report: AuditReport,
) -> AuditReport {
    let analysis_opts = analysis_solver_options();
    for model in models {
        report.samples += 1;
        let scale = 1.0 + dm.x_plus.amax();
        report.max_data_residual = report.max_data_residual.max(model.residual(dm, b_w) / scale);
        let cl = match closed_loop(model) {
            Ok(cl) => cl,
            Err(e) => {
                report.errors.push(e.to_string());
                break;
            }
        };
        let rho = match cl.spectral_radius() {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(e.to_string());
                continue;
            }
        };
        report.max_spectral_radius = report.max_spectral_radius.max(rho);
        if rho >= 1.0 {
            continue;
        }
        report.stable += 1;
        let Some(perf) = perf else { continue };
        let pass = match report.gamma {
            Some(gamma) => match hinf_norm_fast(&cl, AUDIT_HINF_TOL) {
                Ok(h) => {
                    report.max_hinf = Some(report.max_hinf.map_or(h, |m: f64| m.max(h)));
                    h <= gamma
                }
                Err(e) => {
                    report.errors.push(format!("H-infinity: {e}"));
                    false
                }
            },
            None => match quadratic_performance_analysis(&cl, perf, &analysis_opts) {
                Ok(o) => o.satisfied,
                Err(e) => {
                    report.errors.push(format!("analysis: {e}"));
                    false
                }
            },
        };
        if pass {
            if let Some(p) = report.performance_pass.as_mut() {
                *p += 1;
            }
        }
    }
    if report.samples > 0 {
        report.stable_fraction = report.stable as f64 / report.samples as f64;
    }
    report
}

fn empty_report(perf: Option<&PerformanceIndex>) -> AuditReport {
    AuditReport {
        samples: 0,
        stable: 0,
        stable_fraction: 0.0,
        max_spectral_radius: 0.0,
        gamma: perf.and_then(|p| p.hinf_level()),
        max_hinf: None,
        performance_pass: perf.map(|_| 0),
        max_data_residual: 0.0,
        certificate_margin: None,
        equality_residual: None,
        errors: Vec::new(),
    }
}

/// Audit a gain against `count` sampled consistent systems. With a
/// performance index every stable sample is also checked against it (fast
/// H-infinity norm for the H-infinity index, the analysis LMI otherwise).
pub fn audit_gain(
    k: &Mat,
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    perf: Option<&PerformanceIndex>,
    count: usize,
    seed: u64,
) -> AuditReport {
    let mut report = empty_report(perf);
    let models = audit_models(dm, &plant.b_w, set, count, seed, &mut report.errors);
    run_audit(&models, dm, &plant.b_w, perf, |m| ClosedLoop::from_model(&m.a, &m.b, k, plant), report)
}

/// Audit of a mixed-design gain `k = [K1 K2]`: sampled `(A1, B1)`
/// completed by the known blocks.
pub fn audit_mixed(
    k: &Mat,
    ms: &MixedSystem,
    set: &DisturbanceSet,
    perf: Option<&PerformanceIndex>,
    count: usize,
    seed: u64,
) -> AuditReport {
    let mut report = empty_report(perf);
    let effective = match DataMatrices::from_matrices(
        ms.data.x.clone(),
        &ms.data.x_plus - &ms.a2 * &ms.x_tilde,
        ms.data.u.clone(),
    ) {
        Ok(d) => d,
        Err(e) => {
            report.errors.push(e.to_string());
            return report;
        }
    };
    let models = audit_models(&effective, &ms.b_w1, set, count, seed, &mut report.errors);
    let closed_loop = |m: &ConsistentModel| {
        let a = linalg::vstack(&[&linalg::hstack(&[&m.a, &ms.a2])?, &linalg::hstack(&[&ms.a3, &ms.a4])?])?;
        let b = linalg::vstack(&[&m.b, &ms.b2])?;
        let b_w = linalg::vstack(&[&ms.b_w1, &ms.b_w2])?;
        let c = linalg::hstack(&[&ms.c1, &ms.c2])?;
        let plant = KnownMatrices::new(b_w, c, ms.d_w.clone(), ms.d.clone())?;
        ClosedLoop::from_model(&a, &b, k, &plant)
    };
    run_audit(&models, &effective, &ms.b_w1, perf, closed_loop, report)
}

/// [`audit_gain`] for a synthesis result, carrying over its certificate
/// re-substitution numbers.
pub fn robust_audit(
    result: &SynthesisResult,
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    perf: Option<&PerformanceIndex>,
    count: usize,
    seed: u64,
) -> AuditReport {
    let mut report = audit_gain(&result.k, dm, plant, set, perf, count, seed);
    report.certificate_margin = Some(result.diagnostics.certificate_margin);
    report.equality_residual = Some(result.diagnostics.equality_residual);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{generate_experiment, ExperimentSpec};

    fn scalar(a: f64) -> ClosedLoop {
        let one = Mat::identity(1, 1);
        ClosedLoop::new(Mat::from_element(1, 1, a), one.clone(), one, Mat::zeros(1, 1)).unwrap()
    }

    fn printed_gain() -> Mat {
        Mat::from_row_slice(2, 3, &[-2.45, -1.29, -2.4, -0.61, -0.03, -2.18])
    }

    #[test]
    fn first_order_norm_has_closed_form() {
        // |1 / (e^{jw} - a)| peaks at w = 0 for a > 0 and at w = pi for a < 0.
        for a in [0.5, -0.7, 0.9] {
            let cl = scalar(a);
            let exact = 1.0 / (1.0 - f64::abs(a));
            let (grid, _) = hinf_norm_grid(&cl, GRID_POINTS).unwrap();
            assert!((grid - exact).abs() <= 1e-9 * exact, "{a}: grid {grid}");
            let fast = hinf_norm_fast(&cl, 1e-9).unwrap();
            assert!(fast >= exact * (1.0 - 1e-12) && fast <= exact * (1.0 + 1e-8), "{a}: fast {fast}");
            let lmi = hinf_norm(&cl, 1e-5).unwrap();
            assert!((lmi - exact).abs() <= 2e-4 * exact, "{a}: lmi {lmi}");
        }
    }

    #[test]
    fn gain_at_matches_transfer_function() {
        let cl = scalar(0.3);
        let w: f64 = 1.1;
        let re = w.cos() - 0.3;
        let exact = 1.0 / (re * re + w.sin() * w.sin()).sqrt();
        assert!((cl.gain_at(w) - exact).abs() < 1e-12);
    }

    #[test]
    fn static_loop_norm_is_feedthrough() {
        let d = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let cl = ClosedLoop::new(Mat::zeros(1, 1), Mat::zeros(1, 2), Mat::zeros(2, 1), d).unwrap();
        assert!((hinf_norm_fast(&cl, 1e-9).unwrap() - 3.0).abs() < 1e-8);
        assert!((hinf_norm_grid(&cl, 64).unwrap().0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_loops_are_rejected() {
        let cl = scalar(1.2);
        assert!(matches!(hinf_norm_fast(&cl, 1e-6), Err(Error::Unstable(_))));
        assert!(matches!(hinf_norm(&cl, 1e-6), Err(Error::Unstable(_))));
        let perf = PerformanceIndex::hinf(100.0, 1, 1);
        assert!(!quadratic_performance_analysis(&cl, &perf, &analysis_solver_options()).unwrap().satisfied);
    }

    #[test]
    fn analysis_brackets_the_norm() {
        let cl = scalar(0.5);
        let opts = analysis_solver_options();
        let above = quadratic_performance_analysis(&cl, &PerformanceIndex::hinf(2.05, 1, 1), &opts).unwrap();
        assert!(above.satisfied);
        let x = above.x.unwrap();
        assert!(linalg::max_sym_eigenvalue(&analysis_matrix(&cl, &PerformanceIndex::hinf(2.05, 1, 1), &x)) < 0.0);
        let below = quadratic_performance_analysis(&cl, &PerformanceIndex::hinf(1.95, 1, 1), &opts).unwrap();
        assert!(!below.satisfied);
    }

    #[test]
    fn dimension_checks() {
        assert!(ClosedLoop::new(Mat::zeros(2, 2), Mat::zeros(1, 1), Mat::zeros(1, 2), Mat::zeros(1, 1)).is_err());
        let plant = KnownMatrices::of(&LtiSystem::benchmark());
        assert!(ClosedLoop::from_model(&Mat::zeros(3, 3), &Mat::zeros(3, 2), &Mat::zeros(3, 3), &plant).is_err());
    }

    #[test]
    fn nominal_baseline_and_printed_gain() {
        let sys = LtiSystem::benchmark();
        let nom = nominal_hinf_baseline(&sys, 1e-4, &SolverOptions::default()).unwrap();
        assert!(nom.gamma > 2.15 && nom.gamma < 2.25, "{}", nom.gamma);
        let achieved = hinf_norm_fast(&ClosedLoop::of_system(&sys, &nom.k).unwrap(), 1e-9).unwrap();
        assert!(achieved <= nom.gamma * (1.0 + 1e-6));
        let printed = hinf_norm_fast(&ClosedLoop::of_system(&sys, &printed_gain()).unwrap(), 1e-9).unwrap();
        assert!(printed > 2.25 && printed < 2.35, "{printed}");
    }

    #[test]
    fn unstabilizable_plant_has_no_baseline() {
        let sys = LtiSystem::with_state_output(
            Mat::from_element(1, 1, 1.5),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        assert!(matches!(nominal_hinf_baseline(&sys, 1e-3, &SolverOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn audit_tells_good_and_bad_gains_apart() {
        let sys = LtiSystem::benchmark();
        let rec = generate_experiment(&sys, &ExperimentSpec::new(20, 1.0, 2, 0.02), 0).unwrap();
        let dm = DataMatrices::build(&rec).unwrap();
        let set = DisturbanceSet::from_sigma_bound(0.02, 3, 20).unwrap();
        let plant = KnownMatrices::of(&sys);
        let perf = PerformanceIndex::hinf(2.4, 3, 3);
        let good = audit_gain(&printed_gain(), &dm, &plant, &set, Some(&perf), 100, 1);
        assert!(good.passed(), "{good:?}");
        assert_eq!(good.max_hinf.map(|h| h <= 2.4), Some(true));
        assert!(good.max_data_residual < 1e-9);

        let open = audit_gain(&Mat::zeros(2, 3), &dm, &plant, &set, None, 20, 1);
        assert_eq!(open.stable, 0);
        assert!(!open.passed());

        let tight = audit_gain(&printed_gain(), &dm, &plant, &set, Some(&PerformanceIndex::hinf(2.0, 3, 3)), 20, 1);
        assert_eq!(tight.performance_pass, Some(0));
        assert!(!tight.passed());
    }

    #[test]
    fn audit_is_seeded() {
        let sys = LtiSystem::benchmark();
        let rec = generate_experiment(&sys, &ExperimentSpec::new(20, 1.0, 2, 0.02), 3).unwrap();
        let dm = DataMatrices::build(&rec).unwrap();
        let set = DisturbanceSet::from_sigma_bound(0.02, 3, 20).unwrap();
        let plant = KnownMatrices::of(&sys);
        let a = audit_gain(&printed_gain(), &dm, &plant, &set, None, 10, 5);
        let b = audit_gain(&printed_gain(), &dm, &plant, &set, None, 10, 5);
        assert_eq!(a, b);
    }
}
