//! Congruence-transformed, twice Schur-complemented LMIs in the variables
//! `Y = X^-1` and `M = G Y`.
//!
//! Stabilization, block order `[x, w~, x+, z~]`:
//!
//! ```text
//! [ -Y       -M'S_w'  M'X+'  M'      ]
//! [ -S_w M    Q_w     B_w'   0       ]
//! [  X+ M     B_w    -Y      0       ]  < 0
//! [  M        0       0     -R_w^-1  ]
//! ```
//!
//! Quadratic performance, block order `[x, w, w~, x+, z, z~]`, adds the
//! performance channel with index `(Q, S, R)` and scales the disturbance
//! multiplier by `lambda`. The mixed model/data variant splits the state
//! into a data-driven part `x` and a known part `x~` with a block-diagonal
//! `Y = diag(Y1, Y2)`; with an empty known part it is the same matrix.

use super::{LmiBlock, LmiBuilder, Strictness, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::noise::DisturbanceSet;
use crate::synth::PerformanceIndex;

fn chol_inverse(m: &Mat, what: &str) -> Result<Mat> {
    linalg::spd_inverse(m).map_err(|_| Error::InvalidArgument(format!("{what} must be positive definite")))
}

fn expect_shape(name: &str, m: &Mat, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!("{name} is {:?}, expected {:?}", m.shape(), shape)));
    }
    Ok(())
}

/// LMI of the robust stabilization problem.
pub fn stabilization_lmi(y: Var, m: Var, x_plus: &Mat, b_w: &Mat, set: &DisturbanceSet) -> Result<LmiBlock> {
    let n = x_plus.nrows();
    let horizon = x_plus.ncols();
    let m_w = set.m_w();
    expect_shape("Y", &Mat::zeros(y.shape().0, y.shape().1), (n, n))?;
    expect_shape("M", &Mat::zeros(m.shape().0, m.shape().1), (horizon, n))?;
    expect_shape("B_w", b_w, (n, m_w))?;
    if set.horizon() != horizon {
        return Err(Error::Dimension(format!("disturbance set horizon {} differs from data length {horizon}", set.horizon())));
    }
    let r_inv = chol_inverse(set.r_w(), "R_w")?;
    let (i_n, i_h) = (Mat::identity(n, n), Mat::identity(horizon, horizon));
    let (x, wt, xp, zt) = (0, 1, 2, 3);
    let mut b = LmiBuilder::new(&[n, m_w, n, horizon]);
    b.term(x, x, &-&i_n, y, &i_n)
        .term(wt, x, &-set.s_w(), m, &i_n)
        .constant(wt, wt, set.q_w())
        .term(xp, x, x_plus, m, &i_n)
        .constant(xp, wt, b_w)
        .term(xp, xp, &-&i_n, y, &i_n)
        .term(zt, x, &i_h, m, &i_n)
        .constant(zt, zt, &-r_inv);
    b.build("stabilization", Strictness::Strict)
}

/// Known part of the plant for the performance problems.
#[derive(Debug, Clone)]
pub struct MixedParts<'a> {
    /// Data of the unknown part: `X+` (n x N), `U` (m x N).
    pub x_plus: &'a Mat,
    pub u: &'a Mat,
    /// Measured known-part states `X~` (n~ x N); only enters through `A2 X~`.
    pub x_tilde: &'a Mat,
    pub a2: &'a Mat,
    pub a3: &'a Mat,
    pub a4: &'a Mat,
    pub b2: &'a Mat,
    pub b_w1: &'a Mat,
    pub b_w2: &'a Mat,
    pub c1: &'a Mat,
    pub c2: &'a Mat,
    pub d_w: &'a Mat,
    pub d: &'a Mat,
}

impl MixedParts<'_> {
    fn check(&self, set: &DisturbanceSet, perf: &PerformanceIndex) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let n = self.x_plus.nrows();
        let horizon = self.x_plus.ncols();
        let m = self.u.nrows();
        let nt = self.a4.nrows();
        let m_w = set.m_w();
        let p_z = self.c1.nrows();
        expect_shape("U", self.u, (m, horizon))?;
        expect_shape("X~", self.x_tilde, (nt, horizon))?;
        expect_shape("A2", self.a2, (n, nt))?;
        expect_shape("A3", self.a3, (nt, n))?;
        expect_shape("A4", self.a4, (nt, nt))?;
        expect_shape("B2", self.b2, (nt, m))?;
        expect_shape("B_w1", self.b_w1, (n, m_w))?;
        expect_shape("B_w2", self.b_w2, (nt, m_w))?;
        expect_shape("C1", self.c1, (p_z, n))?;
        expect_shape("C2", self.c2, (p_z, nt))?;
        expect_shape("D_w", self.d_w, (p_z, m_w))?;
        expect_shape("D", self.d, (p_z, m))?;
        expect_shape("Q", &perf.q, (m_w, m_w))?;
        expect_shape("S", &perf.s, (m_w, p_z))?;
        expect_shape("R", &perf.r, (p_z, p_z))?;
        if set.horizon() != horizon {
            return Err(Error::Dimension(format!(
                "disturbance set horizon {} differs from data length {horizon}",
                set.horizon()
            )));
        }
        Ok((n, nt, m, m_w, p_z, horizon))
    }
}

/// Variables of the performance LMI; the known-part pair is absent when
/// `n~ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct PerfVars {
    pub y1: Var,
    pub m1: Var,
    pub y2: Option<Var>,
    pub m2: Option<Var>,
}

/// `R = L L'` when `R` is singular, otherwise `None` (use `-R^-1` directly).
fn output_weight(r: &Mat) -> Result<(Mat, Option<Mat>)> {
    let p = r.nrows();
    if p == 0 {
        return Ok((Mat::zeros(0, 0), None));
    }
    if linalg::min_sym_eigenvalue(r) > 1e-12 * linalg::max_sym_eigenvalue(r).max(1.0) {
        return Ok((-chol_inverse(r, "R")?, None));
    }
    let eig = linalg::sym(r).symmetric_eigen();
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > 1e-12).collect();
    let mut l = Mat::zeros(p, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        l.set_column(k, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    Ok((-Mat::identity(keep.len(), keep.len()), Some(l)))
}

/// Quadratic-performance LMI for the plant with data-driven part and known
/// part. Block order `[x, x~, w, w~, x+, x~+, z, z~]`.
pub fn mixed_performance_lmi(
    parts: &MixedParts,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
    vars: PerfVars,
) -> Result<LmiBlock> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("multiplier must be positive, got {lambda}")));
    }
    let (n, nt, _m, m_w, _p_z, horizon) = parts.check(set, perf)?;
    let (y2, m2) = match (vars.y2, vars.m2) {
        (Some(y2), Some(m2)) => (Some(y2), Some(m2)),
        (None, None) if nt == 0 => (None, None),
        _ => return Err(Error::Dimension("known-part variables do not match n~".into())),
    };
    if vars.y1.shape() != (n, n) || vars.m1.shape() != (horizon, n) {
        return Err(Error::Dimension("data-part variables have wrong shape".into()));
    }
    let (z_diag, factor) = output_weight(&perf.r)?;
    let pz_eff = z_diag.nrows();
    // rows mapping the performance output into the Schur-complemented block
    let zmap = match &factor {
        Some(l) => l.transpose(),
        None => Mat::identity(pz_eff, pz_eff),
    };
    let rl_inv = chol_inverse(&(set.r_w() * lambda), "lambda R_w")?;
    let (i_n, i_nt) = (Mat::identity(n, n), Mat::identity(nt, nt));
    let (x, xt, w, wt, xp, xtp, z, zt) = (0, 1, 2, 3, 4, 5, 6, 7);
    let mut b = LmiBuilder::new(&[n, nt, m_w, m_w, n, nt, pz_eff, horizon]);

    let t = parts.d_w.transpose() * &perf.r + &perf.s;
    let w_diag = &perf.q + &perf.s * parts.d_w + (&perf.s * parts.d_w).transpose()
        + parts.d_w.transpose() * &perf.r * parts.d_w;
    let du = parts.d * parts.u;
    let x_eff = parts.x_plus - parts.a2 * parts.x_tilde;
    let b2u = parts.b2 * parts.u;

    b.term(x, x, &-&i_n, vars.y1, &i_n)
        .term(w, x, &(&t * parts.c1), vars.y1, &i_n)
        .term(w, x, &(&t * &du), vars.m1, &i_n)
        .term(wt, x, &(-(set.s_w() * lambda)), vars.m1, &i_n)
        .term(xp, x, &x_eff, vars.m1, &i_n)
        .term(z, x, &(&zmap * parts.c1), vars.y1, &i_n)
        .term(z, x, &(&zmap * &du), vars.m1, &i_n)
        .term(zt, x, &Mat::identity(horizon, horizon), vars.m1, &i_n)
        .constant(w, w, &linalg::sym(&w_diag))
        .constant(xp, w, parts.b_w1)
        .constant(xtp, w, parts.b_w2)
        .constant(wt, wt, &(set.q_w() * lambda))
        .constant(xp, wt, parts.b_w1)
        .term(xp, xp, &-&i_n, vars.y1, &i_n)
        .constant(z, z, &z_diag)
        .constant(zt, zt, &-rl_inv);
    if nt > 0 {
        b.term(xtp, x, parts.a3, vars.y1, &i_n);
        b.term(xtp, x, &b2u, vars.m1, &i_n);
    }
    if let (Some(y2), Some(m2)) = (y2, m2) {
        b.term(xt, xt, &-&i_nt, y2, &i_nt)
            .term(w, xt, &(&t * parts.c2), y2, &i_nt)
            .term(w, xt, &(&t * &du), m2, &i_nt)
            .term(wt, xt, &(-(set.s_w() * lambda)), m2, &i_nt)
            .term(xp, xt, parts.a2, y2, &i_nt)
            .term(xp, xt, &x_eff, m2, &i_nt)
            .term(xtp, xt, parts.a4, y2, &i_nt)
            .term(xtp, xt, &b2u, m2, &i_nt)
            .term(z, xt, &(&zmap * parts.c2), y2, &i_nt)
            .term(z, xt, &(&zmap * &du), m2, &i_nt)
            .term(zt, xt, &Mat::identity(horizon, horizon), m2, &i_nt)
            .term(xtp, xtp, &-&i_nt, y2, &i_nt);
    }
    b.build("performance", Strictness::Strict)
}

/// Plant matrices that are known in the purely data-driven problem.
#[derive(Debug, Clone)]
pub struct KnownPlant<'a> {
    pub b_w: &'a Mat,
    pub c: &'a Mat,
    pub d_w: &'a Mat,
    pub d: &'a Mat,
}

/// Quadratic-performance LMI at multiplier `lambda`, block order
/// `[x, w, w~, x+, z, z~]`.
pub fn performance_lmi(
    x_plus: &Mat,
    u: &Mat,
    plant: &KnownPlant,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
    y: Var,
    m: Var,
) -> Result<LmiBlock> {
    let horizon = x_plus.ncols();
    let (n, mu, m_w, p_z) = (x_plus.nrows(), u.nrows(), plant.b_w.ncols(), plant.c.nrows());
    let e = |r, c| Mat::zeros(r, c);
    let (x_tilde, a2, a3, a4, b2, b_w2, c2) =
        (e(0, horizon), e(n, 0), e(0, n), e(0, 0), e(0, mu), e(0, m_w), e(p_z, 0));
    let parts = MixedParts {
        x_plus,
        u,
        x_tilde: &x_tilde,
        a2: &a2,
        a3: &a3,
        a4: &a4,
        b2: &b2,
        b_w1: plant.b_w,
        b_w2: &b_w2,
        c1: plant.c,
        c2: &c2,
        d_w: plant.d_w,
        d: plant.d,
    };
    mixed_performance_lmi(&parts, set, perf, lambda, PerfVars { y1: y, m1: m, y2: None, m2: None })
}
