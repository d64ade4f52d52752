//! Dense primal-dual interior-point method (HKM direction, Mehrotra
//! predictor-corrector, infeasible start) applied to the margin problem
//!
//! ```text
//!   minimize t   s.t.  D_j F_j(x) D_j + m_j I <= t I,   E x = f,
//!                      |x_i| <= B,  t >= -floor
//! ```
//!
//! in the dual standard form `max b'y, C - sum y_i A_i = Z >= 0, E y = f`.
//! The problem is declared feasible as soon as an iterate, projected onto
//! the equalities, satisfies every block with margin; it is declared
//! infeasible only when a primal iterate, repaired into an exact Farkas
//! certificate (or bounded over the variable box), proves `t > 0`.

use nalgebra::Cholesky;

use super::{equilibration, SdpDiagnostics, SdpOutcome, SdpProblem, SdpStatus, Strictness};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Required margin of strict blocks, `lambda_max(D F D) <= -eps_strict`.
    pub eps_strict: f64,
    /// Allowed violation of non-strict blocks.
    pub nonstrict_slack: f64,
    /// Stop early once every block clears its requirement by this much.
    pub target_margin: f64,
    /// Relative residual accepted on linear equalities.
    pub eq_tol: f64,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Box `|x_i| <= var_bound` keeping the problem bounded; infeasibility
    /// verdicts are relative to this box.
    pub var_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_strict: 1e-6,
            nonstrict_slack: 1e-9,
            target_margin: 1e-3,
            eq_tol: 1e-7,
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            max_iter: 120,
            var_bound: 1e6,
        }
    }
}

const FLOOR: f64 = 10.0;
const STEP_FRACTION: f64 = 0.95;
/// Smallest certified positive optimal `t` accepted as infeasibility.
const CERT_TOL: f64 = 1e-9;

type Entries = Vec<(usize, usize, f64)>;

struct DenseBlock {
    size: usize,
    c: Mat,
    /// Coefficient matrix of every y-variable (empty when absent).
    a: Vec<Entries>,
}

/// Diagonal (linear) cone block.
struct LpBlock {
    c: Vec<f64>,
    /// `(row, var, value)` entries.
    a: Vec<(usize, usize, f64)>,
}

struct Standard {
    m: usize,
    dense: Vec<DenseBlock>,
    lp: LpBlock,
    b: Vec<f64>,
    /// Reduced equality rows (orthonormal) and right-hand side.
    e: Mat,
    f: Vector,
}

struct EqualityReduction {
    /// Orthonormal rows spanning the equality row space, over decision scalars.
    basis: Mat,
    rhs: Vector,
}

fn reduce_equalities(problem: &SdpProblem, tol: f64) -> Result<std::result::Result<EqualityReduction, String>> {
    let p = problem.scalar_count();
    let eqs = problem.equalities();
    if eqs.is_empty() {
        return Ok(Ok(EqualityReduction { basis: Mat::zeros(0, p), rhs: Vector::zeros(0) }));
    }
    let mut e = Mat::zeros(eqs.len(), p);
    let mut f = Vector::zeros(eqs.len());
    for (r, eq) in eqs.iter().enumerate() {
        // Row scaling does not change the solution set.
        let scale = eq.coeffs.iter().map(|&(_, c)| c.abs()).fold(0.0, f64::max);
        let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        for &(i, c) in &eq.coeffs {
            e[(r, i)] += c * s;
        }
        f[r] = -eq.constant * s;
    }
    let svd = linalg::svd(&e);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > 1e-10 * smax.max(1e-300)).collect();
    let mut basis = Mat::zeros(keep.len(), p);
    let mut rhs = Vector::zeros(keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_row(k, &svd.v.column(i).transpose());
        rhs[k] = svd.u.column(i).dot(&f) / svd.s[i];
    }
    let x_ls = basis.transpose() * &rhs;
    let resid = (&e * &x_ls - &f).amax();
    if resid > tol * (1.0 + f.amax()) {
        return Ok(Err(format!("linear equalities are inconsistent (least-squares residual {resid:.3e})")));
    }
    Ok(Ok(EqualityReduction { basis, rhs }))
}

fn project(x: &[f64], red: &EqualityReduction) -> Vec<f64> {
    if red.basis.nrows() == 0 {
        return x.to_vec();
    }
    let xv = Vector::from_column_slice(x);
    let corr = red.basis.transpose() * (&red.basis * &xv - &red.rhs);
    (xv - corr).iter().copied().collect()
}

/// Equilibrated blocks with the required margin folded into the constant.
struct ScaledBlock {
    constant: Mat,
    coeffs: Vec<(usize, Entries)>,
    offset: f64,
}

impl ScaledBlock {
    fn evaluate(&self, x: &[f64]) -> Mat {
        let mut f = self.constant.clone();
        for (i, entries) in &self.coeffs {
            let xi = x[*i];
            if xi != 0.0 {
                for &(r, c, v) in entries {
                    f[(r, c)] += xi * v;
                }
            }
        }
        f
    }

    /// `lambda_max(D F D) + m`.
    fn violation(&self, x: &[f64]) -> f64 {
        linalg::max_sym_eigenvalue(&self.evaluate(x)) + self.offset
    }
}

fn scaled_blocks(problem: &SdpProblem, opts: &SolverOptions) -> Vec<ScaledBlock> {
    problem
        .lmis()
        .iter()
        .map(|b| {
            let d = equilibration(&b.constant);
            let constant = super::congruence(&b.constant, &d);
            let coeffs = b
                .coeffs
                .iter()
                .map(|(i, entries)| (*i, entries.iter().map(|&(r, c, v)| (r, c, d[r] * v * d[c])).collect()))
                .collect();
            let offset = match b.strictness {
                Strictness::Strict => opts.eps_strict,
                Strictness::NonStrict => -opts.nonstrict_slack,
            };
            ScaledBlock { constant, coeffs, offset }
        })
        .collect()
}

fn standard_form(problem: &SdpProblem, blocks: &[ScaledBlock], red: &EqualityReduction, opts: &SolverOptions) -> Standard {
    let p = problem.scalar_count();
    let m = p + 1;
    let t = p;
    let dense = blocks
        .iter()
        .map(|blk| {
            let size = blk.constant.nrows();
            let mut c = -&blk.constant;
            for r in 0..size {
                c[(r, r)] -= blk.offset;
            }
            let mut a = vec![Entries::new(); m];
            for (i, entries) in &blk.coeffs {
                a[*i] = entries.clone();
            }
            a[t] = (0..size).map(|r| (r, r, -1.0)).collect();
            DenseBlock { size, c, a }
        })
        .collect();
    let mut lp_c = Vec::with_capacity(2 * p + 1);
    let mut lp_a = Vec::with_capacity(2 * p + 1);
    for i in 0..p {
        lp_a.push((lp_c.len(), i, 1.0));
        lp_c.push(opts.var_bound);
        lp_a.push((lp_c.len(), i, -1.0));
        lp_c.push(opts.var_bound);
    }
    lp_a.push((lp_c.len(), t, -1.0));
    lp_c.push(FLOOR);
    let mut b = vec![0.0; m];
    b[t] = -1.0;
    let mut e = Mat::zeros(red.basis.nrows(), m);
    e.view_mut((0, 0), (red.basis.nrows(), p)).copy_from(&red.basis);
    Standard { m, dense, lp: LpBlock { c: lp_c, a: lp_a }, b, e, f: red.rhs.clone() }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<Mat>,
    z: Vec<Mat>,
    x_lp: Vec<f64>,
    z_lp: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

struct Direction {
    dx: Vec<Mat>,
    dz: Vec<Mat>,
    dx_lp: Vec<f64>,
    dz_lp: Vec<f64>,
    dy: Vec<f64>,
    dw: Vec<f64>,
}

impl Standard {
    fn a_op_dense(&self, y: &[f64]) -> Vec<Mat> {
        self.dense
            .iter()
            .map(|blk| {
                let mut out = Mat::zeros(blk.size, blk.size);
                for (i, entries) in blk.a.iter().enumerate() {
                    let yi = y[i];
                    if yi != 0.0 {
                        for &(r, c, v) in entries {
                            out[(r, c)] += yi * v;
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn a_op_lp(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.lp.c.len()];
        for &(r, i, v) in &self.lp.a {
            out[r] += y[i] * v;
        }
        out
    }

    fn a_adj(&self, x: &[Mat], x_lp: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, xk) in self.dense.iter().zip(x) {
            for (i, entries) in blk.a.iter().enumerate() {
                out[i] += entries.iter().map(|&(r, c, v)| v * xk[(r, c)]).sum::<f64>();
            }
        }
        for &(r, i, v) in &self.lp.a {
            out[i] += v * x_lp[r];
        }
        out
    }

    fn total_dim(&self) -> f64 {
        (self.dense.iter().map(|b| b.size).sum::<usize>() + self.lp.c.len()) as f64
    }

    /// Schur complement `H_ij = sum_k tr(A_i X A_j Z^-1)` plus the linear
    /// cone contribution.
    fn schur_matrix(&self, it: &Iterate, zi: &[Mat]) -> Mat {
        let m = self.m;
        let mut h = Mat::zeros(m, m);
        for ((blk, xk), zik) in self.dense.iter().zip(&it.x).zip(zi) {
            let s = blk.size;
            let mut xa = Mat::zeros(s, s);
            let mut cols: Vec<usize> = Vec::with_capacity(s);
            let mut g = Mat::zeros(s, s);
            for i in 0..m {
                let ai = &blk.a[i];
                if ai.is_empty() {
                    continue;
                }
                cols.clear();
                for &(r, c, v) in ai {
                    if !cols.contains(&c) {
                        cols.push(c);
                        xa.column_mut(c).fill(0.0);
                    }
                    xa.column_mut(c).axpy(v, &xk.column(r), 1.0);
                }
                g.fill(0.0);
                for &c in &cols {
                    g.ger(1.0, &xa.column(c), &zik.row(c).transpose(), 1.0);
                }
                for j in i..m {
                    let aj = &blk.a[j];
                    if aj.is_empty() {
                        continue;
                    }
                    let v: f64 = aj.iter().map(|&(r, c, v)| v * g[(r, c)]).sum();
                    h[(i, j)] += v;
                }
            }
        }
        // linear cone: entries grouped per row
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.lp.c.len()];
        for &(r, i, v) in &self.lp.a {
            by_row[r].push((i, v));
        }
        for (r, entries) in by_row.iter().enumerate() {
            let d = it.x_lp[r] / it.z_lp[r];
            for &(i, vi) in entries {
                for &(j, vj) in entries {
                    if j >= i {
                        h[(i, j)] += d * vi * vj;
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        h
    }
}

fn max_step_dense(x: &Mat, dx: &Mat) -> Option<f64> {
    let chol = Cholesky::new(x.clone())?;
    let l = chol.l();
    let t1 = l.solve_lower_triangular(dx)?;
    let m = l.solve_lower_triangular(&t1.transpose())?;
    let lmin = linalg::min_sym_eigenvalue(&m);
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

fn max_step_lp(x: &[f64], dx: &[f64]) -> f64 {
    x.iter().zip(dx).filter(|(_, &d)| d < 0.0).map(|(&v, &d)| -v / d).fold(f64::INFINITY, f64::min)
}

struct KktFactor {
    chol: Cholesky<f64, nalgebra::Dyn>,
    he: Mat,
    se: Option<Cholesky<f64, nalgebra::Dyn>>,
}

fn factor_kkt(h: Mat, e: &Mat) -> Option<KktFactor> {
    let m = h.nrows();
    let scale = (0..m).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..6 {
        let mut hr = h.clone();
        for i in 0..m {
            hr[(i, i)] += reg + 1e-15 * scale;
        }
        if let Some(chol) = Cholesky::new(hr) {
            let he = chol.solve(&e.transpose());
            let se = if e.nrows() > 0 { Some(Cholesky::new(e * &he)?) } else { None };
            return Some(KktFactor { chol, he, se });
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    None
}

fn solve_kkt(f: &KktFactor, e: &Mat, g: &Vector, re: &Vector) -> (Vector, Vector) {
    let hg = f.chol.solve(g);
    match &f.se {
        Some(se) => {
            let dw = se.solve(&(e * &hg - re));
            let dy = &hg - &f.he * &dw;
            (dy, dw)
        }
        None => (hg, Vector::zeros(0)),
    }
}

fn sym_in_place(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Box-free infeasibility certificate assembled from the primal iterate.
///
/// A dense `X >= 0` with `tr X = 1` whose coefficient vector
/// `a_i = <A_i, X>` (decision scalars only) lies in the row space of the
/// equalities proves `t >= f' E a - <C, X>` for every `y` with `E y = f`.
/// The iterate is projected onto these linear conditions and, if that
/// costs definiteness, blended with the projected identity.
struct Farkas {
    /// `G_j` per dense block: null-space combinations of the `A_i`, then the
    /// identity for the trace normalization.
    dirs: Vec<Vec<Mat>>,
    gram_pinv: Mat,
    /// Projected identity and its smallest eigenvalue.
    center: Vec<Mat>,
    center_min: f64,
}

impl Farkas {
    fn new(std: &Standard, p: usize) -> Self {
        let ep = std.e.columns(0, p).into_owned();
        let null = if ep.nrows() == 0 { Mat::identity(p, p) } else { linalg::kernel_basis(&ep, 1e-10) };
        let mut dirs: Vec<Vec<Mat>> = Vec::with_capacity(null.ncols() + 1);
        for j in 0..null.ncols() {
            let mats = std
                .dense
                .iter()
                .map(|blk| {
                    let mut g = Mat::zeros(blk.size, blk.size);
                    for i in 0..p {
                        let c = null[(i, j)];
                        if c != 0.0 {
                            for &(r, cc, v) in &blk.a[i] {
                                g[(r, cc)] += c * v;
                            }
                        }
                    }
                    g
                })
                .collect();
            dirs.push(mats);
        }
        dirs.push(std.dense.iter().map(|b| Mat::identity(b.size, b.size)).collect());
        let k = dirs.len();
        let mut gram = Mat::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v: f64 = dirs[a].iter().zip(&dirs[b]).map(|(x, y)| x.dot(y)).sum();
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let mut f = Self { dirs, gram_pinv: linalg::pinv(&gram, 1e-14), center: Vec::new(), center_min: f64::NEG_INFINITY };
        let dim: f64 = std.dense.iter().map(|b| b.size as f64).sum();
        let id: Vec<Mat> = std.dense.iter().map(|b| Mat::identity(b.size, b.size) / dim).collect();
        if let Some(c) = f.project(id) {
            f.center_min = c.iter().map(linalg::min_sym_eigenvalue).fold(f64::INFINITY, f64::min);
            f.center = c;
        }
        f
    }

    fn residual(&self, xs: &[Mat]) -> Vector {
        let k = self.dirs.len();
        Vector::from_iterator(
            k,
            (0..k).map(|j| {
                let v: f64 = self.dirs[j].iter().zip(xs).map(|(g, m)| g.dot(m)).sum();
                if j + 1 == k { v - 1.0 } else { v }
            }),
        )
    }

    /// Least-norm correction onto the linear conditions, refined twice.
    fn project(&self, mut xs: Vec<Mat>) -> Option<Vec<Mat>> {
        for _ in 0..3 {
            let c = &self.gram_pinv * self.residual(&xs);
            for (j, dir) in self.dirs.iter().enumerate() {
                for (m, g) in xs.iter_mut().zip(dir) {
                    *m -= g * c[j];
                }
            }
        }
        for m in xs.iter_mut() {
            sym_in_place(m);
        }
        Some(xs)
    }

    /// Lower bound on the optimal `t`; the leftover null-space residual is
    /// charged against the variable box.
    fn bound(&self, std: &Standard, p: usize, x: &[Mat], var_bound: f64) -> Option<f64> {
        if !(self.center_min > 0.0) {
            return None;
        }
        let tr: f64 = x.iter().map(|m| m.trace()).sum();
        if !(tr > 0.0) {
            return None;
        }
        let mut xs = self.project(x.iter().map(|m| m / tr).collect())?;
        let e = xs.iter().map(linalg::min_sym_eigenvalue).fold(f64::INFINITY, f64::min);
        if e < 0.0 {
            let theta = (1.01 * -e / (self.center_min - e)).min(1.0);
            for (m, c) in xs.iter_mut().zip(&self.center) {
                *m = &*m * (1.0 - theta) + c * theta;
            }
        }
        if xs.iter().any(|m| linalg::min_sym_eigenvalue(m) < 0.0) {
            return None;
        }
        let tr: f64 = xs.iter().map(|m| m.trace()).sum();
        for m in xs.iter_mut() {
            *m /= tr;
        }
        let k = self.dirs.len();
        let leftover = self.residual(&xs).rows(0, k - 1).norm() * var_bound * (p as f64).sqrt();
        let a = std.a_adj(&xs, &vec![0.0; std.lp.c.len()]);
        let a_p = Vector::from_column_slice(&a[..p]);
        let fea = if std.e.nrows() == 0 { 0.0 } else { std.f.dot(&(std.e.columns(0, p) * &a_p)) };
        let cx: f64 = std.dense.iter().zip(&xs).map(|(b, m)| b.c.dot(m)).sum();
        Some(fea - cx - leftover)
    }
}

struct Residuals {
    rp: Vec<f64>,
    rd: Vec<Mat>,
    rd_lp: Vec<f64>,
    re: Vector,
}

pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpOutcome> {
    if !(opts.eps_strict >= 0.0 && opts.var_bound > 0.0 && opts.max_iter > 0) {
        return Err(Error::Malformed("invalid solver options".into()));
    }
    let p = problem.scalar_count();
    let mut diag = SdpDiagnostics { best_margin: f64::INFINITY, ..Default::default() };
    let red = match reduce_equalities(problem, opts.eq_tol)? {
        Ok(r) => r,
        Err(msg) => {
            diag.message = msg;
            return Ok(SdpOutcome { status: SdpStatus::Infeasible, values: None, diagnostics: diag });
        }
    };
    let blocks = scaled_blocks(problem, opts);
    let violation = |x: &[f64]| blocks.iter().map(|b| b.violation(x)).fold(f64::NEG_INFINITY, f64::max);
    let finish = |x: Vec<f64>, mut diag: SdpDiagnostics| {
        diag.equality_residual = problem.check(&x).equality_residual;
        SdpOutcome { status: SdpStatus::Feasible, values: Some(x), diagnostics: diag }
    };

    if blocks.is_empty() {
        let x = project(&vec![0.0; p], &red);
        diag.best_margin = f64::NEG_INFINITY;
        diag.message = "no matrix inequalities; equalities solved directly".into();
        return Ok(finish(x, diag));
    }

    let std = standard_form(problem, &blocks, &red, opts);
    let m = std.m;
    let t_index = p;
    let n_total = std.total_dim();

    // infeasible start
    let x0: Vec<Mat> = std.dense.iter().map(|b| Mat::identity(b.size, b.size)).collect();
    let z0: Vec<Mat> = std
        .dense
        .iter()
        .map(|b| Mat::identity(b.size, b.size) * (1.0 + b.c.amax()).max(1.0))
        .collect();
    let mu0 = std.dense.iter().zip(&z0).map(|(b, z)| z[(0, 0)] * b.size as f64).sum::<f64>()
        / std.dense.iter().map(|b| b.size).sum::<usize>().max(1) as f64;
    let z_lp0 = std.lp.c.clone();
    let x_lp0 = z_lp0.iter().map(|&z| mu0 / z).collect();
    let mut it = Iterate { x: x0, z: z0, x_lp: x_lp0, z_lp: z_lp0, y: vec![0.0; m], w: vec![0.0; std.e.nrows()] };

    let mut best: Option<Vec<f64>> = None;
    let mut farkas: Option<Farkas> = None;
    let mut converged = false;
    let b_norm = std.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_norm = std.dense.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();

    for iter in 0..opts.max_iter {
        diag.iterations = iter;

        // certificate candidate from the current dual point
        let cand = project(&it.y[..p], &red);
        let v = violation(&cand);
        if v < diag.best_margin {
            diag.best_margin = v;
            best = Some(cand);
        }
        if diag.best_margin <= -opts.target_margin {
            diag.message = "margin target reached".into();
            return Ok(finish(best.expect("recorded"), diag));
        }

        let zchol: Option<Vec<Mat>> = it.z.iter().map(|z| Cholesky::new(z.clone()).map(|c| c.inverse())).collect();
        let Some(zi) = zchol else {
            diag.message = "dual slack lost definiteness".into();
            break;
        };

        // residuals
        let mut rp = std.a_adj(&it.x, &it.x_lp);
        let etw = std.e.transpose() * Vector::from_column_slice(&it.w);
        for i in 0..m {
            rp[i] = std.b[i] - rp[i] - etw[i];
        }
        let ay = std.a_op_dense(&it.y);
        let rd: Vec<Mat> = std.dense.iter().zip(&ay).zip(&it.z).map(|((b, a), z)| &b.c - a - z).collect();
        let ay_lp = std.a_op_lp(&it.y);
        let rd_lp: Vec<f64> = (0..std.lp.c.len()).map(|r| std.lp.c[r] - ay_lp[r] - it.z_lp[r]).collect();
        let re = &std.f - &std.e * Vector::from_column_slice(&it.y);
        let res = Residuals { rp, rd, rd_lp, re };

        let xz: f64 = it.x.iter().zip(&it.z).map(|(x, z)| x.dot(z)).sum::<f64>()
            + it.x_lp.iter().zip(&it.z_lp).map(|(x, z)| x * z).sum::<f64>();
        let mu = xz / n_total;
        let pobj: f64 = std.dense.iter().zip(&it.x).map(|(b, x)| b.c.dot(x)).sum::<f64>()
            + std.lp.c.iter().zip(&it.x_lp).map(|(c, x)| c * x).sum::<f64>()
            + std.f.iter().zip(&it.w).map(|(f, w)| f * w).sum::<f64>();
        let dobj: f64 = std.b.iter().zip(&it.y).map(|(b, y)| b * y).sum();
        let pinf = res.rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + b_norm);
        let dinf = (res.rd.iter().map(|r| r.norm_squared()).sum::<f64>()
            + res.rd_lp.iter().map(|v| v * v).sum::<f64>())
        .sqrt()
            / (1.0 + c_norm);
        let einf = res.re.amax() / (1.0 + std.f.amax());
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        diag.primal_infeasibility = pinf;
        diag.dual_infeasibility = dinf;
        diag.gap = gap;

        // Weak duality inside the box: any y with E y = f, |x_i| <= B and
        // t in [-floor, 0] has -t <= pobj + |y|'|rp|.
        let slack = opts.var_bound * res.rp[..p].iter().map(|v| v.abs()).sum::<f64>() + FLOOR * res.rp[t_index].abs();
        if pobj + slack < -1e-10 {
            diag.message = format!("primal bound certifies margin >= {:.3e}", -(pobj + slack));
            return Ok(SdpOutcome { status: SdpStatus::Infeasible, values: None, diagnostics: diag });
        }
        if pobj < 0.0 {
            let farkas = farkas.get_or_insert_with(|| Farkas::new(&std, p));
            if let Some(lb) = farkas.bound(&std, p, &it.x, opts.var_bound) {
                if lb > CERT_TOL {
                    diag.message = format!("dual certificate bounds margin >= {lb:.3e}");
                    return Ok(SdpOutcome { status: SdpStatus::Infeasible, values: None, diagnostics: diag });
                }
            }
        }
        if gap < opts.gap_tol && pinf < opts.feas_tol && dinf < opts.feas_tol && einf < opts.feas_tol {
            converged = true;
            break;
        }

        let h = std.schur_matrix(&it, &zi);
        let Some(kkt) = factor_kkt(h, &std.e) else {
            diag.message = "Schur complement factorization failed".into();
            break;
        };

        let direction = |sigma: f64, corr: Option<(&[Mat], &[f64])>| -> Direction {
            // T = sigma mu Z^-1 - X - X Rd Z^-1 - corr
            let t_dense: Vec<Mat> = (0..std.dense.len())
                .map(|k| {
                    let mut t = &zi[k] * (sigma * mu) - &it.x[k] - &it.x[k] * &res.rd[k] * &zi[k];
                    if let Some((c, _)) = corr {
                        t -= &c[k];
                    }
                    t
                })
                .collect();
            let t_lp: Vec<f64> = (0..std.lp.c.len())
                .map(|r| {
                    let mut t = sigma * mu / it.z_lp[r] - it.x_lp[r] - it.x_lp[r] * res.rd_lp[r] / it.z_lp[r];
                    if let Some((_, c)) = corr {
                        t -= c[r];
                    }
                    t
                })
                .collect();
            let adj = std.a_adj(&t_dense, &t_lp);
            let g = Vector::from_iterator(m, (0..m).map(|i| res.rp[i] - adj[i]));
            let (dy, dw) = solve_kkt(&kkt, &std.e, &g, &res.re);
            let dy: Vec<f64> = dy.iter().copied().collect();
            let ady = std.a_op_dense(&dy);
            let dz: Vec<Mat> = res.rd.iter().zip(&ady).map(|(r, a)| r - a).collect();
            let dx: Vec<Mat> = (0..std.dense.len())
                .map(|k| {
                    let mut d = &zi[k] * (sigma * mu) - &it.x[k] - &it.x[k] * &dz[k] * &zi[k];
                    if let Some((c, _)) = corr {
                        d -= &c[k];
                    }
                    sym_in_place(&mut d);
                    d
                })
                .collect();
            let ady_lp = std.a_op_lp(&dy);
            let dz_lp: Vec<f64> = (0..std.lp.c.len()).map(|r| res.rd_lp[r] - ady_lp[r]).collect();
            let dx_lp: Vec<f64> = (0..std.lp.c.len())
                .map(|r| {
                    let mut d = sigma * mu / it.z_lp[r] - it.x_lp[r] - it.x_lp[r] * dz_lp[r] / it.z_lp[r];
                    if let Some((_, c)) = corr {
                        d -= c[r];
                    }
                    d
                })
                .collect();
            Direction { dx, dz, dx_lp, dz_lp, dy, dw: dw.iter().copied().collect() }
        };

        let steps = |d: &Direction| -> Option<(f64, f64)> {
            let mut ap = max_step_lp(&it.x_lp, &d.dx_lp);
            let mut ad = max_step_lp(&it.z_lp, &d.dz_lp);
            for k in 0..std.dense.len() {
                ap = ap.min(max_step_dense(&it.x[k], &d.dx[k])?);
                ad = ad.min(max_step_dense(&it.z[k], &d.dz[k])?);
            }
            Some((ap, ad))
        };

        // predictor
        let pred = direction(0.0, None);
        let Some((ap, ad)) = steps(&pred) else {
            diag.message = "primal iterate lost definiteness".into();
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let xz_aff: f64 = (0..std.dense.len())
            .map(|k| (&it.x[k] + &pred.dx[k] * ap).dot(&(&it.z[k] + &pred.dz[k] * ad)))
            .sum::<f64>()
            + (0..std.lp.c.len())
                .map(|r| (it.x_lp[r] + ap * pred.dx_lp[r]) * (it.z_lp[r] + ad * pred.dz_lp[r]))
                .sum::<f64>();
        let sigma = ((xz_aff / n_total) / mu).clamp(0.0, 1.0).powi(3);

        // corrector with the second-order term dX dZ Z^-1
        let corr_dense: Vec<Mat> = (0..std.dense.len()).map(|k| &pred.dx[k] * &pred.dz[k] * &zi[k]).collect();
        let corr_lp: Vec<f64> = (0..std.lp.c.len()).map(|r| pred.dx_lp[r] * pred.dz_lp[r] / it.z_lp[r]).collect();
        let dir = direction(sigma, Some((&corr_dense, &corr_lp)));
        let Some((ap, ad)) = steps(&dir) else {
            diag.message = "primal iterate lost definiteness".into();
            break;
        };
        let mut ap = (STEP_FRACTION * ap).min(1.0);
        let mut ad = (STEP_FRACTION * ad).min(1.0);
        // Eigenvalue-based step bounds lose accuracy on ill-conditioned
        // iterates; back off until the new points factor.
        let factors = |x: &[Mat], dx: &[Mat], a: f64| {
            x.iter().zip(dx).all(|(x, d)| {
                let mut n = x + d * a;
                sym_in_place(&mut n);
                Cholesky::new(n).is_some()
            })
        };
        let mut tries = 0;
        while !factors(&it.x, &dir.dx, ap) && tries < 40 {
            ap *= 0.7;
            tries += 1;
        }
        tries = 0;
        while !factors(&it.z, &dir.dz, ad) && tries < 40 {
            ad *= 0.7;
            tries += 1;
        }

        for k in 0..std.dense.len() {
            it.x[k] += &dir.dx[k] * ap;
            it.z[k] += &dir.dz[k] * ad;
            sym_in_place(&mut it.x[k]);
            sym_in_place(&mut it.z[k]);
        }
        for r in 0..std.lp.c.len() {
            it.x_lp[r] += ap * dir.dx_lp[r];
            it.z_lp[r] += ad * dir.dz_lp[r];
        }
        for i in 0..m {
            it.y[i] += ad * dir.dy[i];
        }
        for (w, dw) in it.w.iter_mut().zip(&dir.dw) {
            *w += ap * dw;
        }
        if !it.y.iter().all(|v| v.is_finite()) {
            diag.message = "numerical breakdown".into();
            break;
        }
    }

    let cand = project(&it.y[..p], &red);
    let v = violation(&cand);
    if v < diag.best_margin {
        diag.best_margin = v;
        best = Some(cand);
    }
    if diag.best_margin <= 0.0 {
        if diag.message.is_empty() {
            diag.message = if converged { "converged".into() } else { "iteration limit".into() };
        }
        return Ok(finish(best.expect("recorded"), diag));
    }
    if diag.message.is_empty() {
        diag.message = if converged {
            "converged with margin too close to zero to decide".into()
        } else {
            "iteration limit reached".into()
        };
    }
    diag.message = format!(
        "{} (best margin {:.3e}, gap {:.1e}, primal {:.1e}, dual {:.1e})",
        diag.message, diag.best_margin, diag.gap, diag.primal_infeasibility, diag.dual_infeasibility
    );
    Ok(SdpOutcome { status: SdpStatus::Inconclusive, values: None, diagnostics: diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{EqBuilder, LmiBuilder};

    fn one() -> Mat {
        Mat::identity(1, 1)
    }

    #[test]
    fn free_scalar_below_minus_eps() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        let mut b = LmiBuilder::new(&[1]);
        b.term(0, 0, &one(), x, &one());
        p.add_lmi(b.build("x<0", Strictness::Strict).unwrap()).unwrap();
        let out = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SdpStatus::Feasible, "{:?}", out.diagnostics);
        assert!(out.values.unwrap()[0] <= -1e-6);
    }

    #[test]
    fn contradiction_is_infeasible() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        let mut b = LmiBuilder::new(&[1]);
        b.term(0, 0, &one(), x, &one()).constant(0, 0, &one());
        p.add_lmi(b.build("x+1<=0", Strictness::NonStrict).unwrap()).unwrap();
        let mut e = EqBuilder::new(1, 1);
        e.term(&one(), x, &one());
        p.add_equalities(e.build("x=0").unwrap()).unwrap();
        let out = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SdpStatus::Infeasible, "{:?}", out.diagnostics);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        let mut b = LmiBuilder::new(&[1]);
        b.term(0, 0, &one(), x, &one());
        p.add_lmi(b.build("x<0", Strictness::Strict).unwrap()).unwrap();
        let mut e1 = EqBuilder::new(1, 1);
        e1.term(&one(), x, &one()).constant(&one());
        let mut e2 = EqBuilder::new(1, 1);
        e2.term(&one(), x, &one()).constant(&-one());
        p.add_equalities(e1.build("x=-1").unwrap()).unwrap();
        p.add_equalities(e2.build("x=1").unwrap()).unwrap();
        let out = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SdpStatus::Infeasible);
    }
}
