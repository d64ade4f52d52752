//! Linear matrix inequality feasibility problems.
//!
//! A problem has matrix and scalar decision variables, affine symmetric
//! blocks `F_j(x)` that must satisfy `F_j(x) <= -eps I` (strict) or
//! `F_j(x) <= 0` (non-strict), and affine equalities. Blocks are assembled
//! with [`LmiBuilder`] from terms of the form `L V R` so that block
//! matrices read like the math they implement.
//!
//! Strictness is always measured after a diagonal congruence
//! (equilibration) `D F D` with `D_rr = |F0_rr|^{-1/2}` taken from the
//! constant part; congruence with a positive diagonal does not change
//! feasibility but makes one margin meaningful across blocks whose
//! entries differ by many orders of magnitude.

mod dump;
pub mod schur;
mod solver;

use std::collections::BTreeMap;

pub use dump::dump_triplets;
pub use solver::{solve, SolverOptions};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric(usize),
    Rect(usize, usize),
    Scalar,
}

impl VarKind {
    pub fn scalar_count(&self) -> usize {
        match *self {
            VarKind::Symmetric(r) => r * (r + 1) / 2,
            VarKind::Rect(r, c) => r * c,
            VarKind::Scalar => 1,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(r) => (r, r),
            VarKind::Rect(r, c) => (r, c),
            VarKind::Scalar => (1, 1),
        }
    }
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    offset: usize,
    kind: VarKind,
}

impl Var {
    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.kind.shape()
    }

    /// Scalar offset of this variable in the stacked decision vector.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Position of the `(a, b)` entry's scalar inside this variable and the
    /// multiplicity with which that scalar appears at `(a, b)`.
    fn basis(&self) -> Vec<(usize, usize, usize)> {
        match self.kind {
            VarKind::Symmetric(r) => {
                let mut out = Vec::with_capacity(r * (r + 1) / 2);
                for a in 0..r {
                    for b in a..r {
                        out.push((out.len(), a, b));
                    }
                }
                out
            }
            VarKind::Rect(r, c) => (0..r * c).map(|s| (s, s / c, s % c)).collect(),
            VarKind::Scalar => vec![(0, 0, 0)],
        }
    }

    /// Matrix value of this variable from the stacked scalar vector.
    pub fn value(&self, x: &[f64]) -> Mat {
        let (r, c) = self.shape();
        let mut m = Mat::zeros(r, c);
        for (s, a, b) in self.basis() {
            let v = x[self.offset + s];
            m[(a, b)] = v;
            if matches!(self.kind, VarKind::Symmetric(_)) {
                m[(b, a)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct VarDecl {
    pub name: String,
    pub var: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// `F(x) <= -eps_strict I` after equilibration.
    Strict,
    /// `F(x) <= 0` up to a tiny slack.
    NonStrict,
}

/// Affine symmetric matrix `F(x) = F0 + sum_i x_i F_i`; coefficient
/// matrices are stored sparsely with both triangles present.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub size: usize,
    pub constant: Mat,
    pub coeffs: Vec<(usize, Vec<(usize, usize, f64)>)>,
    pub strictness: Strictness,
}

impl LmiBlock {
    pub fn evaluate(&self, x: &[f64]) -> Mat {
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

    pub fn equilibration(&self) -> Vector {
        equilibration(&self.constant)
    }
}

/// Diagonal scaling `d_r = |F0_rr|^{-1/2}` (1 where the constant diagonal
/// vanishes).
pub fn equilibration(constant: &Mat) -> Vector {
    Vector::from_iterator(
        constant.nrows(),
        (0..constant.nrows()).map(|r| {
            let c = constant[(r, r)].abs();
            if c > 0.0 && c.is_finite() {
                1.0 / c.sqrt()
            } else {
                1.0
            }
        }),
    )
}

/// `D F D` for a diagonal `D`.
pub fn congruence(f: &Mat, d: &Vector) -> Mat {
    Mat::from_fn(f.nrows(), f.ncols(), |r, c| d[r] * f[(r, c)] * d[c])
}

/// Largest eigenvalue of the equilibrated matrix, the margin convention used
/// everywhere strictness is checked.
pub fn equilibrated_max_eigenvalue(f: &Mat, constant: &Mat) -> f64 {
    linalg::max_sym_eigenvalue(&congruence(f, &equilibration(constant)))
}

/// `sum_i coeffs_i x_i + constant = 0`.
#[derive(Debug, Clone)]
pub struct LinearEquality {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearEquality {
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn scale(&self) -> f64 {
        self.coeffs.iter().map(|&(_, c)| c.abs()).fold(self.constant.abs(), f64::max)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    vars: Vec<VarDecl>,
    n_scalars: usize,
    lmis: Vec<LmiBlock>,
    equalities: Vec<LinearEquality>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> Var {
        let var = Var { index: self.vars.len(), offset: self.n_scalars, kind };
        self.n_scalars += kind.scalar_count();
        self.vars.push(VarDecl { name: name.to_string(), var });
        var
    }

    pub fn symmetric(&mut self, name: &str, size: usize) -> Var {
        self.declare(name, VarKind::Symmetric(size))
    }

    pub fn rect(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.declare(name, VarKind::Rect(rows, cols))
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, VarKind::Scalar)
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }
    pub fn lmis(&self) -> &[LmiBlock] {
        &self.lmis
    }
    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }
    pub fn scalar_count(&self) -> usize {
        self.n_scalars
    }

    fn owns(&self, var: &Var) -> bool {
        self.vars.get(var.index).is_some_and(|d| d.var == *var)
    }

    fn check_indices<'a>(&self, mut idx: impl Iterator<Item = &'a usize>) -> Result<()> {
        match idx.find(|&&i| i >= self.n_scalars) {
            Some(i) => Err(Error::Malformed(format!("scalar index {i} is not a declared variable"))),
            None => Ok(()),
        }
    }

    pub fn add_lmi(&mut self, block: LmiBlock) -> Result<()> {
        if block.constant.shape() != (block.size, block.size) {
            return Err(Error::Malformed(format!("block {} has a misshaped constant", block.name)));
        }
        if (&block.constant - block.constant.transpose()).amax() > 1e-9 * block.constant.amax().max(1.0) {
            return Err(Error::Malformed(format!("block {} is not symmetric", block.name)));
        }
        self.check_indices(block.coeffs.iter().map(|(i, _)| i))?;
        self.lmis.push(block);
        Ok(())
    }

    pub fn add_equalities(&mut self, eqs: Vec<LinearEquality>) -> Result<()> {
        self.check_indices(eqs.iter().flat_map(|e| e.coeffs.iter().map(|(i, _)| i)))?;
        self.equalities.extend(eqs);
        Ok(())
    }

    /// Matrix value of `var` in a solution vector.
    pub fn value(&self, var: &Var, x: &[f64]) -> Result<Mat> {
        if !self.owns(var) || x.len() != self.n_scalars {
            return Err(Error::Malformed("variable or solution vector does not belong to this problem".into()));
        }
        Ok(var.value(x))
    }

    /// Independent re-substitution of a candidate point.
    pub fn check(&self, x: &[f64]) -> Certificate {
        let block_margins = self
            .lmis
            .iter()
            .map(|b| equilibrated_max_eigenvalue(&b.evaluate(x), &b.constant))
            .collect();
        let equality_residual = self
            .equalities
            .iter()
            .map(|e| e.residual(x).abs() / (1.0 + e.scale()))
            .fold(0.0, f64::max);
        Certificate { block_margins, equality_residual }
    }
}

/// Re-substitution result: equilibrated largest eigenvalue per LMI block and
/// worst scaled equality residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub block_margins: Vec<f64>,
    pub equality_residual: f64,
}

impl Certificate {
    pub fn worst_margin(&self) -> f64 {
        self.block_margins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpDiagnostics {
    pub iterations: usize,
    /// Best value of `max_j (lambda_max(D F_j D) + required margin_j)`.
    pub best_margin: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
    pub equality_residual: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpOutcome {
    pub status: SdpStatus,
    pub values: Option<Vec<f64>>,
    pub diagnostics: SdpDiagnostics,
}

impl SdpOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SdpStatus::Feasible
    }

    pub fn value(&self, var: &Var) -> Option<Mat> {
        self.values.as_ref().map(|x| var.value(x))
    }
}

type Accum = BTreeMap<usize, BTreeMap<(usize, usize), f64>>;

fn coefficient(left: &Mat, a: usize, right: &Mat, b: usize) -> Mat {
    left.column(a) * right.row(b)
}

/// Coefficient matrices of `L V R` (or `L V' R`) for each scalar of `var`.
fn term_coefficients(left: &Mat, var: &Var, right: &Mat, transposed: bool) -> Result<Vec<(usize, Mat)>> {
    let (vr, vc) = if transposed {
        let (r, c) = var.shape();
        (c, r)
    } else {
        var.shape()
    };
    if left.ncols() != vr || right.nrows() != vc {
        return Err(Error::Dimension(format!(
            "term L{:?} V{:?} R{:?} does not conform",
            left.shape(),
            (vr, vc),
            right.shape()
        )));
    }
    let sym = matches!(var.kind, VarKind::Symmetric(_));
    Ok(var
        .basis()
        .into_iter()
        .map(|(s, a, b)| {
            let (a, b) = if transposed { (b, a) } else { (a, b) };
            let mut m = coefficient(left, a, right, b);
            if sym && a != b {
                m += coefficient(left, b, right, a);
            }
            (var.offset + s, m)
        })
        .collect())
}

/// Assembles one symmetric LMI block from a grid of sub-blocks.
///
/// Off-diagonal contributions at `(i, j)` are mirrored to `(j, i)`; on a
/// diagonal sub-block the symmetric part of the contribution is added.
#[derive(Debug, Clone)]
pub struct LmiBuilder {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    constant: Mat,
    coeffs: Accum,
    error: Option<Error>,
}

impl LmiBuilder {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { sizes: sizes.to_vec(), offsets, constant: Mat::zeros(acc, acc), coeffs: Accum::new(), error: None }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    fn fail(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn check_shape(&mut self, bi: usize, bj: usize, shape: (usize, usize)) -> bool {
        if bi >= self.sizes.len() || bj >= self.sizes.len() {
            self.fail(Error::Dimension(format!("block index ({bi}, {bj}) out of range")));
            return false;
        }
        if shape != (self.sizes[bi], self.sizes[bj]) {
            self.fail(Error::Dimension(format!(
                "block ({bi}, {bj}) expects {}x{}, got {}x{}",
                self.sizes[bi], self.sizes[bj], shape.0, shape.1
            )));
            return false;
        }
        true
    }

    fn scatter(&self, bi: usize, bj: usize, m: &Mat, mut put: impl FnMut(usize, usize, f64)) {
        let (oi, oj) = (self.offsets[bi], self.offsets[bj]);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v == 0.0 {
                    continue;
                }
                if bi == bj {
                    put(oi + r, oj + c, 0.5 * v);
                    put(oj + c, oi + r, 0.5 * v);
                } else {
                    put(oi + r, oj + c, v);
                    put(oj + c, oi + r, v);
                }
            }
        }
    }

    pub fn constant(&mut self, bi: usize, bj: usize, m: &Mat) -> &mut Self {
        if self.check_shape(bi, bj, m.shape()) {
            let mut acc = std::mem::replace(&mut self.constant, Mat::zeros(0, 0));
            self.scatter(bi, bj, m, |r, c, v| acc[(r, c)] += v);
            self.constant = acc;
        }
        self
    }

    fn add_coefficients(&mut self, bi: usize, bj: usize, coeffs: Vec<(usize, Mat)>) {
        let mut acc = std::mem::take(&mut self.coeffs);
        for (i, m) in coeffs {
            let entry = acc.entry(i).or_default();
            self.scatter(bi, bj, &m, |r, c, v| *entry.entry((r, c)).or_insert(0.0) += v);
        }
        self.coeffs = acc;
    }

    fn add_term(&mut self, bi: usize, bj: usize, left: &Mat, var: Var, right: &Mat, transposed: bool) -> &mut Self {
        match term_coefficients(left, &var, right, transposed) {
            Ok(coeffs) => {
                let shape = (left.nrows(), right.ncols());
                if self.check_shape(bi, bj, shape) {
                    self.add_coefficients(bi, bj, coeffs);
                }
            }
            Err(e) => self.fail(e),
        }
        self
    }

    /// Block `(bi, bj) += L V R`.
    pub fn term(&mut self, bi: usize, bj: usize, left: &Mat, var: Var, right: &Mat) -> &mut Self {
        self.add_term(bi, bj, left, var, right, false)
    }

    /// Block `(bi, bj) += L V' R`.
    pub fn term_t(&mut self, bi: usize, bj: usize, left: &Mat, var: Var, right: &Mat) -> &mut Self {
        self.add_term(bi, bj, left, var, right, true)
    }

    pub fn build(self, name: &str, strictness: Strictness) -> Result<LmiBlock> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let size = self.constant.nrows();
        let coeffs = self
            .coeffs
            .into_iter()
            .map(|(i, entries)| (i, entries.into_iter().filter(|&(_, v)| v != 0.0).map(|((r, c), v)| (r, c, v)).collect::<Vec<_>>()))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        Ok(LmiBlock { name: name.to_string(), size, constant: self.constant, coeffs, strictness })
    }
}

/// Assembles the scalar equalities `sum of terms + constant = 0` for an
/// affine matrix expression.
#[derive(Debug, Clone)]
pub struct EqBuilder {
    rows: usize,
    cols: usize,
    constant: Mat,
    coeffs: Vec<BTreeMap<usize, f64>>,
    error: Option<Error>,
}

impl EqBuilder {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, constant: Mat::zeros(rows, cols), coeffs: vec![BTreeMap::new(); rows * cols], error: None }
    }

    pub fn constant(&mut self, m: &Mat) -> &mut Self {
        if m.shape() != (self.rows, self.cols) {
            self.error.get_or_insert(Error::Dimension("equality constant shape".into()));
        } else {
            self.constant += m;
        }
        self
    }

    fn add_term(&mut self, left: &Mat, var: Var, right: &Mat, transposed: bool) -> &mut Self {
        match term_coefficients(left, &var, right, transposed) {
            Ok(coeffs) if (left.nrows(), right.ncols()) == (self.rows, self.cols) => {
                for (i, m) in coeffs {
                    for r in 0..self.rows {
                        for c in 0..self.cols {
                            let v = m[(r, c)];
                            if v != 0.0 {
                                *self.coeffs[r * self.cols + c].entry(i).or_insert(0.0) += v;
                            }
                        }
                    }
                }
            }
            Ok(_) => {
                self.error.get_or_insert(Error::Dimension("equality term shape".into()));
            }
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
        self
    }

    pub fn term(&mut self, left: &Mat, var: Var, right: &Mat) -> &mut Self {
        self.add_term(left, var, right, false)
    }

    pub fn term_t(&mut self, left: &Mat, var: Var, right: &Mat) -> &mut Self {
        self.add_term(left, var, right, true)
    }

    pub fn build(self, name: &str) -> Result<Vec<LinearEquality>> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let coeffs: Vec<(usize, f64)> =
                    self.coeffs[r * self.cols + c].iter().filter(|(_, &v)| v != 0.0).map(|(&i, &v)| (i, v)).collect();
                let constant = self.constant[(r, c)];
                if coeffs.is_empty() && constant == 0.0 {
                    continue;
                }
                out.push(LinearEquality { name: format!("{name}[{r},{c}]"), coeffs, constant });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_var_roundtrip() {
        let mut p = SdpProblem::new();
        let y = p.symmetric("Y", 3);
        assert_eq!(p.scalar_count(), 6);
        let x: Vec<f64> = (1..=6).map(|v| v as f64).collect();
        let v = p.value(&y, &x).unwrap();
        assert_eq!(v, Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]));
    }

    #[test]
    fn builder_term_matches_dense_evaluation() {
        let mut p = SdpProblem::new();
        let y = p.symmetric("Y", 2);
        let m = p.rect("M", 3, 2);
        let l = Mat::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let mut b = LmiBuilder::new(&[2, 2]);
        b.term(0, 0, &-Mat::identity(2, 2), y, &Mat::identity(2, 2))
            .term(1, 0, &l, m, &Mat::identity(2, 2))
            .constant(1, 1, &(-Mat::identity(2, 2) * 4.0));
        let block = b.build("t", Strictness::Strict).unwrap();
        let x: Vec<f64> = (0..p.scalar_count()).map(|i| (i as f64 * 0.7).sin()).collect();
        let yv = y.value(&x);
        let mv = m.value(&x);
        let lm = &l * &mv;
        let mut dense = Mat::zeros(4, 4);
        dense.view_mut((0, 0), (2, 2)).copy_from(&-&yv);
        dense.view_mut((2, 0), (2, 2)).copy_from(&lm);
        dense.view_mut((0, 2), (2, 2)).copy_from(&lm.transpose());
        dense.view_mut((2, 2), (2, 2)).copy_from(&(-Mat::identity(2, 2) * 4.0));
        assert!((block.evaluate(&x) - dense).amax() < 1e-14);
    }

    #[test]
    fn builder_reports_shape_errors() {
        let mut p = SdpProblem::new();
        let y = p.symmetric("Y", 2);
        let mut b = LmiBuilder::new(&[2, 3]);
        b.term(0, 1, &Mat::identity(2, 2), y, &Mat::identity(2, 2));
        assert!(matches!(b.build("bad", Strictness::Strict), Err(Error::Dimension(_))));
    }

    #[test]
    fn equality_builder_rows() {
        let mut p = SdpProblem::new();
        let y = p.symmetric("Y", 2);
        let m = p.rect("M", 3, 2);
        let x_data = Mat::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let mut e = EqBuilder::new(2, 2);
        e.term(&x_data, m, &Mat::identity(2, 2)).term(&-Mat::identity(2, 2), y, &Mat::identity(2, 2));
        let eqs = e.build("XM=Y").unwrap();
        assert_eq!(eqs.len(), 4);
        let x: Vec<f64> = (0..p.scalar_count()).map(|i| i as f64 - 2.0).collect();
        let resid = &x_data * m.value(&x) - y.value(&x);
        for (k, eq) in eqs.iter().enumerate() {
            assert!((eq.residual(&x) - resid[(k / 2, k % 2)]).abs() < 1e-14);
        }
    }

    #[test]
    fn equilibration_uses_constant_diagonal() {
        let c = Mat::from_diagonal(&Vector::from_vec(vec![0.0, -4.0, -1e-6]));
        let d = equilibration(&c);
        assert_eq!(d[0], 1.0);
        assert!((d[1] - 0.5).abs() < 1e-15);
        assert!((d[2] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn add_lmi_rejects_unknown_indices() {
        let mut p = SdpProblem::new();
        p.scalar("x");
        let block = LmiBlock {
            name: "bad".into(),
            size: 1,
            constant: Mat::zeros(1, 1),
            coeffs: vec![(5, vec![(0, 0, 1.0)])],
            strictness: Strictness::Strict,
        };
        assert!(matches!(p.add_lmi(block), Err(Error::Malformed(_))));
    }
}
