//! Matrix-free operators and the small amount of numerical linear algebra the
//! estimators need: power iteration, Jacobi-preconditioned conjugate
//! gradients, dense spectra for diagnostics, and a symmetric
//! "diagonal plus low rank" representation used by the expected network.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default size cap for densifying an operator.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// A real linear map `x -> A x` that can also apply its transpose.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.apply(x, &mut y);
        y
    }

    fn apply_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols()];
        self.apply_transpose(x, &mut y);
        y
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for (c, xc) in x.iter().enumerate() {
            if *xc == 0.0 {
                continue;
            }
            for (r, yr) in y.iter_mut().enumerate() {
                *yr += self[(r, c)] * xc;
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        for (c, yc) in y.iter_mut().enumerate() {
            *yc = self.column(c).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// `left - right` for two operators of equal shape.
pub struct Difference<'a> {
    pub left: &'a dyn LinearOperator,
    pub right: &'a dyn LinearOperator,
}

impl<'a> Difference<'a> {
    pub fn new(left: &'a dyn LinearOperator, right: &'a dyn LinearOperator) -> Self {
        assert_eq!(left.nrows(), right.nrows());
        assert_eq!(left.ncols(), right.ncols());
        Self { left, right }
    }
}

impl LinearOperator for Difference<'_> {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }
    fn ncols(&self) -> usize {
        self.left.ncols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.left.apply(x, y);
        let r = self.right.apply_vec(x);
        for (a, b) in y.iter_mut().zip(r) {
            *a -= b;
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.left.apply_transpose(x, y);
        let r = self.right.apply_transpose_vec(x);
        for (a, b) in y.iter_mut().zip(r) {
            *a -= b;
        }
    }
}

/// Densifies an operator by applying it to unit vectors.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (m, n) = (op.nrows(), op.ncols());
    let mut out = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        out.column_mut(j).copy_from_slice(&col);
    }
    out
}

/// Sorted (ascending) eigenvalues of a symmetric operator, computed densely.
pub fn dense_spectrum(op: &dyn LinearOperator, cap: usize) -> Result<Vec<f64>> {
    if op.nrows() != op.ncols() {
        return Err(Error::InvalidInput("dense_spectrum needs a square operator".into()));
    }
    if op.nrows() > cap {
        return Err(Error::DenseCapExceeded { size: op.nrows(), cap });
    }
    let mut a = to_dense(op);
    // symmetrize away round-off from the matrix-free products
    let at = a.transpose();
    a = (a + at) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

/// Largest absolute eigenvalue of a dense symmetric matrix.
pub fn symmetric_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000 }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spectral norm by power iteration on `AᵀA`, started from the normalized
/// all-ones vector. Stops once the relative change of the estimate drops
/// below `tol`; a run that hits `max_iter` is returned with
/// `converged = false` and the last estimate.
pub fn operator_norm(op: &dyn LinearOperator, opts: PowerOptions) -> NormEstimate {
    let n = op.ncols();
    if n == 0 || op.nrows() == 0 {
        return NormEstimate { value: 0.0, iterations: 0, converged: true };
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut av = op.apply_vec(&v);
    if norm2(&av) == 0.0 {
        // ones vector in the null space; fall back to a fixed alternating pattern
        for (i, x) in v.iter_mut().enumerate() {
            *x = (1.0 + (i % 7) as f64) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let s = norm2(&v);
        v.iter_mut().for_each(|x| *x /= s);
        av = op.apply_vec(&v);
        if norm2(&av) == 0.0 {
            return NormEstimate { value: 0.0, iterations: 1, converged: true };
        }
    }
    let mut sigma = norm2(&av);
    let mut w = vec![0.0; n];
    for it in 1..=opts.max_iter {
        op.apply_transpose(&av, &mut w);
        let s = norm2(&w);
        if s == 0.0 {
            return NormEstimate { value: 0.0, iterations: it, converged: true };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / s;
        }
        op.apply(&v, &mut av);
        let next = norm2(&av);
        if (next - sigma).abs() <= opts.tol * next {
            return NormEstimate { value: next, iterations: it, converged: true };
        }
        sigma = next;
    }
    NormEstimate { value: sigma, iterations: opts.max_iter, converged: false }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CgInfo {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite operator. `x` holds the starting guess and receives the solution.
pub fn pcg(
    op: &dyn LinearOperator,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgInfo {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgInfo { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = op.apply_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r) / bnorm;
    if res <= tol {
        return CgInfo { iterations: 0, relative_residual: res, converged: true };
    }
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return CgInfo { iterations: it, relative_residual: res, converged: false };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / bnorm;
        if res <= tol {
            return CgInfo { iterations: it, relative_residual: res, converged: true };
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgInfo { iterations: max_iter, relative_residual: res, converged: false }
}

/// Symmetric matrix `diag(d) + F K Fᵀ` with a thin factor `F` (m × r) and a
/// symmetric r × r core `K`.
#[derive(Debug, Clone)]
pub struct DiagPlusLowRank {
    pub diag: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub core: DMatrix<f64>,
}

impl DiagPlusLowRank {
    pub fn new(diag: DVector<f64>, factor: DMatrix<f64>, core: DMatrix<f64>) -> Self {
        assert_eq!(diag.len(), factor.nrows());
        assert_eq!(factor.ncols(), core.nrows());
        assert_eq!(core.nrows(), core.ncols());
        Self { diag, factor, core }
    }

    pub fn diagonal_only(diag: DVector<f64>) -> Self {
        let m = diag.len();
        Self::new(diag, DMatrix::zeros(m, 0), DMatrix::zeros(0, 0))
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.core.nrows()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(&self.diag * s, self.factor.clone(), &self.core * s)
    }

    /// Sum of two representations on the same space (factors concatenated).
    pub fn add(&self, other: &Self) -> Self {
        let (r1, r2) = (self.rank(), other.rank());
        let m = self.dim();
        let mut factor = DMatrix::zeros(m, r1 + r2);
        factor.columns_mut(0, r1).copy_from(&self.factor);
        factor.columns_mut(r1, r2).copy_from(&other.factor);
        let mut core = DMatrix::zeros(r1 + r2, r1 + r2);
        core.view_mut((0, 0), (r1, r1)).copy_from(&self.core);
        core.view_mut((r1, r1), (r2, r2)).copy_from(&other.core);
        Self::new(&self.diag + &other.diag, factor, core)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let proj = self.factor.tr_mul(x);
        self.diag.component_mul(x) + &self.factor * (&self.core * proj)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let fk = &self.factor * &self.core;
        let mut d = self.diag.clone();
        for i in 0..self.dim() {
            d[i] += fk.row(i).dot(&self.factor.row(i));
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = &self.factor * &self.core * self.factor.transpose();
        for i in 0..self.dim() {
            out[(i, i)] += self.diag[i];
        }
        out
    }

    /// Woodbury inverse. Requires a nonzero diagonal.
    pub fn inverse(&self) -> Result<Self> {
        if self.diag.iter().any(|d| *d == 0.0) {
            return Err(Error::Singular("diagonal part has a zero entry".into()));
        }
        let dinv = self.diag.map(|d| 1.0 / d);
        let r = self.rank();
        let df = DMatrix::from_fn(self.dim(), r, |i, j| dinv[i] * self.factor[(i, j)]);
        // (D + F K Fᵀ)^{-1} = D^{-1} - D^{-1}F K (I + FᵀD^{-1}F K)^{-1} FᵀD^{-1}
        let inner = DMatrix::identity(r, r) + self.factor.tr_mul(&df) * &self.core;
        let inner_inv = inner
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("Woodbury core is singular".into()))?;
        let mut core = -(&self.core * inner_inv);
        core = (&core + core.transpose()) * 0.5;
        Ok(Self::new(dinv, df, core))
    }

    /// `self · a · self` for symmetric `self` and `a`.
    pub fn sandwich(&self, a: &Self) -> Self {
        let d = &self.diag;
        let r = &self.factor;
        let h = &self.core;
        let u = &a.factor;
        let mmat = &a.core;
        let m = self.dim();
        let (kr, ku) = (r.ncols(), u.ncols());

        let du = DMatrix::from_fn(m, ku, |i, j| d[i] * u[(i, j)]);
        let utr = u.tr_mul(r);
        let mut q = DMatrix::from_fn(m, kr, |i, j| d[i] * a.diag[i] * r[(i, j)]);
        q += &du * (mmat * &utr);
        let dar = DMatrix::from_fn(m, kr, |i, j| a.diag[i] * r[(i, j)]);
        let rar = r.tr_mul(&dar) + utr.transpose() * mmat * &utr;
        let mut hrh = h * rar * h;
        hrh = (&hrh + hrh.transpose()) * 0.5;

        let width = ku + 2 * kr;
        let mut factor = DMatrix::zeros(m, width);
        factor.columns_mut(0, ku).copy_from(&du);
        factor.columns_mut(ku, kr).copy_from(&q);
        factor.columns_mut(ku + kr, kr).copy_from(r);
        let mut core = DMatrix::zeros(width, width);
        core.view_mut((0, 0), (ku, ku)).copy_from(mmat);
        core.view_mut((ku, ku + kr), (kr, kr)).copy_from(h);
        core.view_mut((ku + kr, ku), (kr, kr)).copy_from(&h.transpose());
        core.view_mut((ku + kr, ku + kr), (kr, kr)).copy_from(&hrh);

        let diag = DVector::from_fn(m, |i, _| d[i] * d[i] * a.diag[i]);
        Self::new(diag, factor, core)
    }
}

impl LinearOperator for DiagPlusLowRank {
    fn nrows(&self) -> usize {
        self.dim()
    }
    fn ncols(&self) -> usize {
        self.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let out = DiagPlusLowRank::apply(self, &DVector::from_column_slice(x));
        y.copy_from_slice(out.as_slice());
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        LinearOperator::apply(self, x, y)
    }
}

/// Inverse of a dense SPD matrix through Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))
}
