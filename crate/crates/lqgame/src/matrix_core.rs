//! Dense matrix primitives shared by every other module.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use std::ops::Deref;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance for Loewner comparisons.
pub const LOEWNER_TOL: f64 = 1e-9;
/// Default PD tolerance (relative to the matrix norm).
pub const TOL_PD: f64 = 1e-10;
/// Default relative rank tolerance for [`ordered_svd`].
pub const RANK_TOL_REL: f64 = 1e-9;

fn ensure_square(m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// (M + Mᵀ)/2.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Symmetric matrix, stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    /// Accepts matrices symmetric to 1e-12 relative and stores the symmetric part.
    pub fn new(m: Mat) -> Result<Self> {
        ensure_square(&m)?;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Definiteness("symmetry"));
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Symmetrizes without the asymmetry check.
    pub fn from_symmetrized(m: &Mat) -> Result<Self> {
        ensure_square(m)?;
        Ok(SymMatrix(symmetrize(m)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(SymMatrix);

impl PsdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        let s = SymMatrix::from_symmetrized(&m)?;
        if !is_psd(&s) {
            return Err(Error::Definiteness("PSD"));
        }
        Ok(PsdMatrix(s))
    }

    pub fn into_inner(self) -> Mat {
        self.0.into_inner()
    }
}

impl Deref for PsdMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PdMatrix(SymMatrix);

impl PdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        let s = SymMatrix::from_symmetrized(&m)?;
        if !is_pd(&s, TOL_PD) {
            return Err(Error::Definiteness("PD"));
        }
        Ok(PdMatrix(s))
    }

    pub fn into_inner(self) -> Mat {
        self.0.into_inner()
    }
}

impl Deref for PdMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Kronecker product.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec(x: &Mat) -> Vector {
    Vector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec`] for a square `dim`×`dim` matrix.
pub fn unvec(v: &Vector, dim: usize) -> Result<Mat> {
    if v.len() != dim * dim {
        return Err(Error::Dimension(format!("unvec: length {} != {}²", v.len(), dim)));
    }
    Ok(Mat::from_column_slice(dim, dim, v.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchurBlock {
    UpperLeft,
    LowerRight,
}

/// Schur complement of the designated block of `m`, split after `k` rows/cols.
///
/// `UpperLeft`: M/A₁ = A₄ − A₃A₁⁻¹A₂. `LowerRight`: M/A₄ = A₁ − A₂A₄⁻¹A₃.
pub fn schur_complement(m: &Mat, k: usize, which: SchurBlock) -> Result<Mat> {
    ensure_square(m)?;
    let n = m.nrows();
    if k == 0 || k >= n {
        return Err(Error::Dimension(format!("schur split {k} outside 1..{n}")));
    }
    let a1 = m.view((0, 0), (k, k));
    let a2 = m.view((0, k), (k, n - k));
    let a3 = m.view((k, 0), (n - k, k));
    let a4 = m.view((k, k), (n - k, n - k));
    match which {
        SchurBlock::UpperLeft => {
            let lu = a1.clone_owned().lu();
            let x = lu.solve(&a2.clone_owned()).ok_or(Error::SingularBlock)?;
            Ok(a4 - a3 * x)
        }
        SchurBlock::LowerRight => {
            let lu = a4.clone_owned().lu();
            let x = lu.solve(&a3.clone_owned()).ok_or(Error::SingularBlock)?;
            Ok(a1 - a2 * x)
        }
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    ensure_square(m)?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 0) {
        let ev = schur.complex_eigenvalues();
        return Ok(ev.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    // Gelfand fallback; only reached if the QR sweep stalls.
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let k = 256;
    for _ in 0..k {
        p = &p * m;
        let s = p.amax();
        if s == 0.0 {
            return Ok(0.0);
        }
        p /= s;
        log_scale += s.ln();
    }
    Ok(((log_scale + p.norm().ln()) / (k as f64 + 1.0)).exp())
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vector {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(f64::total_cmp);
    ev
}

pub fn min_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral norm.
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix (max |eigenvalue|).
pub fn sym_norm(m: &Mat) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

pub fn is_psd(m: &Mat) -> bool {
    min_eig(m) >= -1e-10 * sym_norm(m)
}

pub fn is_pd(m: &Mat, tol_pd: f64) -> bool {
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    ev[0] > 0.0 && ev[0] >= tol_pd * scale
}

/// `a ⪯ b` in the Loewner order: min-eig(b − a) ≥ −tol·(1 + ‖b‖).
pub fn loewner_leq(a: &Mat, b: &Mat, tol: f64) -> bool {
    min_eig(&(b - a)) >= -tol * (1.0 + sym_norm(b))
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(m: &PsdMatrix) -> PsdMatrix {
    PsdMatrix(SymMatrix(sqrt_psd_raw(m)))
}

pub(crate) fn sqrt_psd_raw(m: &Mat) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// Inverse of a symmetric PD matrix via Cholesky.
pub fn pd_inverse(m: &Mat) -> Result<Mat> {
    let c = symmetrize(m).cholesky().ok_or(Error::Definiteness("PD"))?;
    Ok(symmetrize(&c.inverse()))
}

/// Solves `m X = b` for symmetric PD `m`.
pub fn pd_solve(m: &Mat, b: &Mat) -> Result<Mat> {
    let c = symmetrize(m).cholesky().ok_or(Error::Definiteness("PD"))?;
    Ok(c.solve(b))
}

/// `M = Uᵀ diag(sigma) U` with rows of `u` orthonormal and `sigma` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSvd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub rank: usize,
}

impl OrderedSvd {
    pub fn reconstruct(&self) -> Mat {
        let d = Mat::from_diagonal(&Vector::from_vec(self.sigma.clone()));
        self.u.transpose() * d * &self.u
    }

    /// Projector onto the complement of the leading `rank` directions, ŨᵀŨ.
    pub fn null_projector(&self) -> Mat {
        let s = self.u.nrows();
        let mut p = Mat::identity(s, s);
        for i in 0..self.rank {
            let r = self.u.row(i);
            p -= r.transpose() * r;
        }
        symmetrize(&p)
    }
}

fn rank_of(sigma: &[f64], rank_tol: Option<f64>) -> usize {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tol = rank_tol.unwrap_or(RANK_TOL_REL * smax);
    sigma.iter().filter(|&&s| s > tol && s > 0.0).count()
}

/// Sorts (value, vector) pairs descending, fixes signs, stacks vectors as rows.
fn assemble_ordered(mut pairs: Vec<(f64, Vector)>, rank_tol: Option<f64>) -> OrderedSvd {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = pairs.len();
    let mut u = Mat::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (i, (s, mut v)) in pairs.into_iter().enumerate() {
        let vmax = v.amax();
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * vmax) {
            if first < 0.0 {
                v.neg_mut();
            }
        }
        u.set_row(i, &v.transpose());
        sigma.push(s);
    }
    let rank = rank_of(&sigma, rank_tol);
    OrderedSvd { u, sigma, rank }
}

/// Ordered decomposition of a symmetric PSD matrix. `rank_tol` is absolute;
/// `None` means 1e-9·σ_max.
pub fn ordered_svd(m: &SymMatrix, rank_tol: Option<f64>) -> OrderedSvd {
    let eig = SymmetricEigen::new((**m).clone());
    let pairs = (0..m.dim())
        .map(|i| (eig.eigenvalues[i].max(0.0), eig.eigenvectors.column(i).into_owned()))
        .collect();
    assemble_ordered(pairs, rank_tol)
}

/// Ordered decomposition of `X Xᵀ` computed from the factor `X` itself, which keeps
/// null directions accurate to machine precision relative to ‖X‖ rather than √ε.
pub fn ordered_svd_of_gram(x: &Mat, rank_tol: Option<f64>) -> OrderedSvd {
    let s = x.nrows();
    let a = orthogonalized(x);

    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let mut pairs: Vec<(f64, Vector)> = Vec::with_capacity(s);
    for (j, &nj) in norms.iter().enumerate() {
        if nj > 1e-14 * top && pairs.len() < s {
            pairs.push((nj * nj, a.column(j) / nj));
        }
    }
    // complete with an orthonormal basis of the orthogonal complement
    let mut proj = Mat::identity(s, s);
    for (_, u) in &pairs {
        proj -= u * u.transpose();
    }
    let eig = SymmetricEigen::new(symmetrize(&proj));
    let mut rest: Vec<(f64, Vector)> = (0..s)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| (0.0, eig.eigenvectors.column(i).into_owned()))
        .collect();
    rest.truncate(s - pairs.len());
    pairs.extend(rest);
    assemble_ordered(pairs, rank_tol)
}

/// Singular values, unordered.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    orthogonalized(m).column_iter().map(|c| c.norm()).collect()
}

/// `X·V` with orthogonal columns. Wide inputs go through `X = Rᵀ Qᵀ` first, which keeps
/// the left singular vectors.
fn orthogonalized(x: &Mat) -> Mat {
    let mut a = if x.ncols() > x.nrows() { x.transpose().qr().r().transpose() } else { x.clone() };
    jacobi_orthogonalize(&mut a);
    a
}

/// One-sided Jacobi: rotates column pairs of `a` until they are mutually orthogonal.
/// Used instead of the library SVD, which can return a non-reconstructing factorization
/// on exactly rank-deficient tall inputs.
fn jacobi_orthogonalize(a: &mut Mat) {
    let n = a.ncols();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                let cp = a.column(p).into_owned();
                let cq = a.column(q).into_owned();
                a.set_column(p, &(&cp * c - &cq * sn));
                a.set_column(q, &(&cp * sn + &cq * c));
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Numerical rank from singular values with relative tolerance.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), (b.nrows(), b.ncols())).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}
