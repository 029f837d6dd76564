//! The modified game algebraic Riccati operator, its recursion and fixed point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix_core::{min_eig, sym_norm, symmetrize, Mat};
use crate::stochastic_model::{attacker_moments, try_expect_over_bc, AttackerMoments, Model};

/// Relative margin used for the strict concavity test.
const CONCAVITY_EPS: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct PhiBlocks {
    pub phi1: Mat,
    pub phi2: Mat,
    pub phi3: Mat,
    pub phi: Mat,
}

impl PhiBlocks {
    fn assemble(phi1: Mat, phi2: Mat, phi3: Mat) -> Self {
        let (nc, na) = phi2.shape();
        let mut phi = Mat::zeros(nc + na, nc + na);
        phi.view_mut((0, 0), (nc, nc)).copy_from(&phi1);
        phi.view_mut((0, nc), (nc, na)).copy_from(&phi2);
        phi.view_mut((nc, 0), (na, nc)).copy_from(&phi2.transpose());
        phi.view_mut((nc, nc), (na, na)).copy_from(&(-&phi3));
        PhiBlocks { phi1, phi2, phi3, phi }
    }

    pub fn nc(&self) -> usize {
        self.phi1.nrows()
    }
}

pub(crate) fn phi_from_moments(model: &Model, p: &Mat, bc: &Mat, mo: &AttackerMoments) -> PhiBlocks {
    let phi1 = symmetrize(&(bc.transpose() * p * bc + &model.rc));
    let phi2 = bc.transpose() * p * &mo.e_ba;
    let phi3 = symmetrize(&(&model.ra - &mo.e_batpba));
    PhiBlocks::assemble(phi1, phi2, phi3)
}

/// Φ(P;k) for one controller realization.
pub fn phi_blocks(model: &Model, p: &Mat, bc: &Mat) -> PhiBlocks {
    let mo = attacker_moments(model, p);
    phi_from_moments(model, p, bc, &mo)
}

/// B(k) = [B^c(k), E[B^a]].
pub fn stacked_gain(bc: &Mat, e_ba: &Mat) -> Mat {
    let s = bc.nrows();
    let mut b = Mat::zeros(s, bc.ncols() + e_ba.ncols());
    b.view_mut((0, 0), bc.shape()).copy_from(bc);
    b.view_mut((0, bc.ncols()), e_ba.shape()).copy_from(e_ba);
    b
}

/// Solves Φ·X = RHS with partial-pivot LU (Φ is symmetric quasi-definite).
pub(crate) fn phi_solve(phi: &Mat, rhs: &Mat) -> Result<Mat> {
    phi.clone().lu().solve(rhs).ok_or(Error::SingularPhi)
}

/// Smallest eigenvalue of R^a − E[(B^a)ᵀPB^a].
pub fn concavity_margin(model: &Model, p: &Mat) -> f64 {
    let mo = attacker_moments(model, p);
    min_eig(&(&model.ra - &mo.e_batpba))
}

/// P ∈ R_{R^a}: strict positive definiteness of R^a − E[(B^a)ᵀPB^a].
pub fn concavity_indicator(model: &Model, p: &Mat) -> bool {
    concavity_margin(model, p) > CONCAVITY_EPS * sym_norm(&model.ra)
}

/// f(P) = Aᵀ·E[P − P·B(k)·Φ⁻¹·B(k)ᵀ·P]·A + Q.
pub fn f_operator(model: &Model, p: &Mat) -> Result<Mat> {
    let mo = attacker_moments(model, p);
    let phi3 = symmetrize(&(&model.ra - &mo.e_batpba));
    let m3 = min_eig(&phi3);
    if m3 <= CONCAVITY_EPS * sym_norm(&model.ra) {
        return Err(Error::ConcavityViolated { min_eig: m3 });
    }
    let s = model.s();
    let inner = try_expect_over_bc(model, s, s, |bc| {
        let blocks = phi_from_moments(model, p, bc, &mo);
        let b = stacked_gain(bc, &mo.e_ba);
        let btp = b.transpose() * p;
        let x = phi_solve(&blocks.phi, &btp)?;
        Ok(p - btp.transpose() * x)
    })?;
    let out = model.a.transpose() * symmetrize(&inner) * &model.a + &model.q;
    Ok(symmetrize(&out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    ConcavityViolatedAt(usize),
    DivergedAt(usize),
}

#[derive(Debug, Clone)]
pub struct Recursion {
    /// f⁰(Q) … f^k(Q) for the steps that completed.
    pub iterates: Vec<Mat>,
    pub membership: Vec<bool>,
    pub stopped: Option<StopReason>,
}

/// f⁰(Q), …, f^K(Q); stops early on a concavity violation or divergence.
pub fn riccati_recursion(model: &Model, k: usize, divergence_cap: f64) -> Recursion {
    let mut iterates = vec![model.q.clone()];
    let mut membership = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let p = &iterates[j];
        let norm = sym_norm(p);
        if !norm.is_finite() || norm > divergence_cap {
            membership.push(false);
            return Recursion { iterates, membership, stopped: Some(StopReason::DivergedAt(j)) };
        }
        let ok = concavity_indicator(model, p);
        membership.push(ok);
        if !ok {
            return Recursion { iterates, membership, stopped: Some(StopReason::ConcavityViolatedAt(j)) };
        }
        if j == k {
            break;
        }
        match f_operator(model, p) {
            Ok(next) => iterates.push(next),
            Err(_) => return Recursion { iterates, membership, stopped: Some(StopReason::DivergedAt(j + 1)) },
        }
    }
    Recursion { iterates, membership, stopped: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Exists,
    DivergedAt(usize),
    ConcavityViolatedAt(usize),
    UndecidedAtKmax,
}

#[derive(Debug, Clone, Serialize)]
pub struct MgareSolution {
    #[serde(serialize_with = "crate::report::ser_mat")]
    pub p_star: Mat,
    pub iterations: usize,
    pub residual: f64,
    pub trajectory_norms: Vec<f64>,
    pub membership_ok: Vec<bool>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub k_max: usize,
    pub divergence_cap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, k_max: 10_000, divergence_cap: 1e12 }
    }
}

/// Iterates f^k(Q) until ‖f^{k+1}(Q) − f^k(Q)‖/‖f^k(Q)‖ ≤ tol.
pub fn solve_fixed_point(model: &Model, opts: &SolveOptions) -> MgareSolution {
    let mut p = model.q.clone();
    let mut norms = Vec::new();
    let mut membership = Vec::new();
    let finish = |p: Mat, k: usize, residual: f64, norms, membership, verdict| MgareSolution {
        p_star: p,
        iterations: k,
        residual,
        trajectory_norms: norms,
        membership_ok: membership,
        verdict,
    };
    for k in 0..=opts.k_max {
        let norm = sym_norm(&p);
        norms.push(norm);
        if !norm.is_finite() || norm > opts.divergence_cap {
            membership.push(false);
            return finish(p, k, f64::INFINITY, norms, membership, Verdict::DivergedAt(k));
        }
        let ok = concavity_indicator(model, &p);
        membership.push(ok);
        if !ok {
            return finish(p, k, f64::NAN, norms, membership, Verdict::ConcavityViolatedAt(k));
        }
        if k == opts.k_max {
            break;
        }
        let next = match f_operator(model, &p) {
            Ok(n) => n,
            Err(_) => return finish(p, k, f64::INFINITY, norms, membership, Verdict::DivergedAt(k + 1)),
        };
        let residual = sym_norm(&(&next - &p)) / norm;
        if residual <= opts.tol {
            return finish(p, k, residual, norms, membership, Verdict::Exists);
        }
        p = next;
    }
    let residual = f_operator(model, &p).map(|n| sym_norm(&(&n - &p)) / sym_norm(&p)).unwrap_or(f64::NAN);
    finish(p, opts.k_max, residual, norms, membership, Verdict::UndecidedAtKmax)
}

/// ‖f(P) − P‖/‖P‖.
pub fn fixed_point_residual(model: &Model, p: &Mat) -> Result<f64> {
    Ok(sym_norm(&(f_operator(model, p)? - p)) / sym_norm(p))
}
