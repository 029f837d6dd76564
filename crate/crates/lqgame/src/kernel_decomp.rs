//! Split of a PD matrix T into a kernel-preserving part and a part that
//! annihilates a controller gain realization: T = T_ker + T_0.

use crate::error::{Error, Result};
use crate::matrix_core::{ordered_svd_of_gram, pd_solve, sqrt_psd_raw, symmetrize, Mat, OrderedSvd};

#[derive(Debug, Clone)]
pub struct KernelSplit {
    pub t_ker: Mat,
    pub t_0: Mat,
    /// L_k = M₂₁·(M_r)⁻¹ with M = U T Uᵀ; (S−r)×r.
    pub l: Mat,
    pub svd: OrderedSvd,
}

impl KernelSplit {
    pub fn rank(&self) -> usize {
        self.svd.rank
    }
}

/// Ordered SVD of B^c (R^c)⁻¹ (B^c)ᵀ, computed from the factor B^c (R^c)^{-1/2}.
pub fn weighted_gram_svd(bc: &Mat, rc: &Mat) -> Result<OrderedSvd> {
    let rc_inv_sqrt = sqrt_psd_raw(&crate::matrix_core::pd_inverse(rc)?);
    Ok(ordered_svd_of_gram(&(bc * rc_inv_sqrt), None))
}

pub fn decompose(t: &Mat, bc: &Mat, rc: &Mat) -> Result<KernelSplit> {
    if bc.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroGain);
    }
    let svd = weighted_gram_svd(bc, rc)?;
    decompose_with_svd(t, svd)
}

/// Same as [`decompose`] with a caller-supplied ordered SVD.
pub fn decompose_with_svd(t: &Mat, svd: OrderedSvd) -> Result<KernelSplit> {
    let s = t.nrows();
    let r = svd.rank;
    if r == 0 {
        return Err(Error::ZeroGain);
    }
    let u = &svd.u;
    let m = symmetrize(&(u * t * u.transpose()));
    let m_r = m.view((0, 0), (r, r)).into_owned();
    if r == s {
        return Ok(KernelSplit { t_ker: symmetrize(t), t_0: Mat::zeros(s, s), l: Mat::zeros(0, r), svd });
    }
    let m12 = m.view((0, r), (r, s - r)).into_owned();
    let m22 = m.view((r, r), (s - r, s - r)).into_owned();
    // L = M₂₁ M_r⁻¹ = (M_r⁻¹ M₁₂)ᵀ
    let l = pd_solve(&m_r, &m12).map_err(|_| Error::Definiteness("PD leading block of U T Uᵀ"))?.transpose();

    // Gram factors: T̃_ker = [M_r^{1/2}, M_r^{1/2} Lᵀ]·U,  T̃_0 = [0, Z^{1/2}]·U
    let mr_half = sqrt_psd_raw(&m_r);
    let mut y = Mat::zeros(r, s);
    y.view_mut((0, 0), (r, r)).copy_from(&mr_half);
    y.view_mut((0, r), (r, s - r)).copy_from(&(&mr_half * l.transpose()));
    let t_ker_factor = &y * u;

    let z = symmetrize(&(&m22 - &l * &m12));
    let mut g = Mat::zeros(s - r, s);
    g.view_mut((0, r), (s - r, s - r)).copy_from(&sqrt_psd_raw(&z));
    let t0_factor = &g * u;

    Ok(KernelSplit {
        t_ker: symmetrize(&(t_ker_factor.transpose() * &t_ker_factor)),
        t_0: symmetrize(&(t0_factor.transpose() * &t0_factor)),
        l,
        svd,
    })
}
