//! Constructive existence certificates: T* from the generalized Lyapunov
//! equation, the attacker-weight bound, P̃, and the combined verdict.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel_decomp::weighted_gram_svd;
use crate::matrix_core::{
    kron, min_eig, pd_inverse, spectral_radius, sym_eigenvalues, sym_norm, symmetrize, unvec, vec, Mat, OrderedSvd,
};
use crate::mgare::{concavity_indicator, f_operator};
use crate::stochastic_model::{attacker_moments, sigma2_ba, try_expect_over_bc, Model};

/// Largest S² for which (I − Ã) is solved densely.
pub const DENSE_LIMIT: usize = 4096;

/// E[Aᵀ(B^c(R^c)⁻¹(B^c)ᵀ + T⁻¹)⁻¹A].
pub fn g_operator(model: &Model, t: &Mat) -> Result<Mat> {
    let s = model.s();
    let t_inv = pd_inverse(t)?;
    let rc_inv = pd_inverse(&model.rc)?;
    let inner = try_expect_over_bc(model, s, s, |bc| pd_inverse(&(bc * &rc_inv * bc.transpose() + &t_inv)))?;
    Ok(symmetrize(&(model.a.transpose() * inner * &model.a)))
}

/// Woodbury form Aᵀ·E[T − T B^c (R^c + (B^c)ᵀ T B^c)⁻¹ (B^c)ᵀ T]·A.
pub fn g_operator_woodbury(model: &Model, t: &Mat) -> Result<Mat> {
    let s = model.s();
    let inner = try_expect_over_bc(model, s, s, |bc| {
        let tb = t * bc;
        let k = crate::matrix_core::pd_solve(&(&model.rc + bc.transpose() * &tb), &tb.transpose())?;
        Ok(t - &tb * k)
    })?;
    Ok(symmetrize(&(model.a.transpose() * inner * &model.a)))
}

/// E[g(T)] + Q ≺ T with min-eigenvalue margin 1e-10·‖T‖.
pub fn check_gt_condition(model: &Model, t: &Mat) -> Result<bool> {
    let g = g_operator(model, t)?;
    Ok(min_eig(&(t - g - &model.q)) > 1e-10 * sym_norm(t))
}

/// Per-atom ordered SVDs of B^c(R^c)⁻¹(B^c)ᵀ.
pub fn atom_spectra(model: &Model) -> Result<Vec<OrderedSvd>> {
    model
        .exec
        .map(model.pool.bc_samples.len(), |i| weighted_gram_svd(&model.pool.bc_samples[i], &model.rc))
        .into_iter()
        .collect()
}

fn smallest_nonzero(svd: &OrderedSvd) -> Option<f64> {
    (svd.rank > 0).then(|| svd.sigma[svd.rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum XiPolicy {
    Auto,
    Fixed(f64),
}

/// ½·smallest nonzero singular value (exact pools) or ½·weighted 1% quantile of
/// the per-atom smallest nonzero singular value (sampled pools).
pub fn select_xi(model: &Model, spectra: &[OrderedSvd], policy: XiPolicy) -> f64 {
    if let XiPolicy::Fixed(x) = policy {
        return x;
    }
    let mut vals: Vec<(f64, f64)> = spectra
        .iter()
        .zip(&model.pool.bc_weights)
        .filter_map(|(s, &w)| smallest_nonzero(s).map(|v| (v, w)))
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    if model.pool.exact {
        return 0.5 * vals[0].0;
    }
    let total: f64 = vals.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    for &(v, w) in &vals {
        acc += w;
        if acc >= 0.01 * total {
            return 0.5 * v;
        }
    }
    0.5 * vals.last().unwrap().0
}

/// E[(ŨᵀŨA)⊗(ŨᵀŨA)] with ŨᵀŨ the projector onto the complement of the leading r_k directions.
fn projected_kron_mean(model: &Model, spectra: &[OrderedSvd]) -> Mat {
    let s = model.s();
    let w = &model.pool.bc_weights;
    model.exec.sum_mat(spectra.len(), s * s, s * s, |i| {
        let pa = spectra[i].null_projector() * &model.a;
        kron(&pa, &pa) * w[i]
    })
}

/// ρ(E[(ŨᵀŨA)⊗(ŨᵀŨA)]).
pub fn kron_contraction_radius(model: &Model) -> Result<f64> {
    let spectra = atom_spectra(model)?;
    spectral_radius(&projected_kron_mean(model, &spectra))
}

/// Linear map of the generalized Lyapunov equation in vec form plus its data.
#[derive(Debug, Clone)]
pub struct LyapunovSystem {
    /// vec(T) ↦ vec(Pr_bad·AᵀTA + E[AᵀŨᵀŨ T ŨᵀŨA]).
    pub op: Mat,
    pub rho_kron: f64,
    pub rho_tilde: f64,
    pub p_bad: f64,
    /// E[1{r≠0, Σ_r ≻ ξI}·Tr(Σ_r⁻¹)].
    pub e_trinv_good: f64,
    /// Scalar c of the right-hand side c·I.
    pub rhs_scale: f64,
}

pub fn lyapunov_system(model: &Model, spectra: &[OrderedSvd], xi: f64) -> Result<LyapunovSystem> {
    let a = &model.a;
    let w = &model.pool.bc_weights;
    let mut p_bad = 0.0;
    let mut e_trinv_good = 0.0;
    for (svd, &wi) in spectra.iter().zip(w) {
        if let Some(smin) = smallest_nonzero(svd) {
            if smin > xi {
                e_trinv_good += wi * svd.sigma[..svd.rank].iter().map(|x| 1.0 / x).sum::<f64>();
            } else {
                p_bad += wi;
            }
        }
    }
    let mean = projected_kron_mean(model, spectra);
    let rho_kron = spectral_radius(&mean)?;
    let at = a.transpose();
    // vec(MᵀTM) = (Mᵀ⊗Mᵀ) vec(T); the transpose of `mean` has the same spectrum.
    let op = kron(&at, &at) * p_bad + mean.transpose();
    let rho_tilde = spectral_radius(&op)?;
    let s = model.s();
    let a_norm2 = crate::matrix_core::norm2(a).powi(2);
    let inner = Mat::identity(s, s) * e_trinv_good + &model.q;
    let rhs_scale = a_norm2.max(1.0) * sym_norm(&inner);
    Ok(LyapunovSystem { op, rho_kron, rho_tilde, p_bad, e_trinv_good, rhs_scale })
}

#[derive(Debug, Clone, Serialize)]
pub struct TStar {
    #[serde(serialize_with = "crate::report::ser_mat")]
    pub t: Mat,
    pub residual: f64,
}

/// Solves T = Ã(T) + c·I.
pub fn solve_tstar_system(sys: &LyapunovSystem, s: usize) -> Result<TStar> {
    if sys.rho_tilde >= 1.0 - 1e-9 {
        return Err(Error::SpectralRadiusTooLarge { rho: sys.rho_tilde });
    }
    let n = s * s;
    let rhs = vec(&Mat::identity(s, s)) * sys.rhs_scale;
    let x = if n <= DENSE_LIMIT {
        let lhs = Mat::identity(n, n) - &sys.op;
        lhs.lu().solve(&rhs).ok_or(Error::SingularBlock)?
    } else {
        let mut x = rhs.clone();
        let mut term = rhs.clone();
        for _ in 0..1_000_000 {
            term = &sys.op * term;
            x += &term;
            if term.norm() < 1e-15 * x.norm() {
                break;
            }
        }
        x
    };
    let residual = (&sys.op * &x + &rhs - &x).norm() / x.norm();
    let t = symmetrize(&unvec(&x, s)?);
    Ok(TStar { t, residual })
}

/// T* of the generalized Lyapunov equation for the given ξ.
pub fn solve_tstar(model: &Model, xi: f64) -> Result<TStar> {
    let spectra = atom_spectra(model)?;
    let sys = lyapunov_system(model, &spectra, xi)?;
    solve_tstar_system(&sys, model.s())
}

/// Fixed point of P̃⁻¹ = E[B^a](R^a − cov_term(P̃))⁻¹E[B^a]ᵀ + T⁻¹ started at P̃₀ = T.
pub fn construct_p_tilde(model: &Model, t: &Mat, ra: &Mat, tol: f64, n_max: usize) -> Result<Mat> {
    let t_inv = pd_inverse(t)?;
    let e = &model.e_ba;
    let mut p = symmetrize(t);
    let mut change = f64::INFINITY;
    for n in 0..n_max {
        let mo = attacker_moments(model, &p);
        let rt_inv = pd_inverse(&(ra - &mo.cov_term)).map_err(|_| Error::ConcavityLost { iter: n })?;
        let next = pd_inverse(&(e * rt_inv * e.transpose() + &t_inv))?;
        change = sym_norm(&(&next - &p)) / sym_norm(&next);
        p = next;
        if change <= tol {
            return Ok(p);
        }
    }
    Err(Error::NonConvergent { iters: n_max, change })
}

/// E[B^a]ᵀ((E[g(T)]+Q)⁻¹ − T⁻¹)⁻¹E[B^a] + σ²_{B^a}·Tr(T)·I.
pub fn ra_lower_bound(model: &Model, t: &Mat) -> Result<Mat> {
    let gq = g_operator(model, t)? + &model.q;
    let gap = symmetrize(&(t - &gq));
    // ((gq)⁻¹ − T⁻¹)⁻¹ = T (T − gq)⁻¹ gq
    let gap_inv = pd_inverse(&gap).map_err(|_| Error::Precondition("(E[g(T)]+Q)⁻¹ − T⁻¹ is not PD".into()))?;
    let x = symmetrize(&(t * gap_inv * gq));
    let na = model.e_ba.ncols();
    let bound = model.e_ba.transpose() * x * &model.e_ba + Mat::identity(na, na) * (sigma2_ba(&model.pool) * t.trace());
    Ok(symmetrize(&bound))
}

/// max(1e-3·‖bound‖, 1e-6).
pub fn ra_margin(bound: &Mat) -> f64 {
    (1e-3 * sym_norm(bound)).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    RhoKron,
    LyapunovRadius,
    GtCondition,
    RaBound,
    PTilde,
    Mnmi,
    Membership,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertVerdict {
    Certified,
    ConditionFailed(Condition),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Checks {
    pub gt_condition: bool,
    pub mnmi: bool,
    pub membership: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub rho_kron: f64,
    pub rho_tilde: f64,
    pub xi: f64,
    pub p_bad: f64,
    pub e_trinv_good: f64,
    #[serde(serialize_with = "crate::report::ser_opt_mat")]
    pub t_star: Option<Mat>,
    pub tstar_residual: Option<f64>,
    #[serde(serialize_with = "crate::report::ser_opt_mat")]
    pub p_tilde: Option<Mat>,
    #[serde(serialize_with = "crate::report::ser_opt_mat")]
    pub ra_bound: Option<Mat>,
    #[serde(serialize_with = "crate::report::ser_opt_mat")]
    pub ra_chosen: Option<Mat>,
    pub checks: Checks,
    pub verdict: CertVerdict,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == CertVerdict::Certified
    }
}

/// Full certification pipeline; failures are encoded in the verdict.
pub fn certify(model: &Model, xi_policy: XiPolicy) -> Result<Certificate> {
    let spectra = atom_spectra(model)?;
    let xi = select_xi(model, &spectra, xi_policy);
    let sys = lyapunov_system(model, &spectra, xi)?;
    let mut cert = Certificate {
        rho_kron: sys.rho_kron,
        rho_tilde: sys.rho_tilde,
        xi,
        p_bad: sys.p_bad,
        e_trinv_good: sys.e_trinv_good,
        t_star: None,
        tstar_residual: None,
        p_tilde: None,
        ra_bound: None,
        ra_chosen: None,
        checks: Checks::default(),
        verdict: CertVerdict::ConditionFailed(Condition::RhoKron),
    };
    let fail = |mut c: Certificate, cond| {
        c.verdict = CertVerdict::ConditionFailed(cond);
        Ok(c)
    };
    if sys.rho_kron >= 1.0 {
        return fail(cert, Condition::RhoKron);
    }
    let tstar = match solve_tstar_system(&sys, model.s()) {
        Ok(t) => t,
        Err(_) => return fail(cert, Condition::LyapunovRadius),
    };
    let t = tstar.t.clone();
    cert.tstar_residual = Some(tstar.residual);
    cert.t_star = Some(t.clone());
    cert.checks.gt_condition = check_gt_condition(model, &t)?;
    if !cert.checks.gt_condition {
        return fail(cert, Condition::GtCondition);
    }
    let bound = match ra_lower_bound(model, &t) {
        Ok(b) => b,
        Err(_) => return fail(cert, Condition::RaBound),
    };
    // σ²Tr(T)·I only dominates cov_term(T) for uncorrelated entries; top it up when needed.
    let na = bound.nrows();
    let cov_t = attacker_moments(model, &t).cov_term;
    let cov_top = sym_eigenvalues(&cov_t).iter().copied().fold(0.0_f64, f64::max);
    let shortfall = (cov_top - sigma2_ba(&model.pool) * t.trace()).max(0.0);
    let ra_chosen = symmetrize(&(&bound + Mat::identity(na, na) * (ra_margin(&bound) + shortfall)));
    cert.ra_bound = Some(bound);
    cert.ra_chosen = Some(ra_chosen.clone());
    let p_tilde = match construct_p_tilde(model, &t, &ra_chosen, 1e-12, 500) {
        Ok(p) => p,
        Err(_) => return fail(cert, Condition::PTilde),
    };
    cert.p_tilde = Some(p_tilde.clone());
    let m_ra = model.with_ra(ra_chosen);
    cert.checks.membership = concavity_indicator(&m_ra, &p_tilde);
    cert.checks.mnmi = match f_operator(&m_ra, &p_tilde) {
        Ok(fp) => min_eig(&(&p_tilde - fp)) > 1e-12 * sym_norm(&p_tilde),
        Err(_) => false,
    };
    if !cert.checks.mnmi {
        return fail(cert, Condition::Mnmi);
    }
    if !cert.checks.membership {
        return fail(cert, Condition::Membership);
    }
    cert.verdict = CertVerdict::Certified;
    Ok(cert)
}

// ---- example-specific conditions -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ExampleSpec {
    /// Single shared access gate δ on a full-row-rank controller gain.
    Ex1 { delta: f64 },
    /// Interference-free controllers; `block_sizes` partition the state.
    Ex2 { deltas: Vec<f64>, block_sizes: Vec<usize> },
    /// Per-controller gates with full-row-rank channels.
    Ex3 { deltas: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub rho_block: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleReport {
    pub rho_a: f64,
    /// Threshold on a common δ at which the condition becomes tight.
    pub delta_star: f64,
    /// The quantity that must stay below 1.
    pub condition_value: f64,
    pub condition_holds: bool,
    #[serde(serialize_with = "crate::report::ser_opt_mat")]
    pub a1: Option<Mat>,
    pub per_block: Vec<BlockCheck>,
}

fn check_prob(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::StructureMismatch(format!("probability {d} outside [0,1]")));
    }
    Ok(())
}

pub fn example_conditions(spec: &ExampleSpec, a: &Mat) -> Result<ExampleReport> {
    if a.nrows() != a.ncols() {
        return Err(Error::StructureMismatch("A must be square".into()));
    }
    let rho = spectral_radius(a)?;
    match spec {
        ExampleSpec::Ex1 { delta } => {
            check_prob(*delta)?;
            let v = (1.0 - delta) * rho * rho;
            Ok(ExampleReport {
                rho_a: rho,
                delta_star: 1.0 - rho.powi(-2),
                condition_value: v,
                condition_holds: v < 1.0,
                a1: None,
                per_block: vec![],
            })
        }
        ExampleSpec::Ex2 { deltas, block_sizes } => {
            if deltas.len() != block_sizes.len() || block_sizes.iter().sum::<usize>() != a.nrows() {
                return Err(Error::StructureMismatch("block sizes must partition the state, one δ per block".into()));
            }
            deltas.iter().try_for_each(|&d| check_prob(d))?;
            let diag: Vec<f64> = deltas
                .iter()
                .zip(block_sizes)
                .flat_map(|(d, &n)| std::iter::repeat_n((1.0 - d).sqrt(), n))
                .collect();
            let a1 = Mat::from_diagonal(&nalgebra::DVector::from_vec(diag)) * a;
            let v = spectral_radius(&a1)?;
            // Per-block thresholds are meaningful when A is block diagonal.
            let mut per_block = Vec::new();
            let mut off = 0;
            let mut block_diag = true;
            for &n in block_sizes {
                let mut rest = a.rows(off, n).into_owned();
                rest.view_mut((0, off), (n, n)).fill(0.0);
                block_diag &= rest.amax() == 0.0;
                off += n;
            }
            if block_diag {
                let mut off = 0;
                for (&n, &d) in block_sizes.iter().zip(deltas) {
                    let rb = spectral_radius(&a.view((off, off), (n, n)).into_owned())?;
                    let ds = 1.0 - rb.powi(-2);
                    per_block.push(BlockCheck { rho_block: rb, delta: d, delta_star: ds, holds: d > ds });
                    off += n;
                }
            }
            Ok(ExampleReport {
                rho_a: rho,
                delta_star: 1.0 - rho.powi(-2),
                condition_value: v,
                condition_holds: v < 1.0,
                a1: Some(a1),
                per_block,
            })
        }
        ExampleSpec::Ex3 { deltas } => {
            if deltas.is_empty() {
                return Err(Error::StructureMismatch("at least one controller".into()));
            }
            deltas.iter().try_for_each(|&d| check_prob(d))?;
            let v = deltas.iter().map(|d| 1.0 - d).product::<f64>() * rho * rho;
            Ok(ExampleReport {
                rho_a: rho,
                delta_star: 1.0 - rho.powf(-2.0 / deltas.len() as f64),
                condition_value: v,
                condition_holds: v < 1.0,
                a1: None,
                per_block: vec![],
            })
        }
    }
}

/// Σ over nonzero controller atoms of w·Tr(Σ_r⁻¹).
pub fn e_trinv(model: &Model) -> Result<f64> {
    let spectra = atom_spectra(model)?;
    Ok(spectra
        .iter()
        .zip(&model.pool.bc_weights)
        .map(|(s, w)| w * s.sigma[..s.rank].iter().map(|x| 1.0 / x).sum::<f64>())
        .sum())
}

/// (1+γ₂)(1 − (1−δ)ρ²(A))⁻¹·‖e·I + Q‖·I, with e = E[1{r≠0}Tr(Σ_r⁻¹)].
pub fn tstar_closed_form(a: &Mat, q: &Mat, delta: f64, e_trinv: f64, gamma2: f64) -> Result<Mat> {
    let rho = spectral_radius(a)?;
    let eps = 1.0 - (1.0 - delta) * rho * rho;
    if eps <= 0.0 {
        return Err(Error::SpectralRadiusTooLarge { rho: (1.0 - delta) * rho * rho });
    }
    let s = a.nrows();
    let c = (1.0 + gamma2) / eps * sym_norm(&(Mat::identity(s, s) * e_trinv + q));
    Ok(Mat::identity(s, s) * c)
}

/// Solves P = (1−δ)AᵀPA + Q.
pub fn example1_lower_matrix(a: &Mat, q: &Mat, delta: f64) -> Result<Mat> {
    let s = a.nrows();
    let at = a.transpose();
    let lhs = Mat::identity(s * s, s * s) - kron(&at, &at) * (1.0 - delta);
    let x = lhs.lu().solve(&vec(q)).ok_or(Error::SingularBlock)?;
    Ok(symmetrize(&unvec(&x, s)?))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceBounds {
    pub delta: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Lower/upper bounds on Tr(P*) over a δ grid; +∞ at or below δ*.
/// `e_trinv_at(δ)` returns E[1{r≠0}Tr(Σ_r⁻¹)] for that δ.
pub fn example1_trace_bounds<F>(a: &Mat, q: &Mat, grid: &[f64], gamma2: f64, e_trinv_at: F) -> Result<Vec<TraceBounds>>
where
    F: Fn(f64) -> Result<f64>,
{
    let rho = spectral_radius(a)?;
    grid.iter()
        .map(|&delta| {
            if (1.0 - delta) * rho * rho >= 1.0 {
                return Ok(TraceBounds { delta, lower: f64::INFINITY, upper: f64::INFINITY });
            }
            let lower = example1_lower_matrix(a, q, delta)?.trace();
            let upper = tstar_closed_form(a, q, delta, e_trinv_at(delta)?, gamma2)?.trace();
            Ok(TraceBounds { delta, lower, upper })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RaChains {
    pub delta: f64,
    /// (1 − (1−δ)ρ²(A))⁻².
    pub x: f64,
    pub sufficient: f64,
    pub necessary: f64,
}

/// Spectral norms of the sufficient attacker-weight bound (closed-form T* fed to the
/// R^a bound) and of the necessary one built from the Lyapunov lower bound on P*.
/// Requires symmetric A.
pub fn example1_ra_chains(model: &Model, delta: f64, gamma2: f64) -> Result<RaChains> {
    let a = &model.a;
    if (a - a.transpose()).amax() > 1e-12 * a.amax() {
        return Err(Error::StructureMismatch("A must be symmetric".into()));
    }
    let rho = spectral_radius(a)?;
    let eps = 1.0 - (1.0 - delta) * rho * rho;
    let t = tstar_closed_form(a, &model.q, delta, e_trinv(model)?, gamma2)?;
    let sufficient = sym_norm(&ra_lower_bound(model, &t)?);

    let p_low = example1_lower_matrix(a, &model.q, delta)?;
    let p_low_inv = pd_inverse(&p_low)?;
    let eig = nalgebra::SymmetricEigen::new(symmetrize(a));
    let s = a.nrows();
    let mut d_inv = Mat::zeros(s, s);
    for i in 0..s {
        let lam = eig.eigenvalues[i];
        let vi = eig.eigenvectors.column(i);
        let pii = (vi.transpose() * &p_low_inv * vi)[(0, 0)];
        let theta = (1.0 / ((1.0 - delta) * lam * lam) - 1.0) * pii;
        d_inv[(i, i)] = if theta.is_finite() && theta > 0.0 { 1.0 / theta } else { 0.0 };
    }
    let v = &eig.eigenvectors;
    let nec = model.e_ba.transpose() * v * d_inv * v.transpose() * &model.e_ba + attacker_moments(model, &p_low).cov_term;
    Ok(RaChains { delta, x: eps.powi(-2), sufficient, necessary: sym_norm(&symmetrize(&nec)) })
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
