//! Saddle-point policies, closed-loop simulation, cost evaluation and
//! stability checks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix_core::{kron, sqrt_psd_raw, sym_norm, symmetrize, Mat, Vector};
use crate::mgare::{concavity_indicator, f_operator, phi_from_moments, phi_solve, stacked_gain, MgareSolution, Verdict};
use crate::stochastic_model::{attacker_moments, counter_rng, Model, STREAM_DEV, STREAM_SIM};

/// Cap on β(T₀) − T₀.
pub const BETA_SCAN_CAP: usize = 100_000;
/// States beyond this norm flag the run as overflowed.
pub const OVERFLOW_NORM: f64 = 1e100;

/// Stacked saddle controls [u_c; u_a] = −Φ(P;k)⁻¹B(k)ᵀPAx, split by side.
pub fn steady_controls(model: &Model, p: &Mat, bc: &Mat, x: &Vector) -> Result<(Vector, Vector)> {
    let g = saddle_gain(model, p, bc)?;
    let u = g * x;
    let nc = bc.ncols();
    Ok((u.rows(0, nc).into_owned(), u.rows(nc, u.len() - nc).into_owned()))
}

/// −Φ(P;k)⁻¹B(k)ᵀPA, of shape (n_c + n_a)×S.
pub fn saddle_gain(model: &Model, p: &Mat, bc: &Mat) -> Result<Mat> {
    let mo = attacker_moments(model, p);
    gain_with_moments(model, p, bc, &mo)
}

fn gain_with_moments(model: &Model, p: &Mat, bc: &Mat, mo: &crate::stochastic_model::AttackerMoments) -> Result<Mat> {
    let blocks = phi_from_moments(model, p, bc, mo);
    let b = stacked_gain(bc, &mo.e_ba);
    Ok(-phi_solve(&blocks.phi, &(b.transpose() * p * &model.a))?)
}

/// Ξ(k) = (I − B(k)Φ(P;k)⁻¹B(k)ᵀP)A.
pub fn xi_matrix(model: &Model, p: &Mat, bc: &Mat) -> Result<Mat> {
    let g = saddle_gain(model, p, bc)?;
    Ok(&model.a + stacked_gain(bc, &model.e_ba) * g)
}

/// E[Ξ(k)⊗Ξ(k)] over the controller atoms.
pub fn xi_kron_mean(model: &Model, p: &Mat) -> Result<Mat> {
    let s = model.s();
    let mo = attacker_moments(model, p);
    let pool = &model.pool;
    model.exec.try_sum_mat(pool.bc_samples.len(), s * s, s * s, |i| {
        let bc = &pool.bc_samples[i];
        let xi = &model.a + stacked_gain(bc, &mo.e_ba) * gain_with_moments(model, p, bc, &mo)?;
        Ok(kron(&xi, &xi) * pool.bc_weights[i])
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MsCheck {
    pub stabilizing: bool,
    pub rho: f64,
}

/// ρ(E[Ξ⊗Ξ]) < 1.
pub fn ms_stabilizing_check(model: &Model, solution: &MgareSolution) -> Result<MsCheck> {
    let rho = crate::matrix_core::spectral_radius(&xi_kron_mean(model, &solution.p_star)?)?;
    Ok(MsCheck { stabilizing: rho < 1.0, rho })
}

/// max{‖x(0)‖², ‖N‖²}·Tr(Σ_{i<T₀} E[Ξ⊗Ξ]^i); +∞ on overflow.
pub fn alpha(model: &Model, p_star: &Mat, t0: usize) -> Result<f64> {
    let k = xi_kron_mean(model, p_star)?;
    let scale = model.x0.norm_squared().max(sym_norm(&model.noise).powi(2));
    let n = k.nrows();
    let mut pow = Mat::identity(n, n);
    let mut tr = 0.0;
    for _ in 0..t0 {
        tr += pow.trace();
        if !tr.is_finite() || !pow.amax().is_finite() {
            return Ok(f64::INFINITY);
        }
        pow = &pow * &k;
    }
    let a = scale * tr;
    Ok(if a.is_finite() { a } else { f64::INFINITY })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Beta {
    Finite(usize),
    Unbounded,
}

/// Smallest β ≥ T₀ with ‖P* − f^{β−T₀}(Q)‖·α(T₀) < 1, scanning at most [`BETA_SCAN_CAP`] steps.
pub fn beta(model: &Model, p_star: &Mat, t0: usize, alpha_t0: f64) -> Result<Beta> {
    if !alpha_t0.is_finite() {
        return Ok(Beta::Unbounded);
    }
    let mut fj = model.q.clone();
    for j in 0..=BETA_SCAN_CAP {
        if sym_norm(&(p_star - &fj)) * alpha_t0 < 1.0 {
            return Ok(Beta::Finite(t0 + j));
        }
        let next = f_operator(model, &fj)?;
        // iterates have stalled short of the target
        if sym_norm(&(&next - &fj)) <= 1e-16 * sym_norm(&next) {
            return Ok(Beta::Unbounded);
        }
        fj = next;
    }
    Ok(Beta::Unbounded)
}

#[derive(Debug, Clone, Serialize)]
pub enum PolicyKind {
    SteadyState {
        #[serde(serialize_with = "crate::report::ser_mat")]
        p: Mat,
    },
    /// Slot k < T₀ uses P*; slot T₀ ≤ k < β uses f^{β−k−1}(Q) = `f_seq[β−k−1]`.
    Saddle {
        t0: usize,
        beta: usize,
        #[serde(skip)]
        p_star: Mat,
        #[serde(skip)]
        f_seq: Vec<Mat>,
    },
    /// Realization-independent stacked gains [D_c; D_a] per slot; the last one repeats.
    Custom {
        #[serde(skip)]
        gains: Vec<Mat>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub alpha: Option<f64>,
    pub beta: Option<Beta>,
}

impl PolicySpec {
    pub fn steady(p: Mat) -> Self {
        PolicySpec { kind: PolicyKind::SteadyState { p }, alpha: None, beta: None }
    }

    /// Riccati matrix used at slot k, or `None` for custom gains / beyond the horizon.
    pub fn p_at(&self, k: usize) -> Option<&Mat> {
        match &self.kind {
            PolicyKind::SteadyState { p } => Some(p),
            PolicyKind::Saddle { t0, beta, p_star, f_seq } => {
                if k < *t0 {
                    Some(p_star)
                } else if k < *beta {
                    f_seq.get(beta - k - 1)
                } else {
                    None
                }
            }
            PolicyKind::Custom { .. } => None,
        }
    }

    /// Last slot index + 1 the policy covers.
    pub fn horizon_limit(&self) -> Option<usize> {
        match &self.kind {
            PolicyKind::Saddle { beta, .. } => Some(*beta),
            _ => None,
        }
    }
}

/// Saddle policy with prefix length T₀.
pub fn build_saddle_policy(model: &Model, t0: usize, solution: &MgareSolution) -> Result<PolicySpec> {
    if solution.verdict != Verdict::Exists {
        return Err(Error::Precondition(format!("MGARE verdict is {:?}", solution.verdict)));
    }
    let a = alpha(model, &solution.p_star, t0)?;
    let b = match beta(model, &solution.p_star, t0, a)? {
        Beta::Finite(b) => b,
        Beta::Unbounded => return Err(Error::Precondition(format!("β({t0}) is unbounded"))),
    };
    let mut f_seq = vec![model.q.clone()];
    for _ in 0..(b - t0) {
        let next = f_operator(model, f_seq.last().unwrap())?;
        f_seq.push(next);
    }
    Ok(PolicySpec {
        kind: PolicyKind::Saddle { t0, beta: b, p_star: solution.p_star.clone(), f_seq },
        alpha: Some(a),
        beta: Some(Beta::Finite(b)),
    })
}

/// Tr(P*·N) with N = W + Σ B_i V B_iᵀ.
pub fn game_value(model: &Model, p_star: &Mat) -> f64 {
    (p_star * &model.noise).trace()
}

/// Finite-horizon minimax value (1/K)‖x₀‖²_{f^K(Q)−Q} + (1/K)·Σ_{k<K} Tr(f^k(Q)·N).
pub fn analytic_jk(model: &Model, k: usize, x0: &Vector) -> Result<f64> {
    if k == 0 {
        return Err(Error::Precondition("horizon K must be at least 1".into()));
    }
    let mut fj = model.q.clone();
    let mut acc = 0.0;
    for j in 0..k {
        if !concavity_indicator(model, &fj) {
            return Err(Error::ConcavityLost { iter: j });
        }
        acc += (&fj * &model.noise).trace();
        fj = f_operator(model, &fj)?;
    }
    let d = &fj - &model.q;
    Ok(((x0.transpose() * d * x0)[(0, 0)] + acc) / k as f64)
}

// ---- simulation ------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Averaged slots after burn-in.
    pub horizon: usize,
    pub burn_in: usize,
    pub runs: usize,
    pub seed: u64,
    /// Number of leading runs whose full trajectories are kept.
    pub record: usize,
}

impl SimOptions {
    /// Burn-in of K/10 ahead of the K averaged slots.
    pub fn new(horizon: usize, runs: usize, seed: u64) -> Self {
        SimOptions { horizon, burn_in: horizon / 10, runs, seed, record: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyTrace {
    pub run: usize,
    pub states: Vec<Vec<f64>>,
    pub u_c: Vec<Vec<f64>>,
    pub u_a: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    pub bc_index: Vec<usize>,
    pub ba_index: Vec<usize>,
    pub noise: Vec<Vec<f64>>,
    pub overflow: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub empirical_j: f64,
    pub std_error: f64,
    pub analytic_j: Option<f64>,
    pub horizon: usize,
    pub burn_in: usize,
    pub runs: usize,
    pub overflow_runs: usize,
    /// Per-run time-averaged costs (overflowed runs omitted).
    pub run_costs: Vec<f64>,
}

/// Additive per-run gain perturbations, relative to the Frobenius norm of the stacked NE gain.
#[derive(Debug, Clone, Copy, Default)]
pub struct Perturbation {
    pub controller: f64,
    pub attacker: f64,
}

struct GainTable {
    /// gains[set][atom] stacked [K_c; K_a]
    sets: Vec<Vec<Mat>>,
    /// slot → set, last entry repeats
    schedule: Vec<usize>,
    /// custom gains ignore the atom
    atom_free: bool,
}

impl GainTable {
    fn get(&self, k: usize, atom: usize) -> &Mat {
        let set = self.schedule[k.min(self.schedule.len() - 1)];
        &self.sets[set][if self.atom_free { 0 } else { atom }]
    }
}

fn gains_for(model: &Model, p: &Mat) -> Result<Vec<Mat>> {
    let mo = attacker_moments(model, p);
    model
        .exec
        .map(model.pool.bc_samples.len(), |i| gain_with_moments(model, p, &model.pool.bc_samples[i], &mo))
        .into_iter()
        .collect()
}

fn gain_table(model: &Model, policy: &PolicySpec, total: usize) -> Result<GainTable> {
    match &policy.kind {
        PolicyKind::SteadyState { p } => Ok(GainTable { sets: vec![gains_for(model, p)?], schedule: vec![0], atom_free: false }),
        PolicyKind::Saddle { t0, beta, p_star, f_seq } => {
            if total > *beta {
                return Err(Error::Precondition(format!("policy covers {beta} slots, {total} requested")));
            }
            let mut sets = vec![gains_for(model, p_star)?];
            for p in f_seq {
                sets.push(gains_for(model, p)?);
            }
            let schedule = (0..total.max(1)).map(|k| if k < *t0 { 0 } else { 1 + (beta - k - 1) }).collect();
            Ok(GainTable { sets, schedule, atom_free: false })
        }
        PolicyKind::Custom { gains } => {
            if gains.is_empty() {
                return Err(Error::Precondition("custom policy has no gains".into()));
            }
            Ok(GainTable { sets: gains.iter().map(|g| vec![g.clone()]).collect(), schedule: (0..gains.len()).collect(), atom_free: true })
        }
    }
}

fn cdf(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw_index(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn random_direction(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    let z = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = z.norm();
    if n > 0.0 {
        z / n
    } else {
        z
    }
}

struct RunOutput {
    cost: f64,
    overflow: bool,
    trace: Option<PolicyTrace>,
}

struct SimContext<'a> {
    model: &'a Model,
    table: GainTable,
    bc_cdf: Vec<f64>,
    ba_cdf: Vec<f64>,
    w_half: Mat,
    v_half: Mat,
    nc: usize,
    /// Weighted mean Frobenius norm of the stacked gain [K_c; K_a].
    gain_scale: f64,
}

impl<'a> SimContext<'a> {
    fn new(model: &'a Model, policy: &PolicySpec, total: usize) -> Result<Self> {
        let table = gain_table(model, policy, total)?;
        let nc = model.dims.bc_cols();
        let w = if table.atom_free { vec![1.0] } else { model.pool.bc_weights.clone() };
        let gain_scale = table.sets[table.schedule[0]].iter().zip(&w).map(|(g, wi)| wi * g.norm()).sum();
        Ok(SimContext {
            model,
            table,
            bc_cdf: cdf(&model.pool.bc_weights),
            ba_cdf: cdf(&model.pool.ba_weights),
            w_half: sqrt_psd_raw(&symmetrize(&model.w)),
            v_half: sqrt_psd_raw(&symmetrize(&model.v)),
            nc,
            gain_scale,
        })
    }

    fn run(&self, opts: &SimOptions, run: usize, pert: Perturbation) -> RunOutput {
        let m = self.model;
        let s = m.s();
        let nc = self.nc;
        let na = m.dims.ba_cols();
        let n_r = m.dims.n_r;
        let mut dev_rng = counter_rng(opts.seed, STREAM_DEV, run as u64);
        let dc = random_direction(&mut dev_rng, nc, s) * (pert.controller * self.gain_scale);
        let da = random_direction(&mut dev_rng, na, s) * (pert.attacker * self.gain_scale);

        let mut rng = counter_rng(opts.seed, STREAM_SIM, run as u64);
        let total = opts.burn_in + opts.horizon;
        let record = run < opts.record;
        let mut trace = record.then(|| PolicyTrace {
            run,
            states: Vec::with_capacity(total + 1),
            u_c: vec![],
            u_a: vec![],
            stage_costs: vec![],
            bc_index: vec![],
            ba_index: vec![],
            noise: vec![],
            overflow: false,
        });
        let mut x = m.x0.clone();
        if let Some(t) = trace.as_mut() {
            t.states.push(x.iter().copied().collect());
        }
        let mut acc = 0.0;
        let mut overflow = false;
        let mut zw = Vector::zeros(s);
        let mut zv = Vector::zeros(n_r);
        for k in 0..total {
            let ic = draw_index(&self.bc_cdf, rng.random::<f64>());
            let ia = draw_index(&self.ba_cdf, rng.random::<f64>());
            let g = self.table.get(k, ic);
            let mut uc = g.rows(0, nc) * &x;
            let mut ua = g.rows(nc, na) * &x;
            if pert.controller != 0.0 {
                uc += &dc * &x;
            }
            if pert.attacker != 0.0 {
                ua += &da * &x;
            }
            zw.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
            let mut noise = &self.w_half * &zw;
            for b in &m.b_list {
                zv.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
                noise += b * (&self.v_half * &zv);
            }
            let bc = &m.pool.bc_samples[ic];
            let ba = &m.pool.ba_samples[ia];
            let x_next = &m.a * &x + bc * &uc + ba * &ua + &noise;
            let stage = (x_next.transpose() * &m.q * &x_next)[(0, 0)] + (uc.transpose() * &m.rc * &uc)[(0, 0)]
                - (ua.transpose() * &m.ra * &ua)[(0, 0)];
            if k >= opts.burn_in {
                acc += stage;
            }
            if let Some(t) = trace.as_mut() {
                t.u_c.push(uc.iter().copied().collect());
                t.u_a.push(ua.iter().copied().collect());
                t.stage_costs.push(stage);
                t.bc_index.push(ic);
                t.ba_index.push(ia);
                t.noise.push(noise.iter().copied().collect());
                t.states.push(x_next.iter().copied().collect());
            }
            x = x_next;
            let nx = x.norm();
            if !nx.is_finite() || nx > OVERFLOW_NORM {
                overflow = true;
                break;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.overflow = overflow;
        }
        RunOutput { cost: acc / opts.horizon.max(1) as f64, overflow, trace }
    }
}

fn summarize(outs: &[RunOutput], opts: &SimOptions, analytic_j: Option<f64>) -> CostReport {
    let run_costs: Vec<f64> = outs.iter().filter(|o| !o.overflow).map(|o| o.cost).collect();
    let (mean, se) = mean_se(&run_costs);
    CostReport {
        empirical_j: mean,
        std_error: se,
        analytic_j,
        horizon: opts.horizon,
        burn_in: opts.burn_in,
        runs: opts.runs,
        overflow_runs: outs.len() - run_costs.len(),
        run_costs,
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the closed loop; returns the recorded traces and the cost report.
pub fn simulate(model: &Model, policy: &PolicySpec, opts: &SimOptions) -> Result<(Vec<PolicyTrace>, CostReport)> {
    simulate_perturbed(model, policy, opts, Perturbation::default())
}

pub fn simulate_perturbed(model: &Model, policy: &PolicySpec, opts: &SimOptions, pert: Perturbation) -> Result<(Vec<PolicyTrace>, CostReport)> {
    if opts.runs == 0 || opts.horizon == 0 {
        return Err(Error::Precondition("runs and horizon must be positive".into()));
    }
    let total = opts.burn_in + opts.horizon;
    let ctx = SimContext::new(model, policy, total)?;
    let mut outs = model.exec.map(opts.runs, |r| ctx.run(opts, r, pert));
    let analytic = match &policy.kind {
        PolicyKind::SteadyState { p } => Some(game_value(model, p)),
        _ => None,
    };
    let report = summarize(&outs, opts, analytic);
    let traces = outs.iter_mut().filter_map(|o| o.trace.take()).collect();
    Ok((traces, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub ne_cost: f64,
    pub ne_se: f64,
    /// J(perturbed u_c, NE u_a) − J(NE); expected ≥ 0.
    pub controller_dev_delta: f64,
    pub controller_se: f64,
    /// J(NE u_c, perturbed u_a) − J(NE); expected ≤ 0.
    pub attacker_dev_delta: f64,
    pub attacker_se: f64,
}

/// Unilateral gain perturbations of relative size `scale`, paired run by run with the NE runs.
pub fn saddle_deviation_test(model: &Model, solution: &MgareSolution, opts: &SimOptions, scale: f64) -> Result<DeviationReport> {
    if solution.verdict != Verdict::Exists {
        return Err(Error::Precondition(format!("MGARE verdict is {:?}", solution.verdict)));
    }
    let policy = PolicySpec::steady(solution.p_star.clone());
    let opts = SimOptions { record: 0, ..*opts };
    let ctx = SimContext::new(model, &policy, opts.burn_in + opts.horizon)?;
    let run_all = |pert: Perturbation| model.exec.map(opts.runs, |r| ctx.run(&opts, r, pert));
    let ne = run_all(Perturbation::default());
    let dc = run_all(Perturbation { controller: scale, attacker: 0.0 });
    let da = run_all(Perturbation { controller: 0.0, attacker: scale });
    let paired = |dev: &[RunOutput]| {
        let d: Vec<f64> = ne.iter().zip(dev).filter(|(a, b)| !a.overflow && !b.overflow).map(|(a, b)| b.cost - a.cost).collect();
        mean_se(&d)
    };
    let (ne_cost, ne_se) = mean_se(&ne.iter().filter(|o| !o.overflow).map(|o| o.cost).collect::<Vec<_>>());
    let (cd, cse) = paired(&dc);
    let (ad, ase) = paired(&da);
    Ok(DeviationReport { ne_cost, ne_se, controller_dev_delta: cd, controller_se: cse, attacker_dev_delta: ad, attacker_se: ase })
}

// ---- completed-squares representations -------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Lemma4Forms {
    /// E[J_K] by second-moment propagation.
    pub direct: f64,
    /// J̄_K + Σ E[‖e_c‖²_{S_c} − ‖e_a − Φ₃⁻¹Φ₂ᵀe_c‖²_{Φ₃}]/K.
    pub upper: f64,
    /// J̄_K + Σ E[‖e_c + Φ₁⁻¹Φ₂e_a‖²_{Φ₁} − ‖e_a‖²_{Φ₃+Φ₂ᵀΦ₁⁻¹Φ₂}]/K.
    pub lower: f64,
    /// Minimax constant J̄_K.
    pub minimax: f64,
}

/// Evaluates J_K for fixed linear policies u_c = D_c(k)x, u_a = D_a(k)x started
/// from second moment `x0_moment`, together with both completed-squares forms.
pub fn lemma4_forms(model: &Model, k_horizon: usize, x0_moment: &Mat, dc: &[Mat], da: &[Mat]) -> Result<Lemma4Forms> {
    let s = model.s();
    let (nc, na) = (model.dims.bc_cols(), model.dims.ba_cols());
    if dc.len() < k_horizon || da.len() < k_horizon || k_horizon == 0 {
        return Err(Error::Precondition("one gain pair per slot is required".into()));
    }
    if dc.iter().any(|d| d.shape() != (nc, s)) || da.iter().any(|d| d.shape() != (na, s)) {
        return Err(Error::Dimension("policy gain shapes".into()));
    }
    // f^j(Q), j = 0..K
    let mut fs = vec![model.q.clone()];
    for j in 0..k_horizon {
        if !concavity_indicator(model, &fs[j]) {
            return Err(Error::ConcavityLost { iter: j });
        }
        let next = f_operator(model, &fs[j])?;
        fs.push(next);
    }
    let kf = k_horizon as f64;
    let noise_part: f64 = fs[..k_horizon].iter().map(|f| (f * &model.noise).trace()).sum();
    let minimax = ((&fs[k_horizon] - &model.q) * x0_moment).trace() / kf + noise_part / kf;

    let pool = &model.pool;
    let mut x = symmetrize(x0_moment);
    let (mut direct, mut up, mut low) = (0.0, 0.0, 0.0);
    for k in 0..k_horizon {
        let p = &fs[k_horizon - k - 1];
        let mo = attacker_moments(model, p);
        let (dck, dak) = (&dc[k], &da[k]);
        let mut x_next = model.noise.clone();
        for (bc, &wc) in pool.bc_samples.iter().zip(&pool.bc_weights) {
            for (ba, &wa) in pool.ba_samples.iter().zip(&pool.ba_weights) {
                let cl = &model.a + bc * dck + ba * dak;
                x_next += &cl * &x * cl.transpose() * (wc * wa);
            }
            let blocks = phi_from_moments(model, p, bc, &mo);
            let g = -phi_solve(&blocks.phi, &(stacked_gain(bc, &mo.e_ba).transpose() * p * &model.a))?;
            let ec = dck - g.rows(0, nc);
            let ea = dak - g.rows(nc, na);
            let phi3_inv_phi2t = phi_solve(&blocks.phi3, &blocks.phi2.transpose())?;
            let s_c = &blocks.phi1 + &blocks.phi2 * &phi3_inv_phi2t;
            let ea_shift = &ea - &phi3_inv_phi2t * &ec;
            up += wc * ((ec.transpose() * s_c * &ec - ea_shift.transpose() * &blocks.phi3 * &ea_shift) * &x).trace();
            let phi1_inv_phi2 = phi_solve(&blocks.phi1, &blocks.phi2)?;
            let s_a = &blocks.phi3 + blocks.phi2.transpose() * &phi1_inv_phi2;
            let ec_shift = &ec + &phi1_inv_phi2 * &ea;
            low += wc * ((ec_shift.transpose() * &blocks.phi1 * &ec_shift - ea.transpose() * s_a * &ea) * &x).trace();
        }
        let x_next = symmetrize(&x_next);
        let stage = (&model.q * &x_next).trace() + (dck.transpose() * &model.rc * dck * &x).trace()
            - (dak.transpose() * &model.ra * dak * &x).trace();
        direct += stage;
        x = x_next;
    }
    Ok(Lemma4Forms { direct: direct / kf, upper: minimax + up / kf, lower: minimax + low / kf, minimax })
}
