//! Scenarios, channel distributions, frozen sample pools and the expectations
//! computed on them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix_core::{is_pd, is_psd, symmetrize, Mat, Vector, TOL_PD};

/// Default cap on the enumerated joint support.
pub const M_CAP: usize = 4096;

/// Stream tags for counter-based seeding.
pub(crate) const STREAM_BC: u64 = 1;
pub(crate) const STREAM_BA: u64 = 2;
pub(crate) const STREAM_SIM: u64 = 3;
pub(crate) const STREAM_DEV: u64 = 4;

/// RNG for item `index` of stream `tag`, derived from `seed` only.
pub fn counter_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 56) ^ index);
    rng
}

/// Row-major nested-array (de)serialization for matrices.
pub mod serde_mat {
    use super::Mat;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Mat, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(format!("row {i} has {} entries, expected {c}", row.len()));
            }
        }
        Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(rows).map_err(D::Error::custom)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            all.into_iter()
                .enumerate()
                .map(|(k, rows)| from_rows(rows).map_err(|e| D::Error::custom(format!("matrix {k}: {e}"))))
                .collect()
        }
    }
}

/// Distribution of one player's stacked channel `[H_{j,1}; …; H_{j,N}]`
/// of shape (N·N_r)×N_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    FiniteSupport {
        #[serde(with = "serde_mat::list")]
        atoms: Vec<Mat>,
        probs: Vec<f64>,
    },
    /// Independent Gaussian entries; `variance` is entrywise.
    GaussianIid {
        #[serde(with = "serde_mat")]
        mean: Mat,
        #[serde(with = "serde_mat")]
        variance: Mat,
    },
    BernoulliGated { p: f64, inner: Box<ChannelModel> },
}

impl ChannelModel {
    pub fn deterministic(h: Mat) -> Self {
        ChannelModel::FiniteSupport { atoms: vec![h], probs: vec![1.0] }
    }

    pub fn gated(p: f64, inner: ChannelModel) -> Self {
        ChannelModel::BernoulliGated { p, inner: Box::new(inner) }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            ChannelModel::FiniteSupport { atoms, .. } => atoms.first().map(|a| a.shape()),
            ChannelModel::GaussianIid { mean, .. } => Some(mean.shape()),
            ChannelModel::BernoulliGated { inner, .. } => inner.shape(),
        }
    }

    fn validate(&self, key: &str, shape: (usize, usize)) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema { key: key.to_string(), msg });
        match self {
            ChannelModel::FiniteSupport { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return bad(format!("{} atoms but {} probs", atoms.len(), probs.len()));
                }
                if let Some(a) = atoms.iter().find(|a| a.shape() != shape) {
                    return bad(format!("atom shape {:?}, expected {:?}", a.shape(), shape));
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-12 {
                    return bad(format!("probs must lie on the simplex (sum {total})"));
                }
                Ok(())
            }
            ChannelModel::GaussianIid { mean, variance } => {
                if mean.shape() != shape || variance.shape() != shape {
                    return bad(format!("mean/variance shape {:?}/{:?}, expected {:?}", mean.shape(), variance.shape(), shape));
                }
                if variance.iter().any(|&v| v.is_nan() || v < 0.0) {
                    return bad("variances must be nonnegative".into());
                }
                Ok(())
            }
            ChannelModel::BernoulliGated { p, inner } => {
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("gate probability {p} outside [0,1]"));
                }
                inner.validate(&format!("{key}.inner"), shape)
            }
        }
    }

    /// Finite branches; Gaussian leaves stay symbolic.
    fn branches(&self) -> Vec<(Branch, f64)> {
        match self {
            ChannelModel::FiniteSupport { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .map(|(a, &p)| (Branch::Fixed(a.clone()), p))
                .collect(),
            ChannelModel::GaussianIid { mean, variance } => {
                if variance.iter().all(|&v| v == 0.0) {
                    vec![(Branch::Fixed(mean.clone()), 1.0)]
                } else {
                    vec![(Branch::Random, 1.0)]
                }
            }
            ChannelModel::BernoulliGated { p, inner } => {
                let (r, c) = inner.shape().unwrap_or((0, 0));
                let mut out = vec![(Branch::Fixed(Mat::zeros(r, c)), 1.0 - p)];
                out.extend(inner.branches().into_iter().map(|(b, w)| (b, w * p)));
                out
            }
        }
    }

    /// The Gaussian leaf, if any.
    fn gaussian_leaf(&self) -> Option<(&Mat, &Mat)> {
        match self {
            ChannelModel::GaussianIid { mean, variance } => Some((mean, variance)),
            ChannelModel::BernoulliGated { inner, .. } => inner.gaussian_leaf(),
            ChannelModel::FiniteSupport { .. } => None,
        }
    }

    /// One i.i.d. draw of the full model.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Mat {
        match self {
            ChannelModel::FiniteSupport { atoms, probs } => atoms[pick(probs, rng.random::<f64>())].clone(),
            ChannelModel::GaussianIid { mean, variance } => gaussian_draw(mean, variance, rng),
            ChannelModel::BernoulliGated { p, inner } => {
                let on = rng.random::<f64>() < *p;
                let h = inner.sample(rng);
                if on {
                    h
                } else {
                    Mat::zeros(h.nrows(), h.ncols())
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Branch {
    Fixed(Mat),
    Random,
}

fn gaussian_draw(mean: &Mat, variance: &Mat, rng: &mut ChaCha8Rng) -> Mat {
    let mut out = mean.clone();
    for (o, v) in out.iter_mut().zip(variance.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        *o += v.sqrt() * z;
    }
    out
}

/// Index drawn from discrete weights given a uniform `u` in [0,1).
pub fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// All players of one side plus an optional gate shared by every player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_gate: Option<f64>,
    pub players: Vec<ChannelModel>,
}

fn default_samples() -> usize {
    2000
}

/// Full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(with = "serde_mat")]
    pub a: Mat,
    #[serde(with = "serde_mat::list")]
    pub b_list: Vec<Mat>,
    #[serde(with = "serde_mat")]
    pub q: Mat,
    #[serde(with = "serde_mat")]
    pub rc: Mat,
    #[serde(with = "serde_mat")]
    pub ra: Mat,
    #[serde(with = "serde_mat")]
    pub w: Mat,
    #[serde(with = "serde_mat")]
    pub v: Mat,
    pub x0: Vec<f64>,
    pub n_r: usize,
    pub nt_c: usize,
    pub nt_a: usize,
    pub controllers: ChannelGrid,
    pub attackers: ChannelGrid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub s: usize,
    pub n_r: usize,
    pub nt_c: usize,
    pub nt_a: usize,
    pub n_c: usize,
    pub n_a: usize,
    pub n_act: usize,
}

impl Dims {
    pub fn bc_cols(&self) -> usize {
        self.nt_c * self.n_c
    }
    pub fn ba_cols(&self) -> usize {
        self.nt_a * self.n_a
    }
}

impl Scenario {
    pub fn dims(&self) -> Dims {
        Dims {
            s: self.a.nrows(),
            n_r: self.n_r,
            nt_c: self.nt_c,
            nt_a: self.nt_a,
            n_c: self.controllers.players.len(),
            n_a: self.attackers.players.len(),
            n_act: self.b_list.len(),
        }
    }

    /// Checks dimension consistency and definiteness.
    pub fn validate(&self) -> Result<Dims> {
        let d = self.dims();
        let bad = |key: &str, msg: String| Err(Error::Schema { key: key.to_string(), msg });
        if self.a.shape() != (d.s, d.s) || d.s == 0 {
            return bad("a", format!("must be square and nonempty, got {:?}", self.a.shape()));
        }
        if d.n_act == 0 {
            return bad("b_list", "needs at least one actuator".into());
        }
        for (i, b) in self.b_list.iter().enumerate() {
            if b.shape() != (d.s, d.n_r) {
                return bad(&format!("b_list[{i}]"), format!("shape {:?}, expected {:?}", b.shape(), (d.s, d.n_r)));
            }
        }
        let square = |key: &str, m: &Mat, n: usize| -> Result<()> {
            if m.shape() != (n, n) {
                return Err(Error::Schema { key: key.into(), msg: format!("shape {:?}, expected {:?}", m.shape(), (n, n)) });
            }
            Ok(())
        };
        square("q", &self.q, d.s)?;
        square("rc", &self.rc, d.bc_cols())?;
        square("ra", &self.ra, d.ba_cols())?;
        square("w", &self.w, d.s)?;
        square("v", &self.v, d.n_r)?;
        for (key, m) in [("q", &self.q), ("rc", &self.rc), ("ra", &self.ra)] {
            if !is_pd(m, TOL_PD) {
                return bad(key, "must be positive definite".into());
            }
        }
        for (key, m) in [("w", &self.w), ("v", &self.v)] {
            if !is_psd(m) {
                return bad(key, "must be positive semidefinite".into());
            }
        }
        if self.x0.len() != d.s {
            return bad("x0", format!("length {}, expected {}", self.x0.len(), d.s));
        }
        if d.n_c == 0 || d.n_a == 0 {
            return bad("controllers/attackers", "each side needs at least one player".into());
        }
        for (side, grid, nt) in [("controllers", &self.controllers, d.nt_c), ("attackers", &self.attackers, d.nt_a)] {
            if let Some(g) = grid.common_gate {
                if !(0.0..=1.0).contains(&g) {
                    return bad(&format!("{side}.common_gate"), format!("{g} outside [0,1]"));
                }
            }
            for (j, m) in grid.players.iter().enumerate() {
                m.validate(&format!("{side}.players[{j}]"), (d.n_act * d.n_r, nt))?;
            }
        }
        if self.samples == 0 {
            return bad("samples", "must be at least 1".into());
        }
        Ok(d)
    }

    /// Plant noise plus channel noise routed through the actuators: W + Σ B_i V B_iᵀ.
    pub fn noise_cov(&self) -> Mat {
        let mut n = self.w.clone();
        for b in &self.b_list {
            n += b * &self.v * b.transpose();
        }
        symmetrize(&n)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let line_of = |e: &toml::de::Error| e.span().map(|sp| s[..sp.start].matches('\n').count() + 1);
        let de = toml::Deserializer::parse(s).map_err(|e| Error::Schema {
            key: "<toml>".into(),
            msg: match line_of(&e) {
                Some(l) => format!("line {l}: {}", e.message()),
                None => e.message().to_string(),
            },
        })?;
        let scn: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = match line_of(e.inner()) {
                Some(l) => format!("line {l}: {}", e.inner().message()),
                None => e.inner().message().to_string(),
            };
            Error::Schema { key: e.path().to_string(), msg }
        })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let scn: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Schema { key: e.path().to_string(), msg: e.inner().to_string() })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Loads `.json` files as JSON and everything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            self.to_json_string()?
        } else {
            self.to_toml_string()?
        };
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Aggregated gain: column block j equals Σ_i B_i·H_{j,i}. `grid[j][i]` is N_r×N_t.
pub fn assemble_gain(b_list: &[Mat], grid: &[Vec<Mat>]) -> Result<Mat> {
    let s = b_list.first().map_or(0, |b| b.nrows());
    let n_r = b_list.first().map_or(0, |b| b.ncols());
    let nt = grid.first().and_then(|r| r.first()).map_or(0, |h| h.ncols());
    let mut out = Mat::zeros(s, nt * grid.len());
    for (j, row) in grid.iter().enumerate() {
        if row.len() != b_list.len() {
            return Err(Error::Dimension(format!("player {j}: {} links for {} actuators", row.len(), b_list.len())));
        }
        for (b, h) in b_list.iter().zip(row) {
            if h.shape() != (n_r, nt) || b.shape() != (s, n_r) {
                return Err(Error::Dimension(format!("link shape {:?}, expected {:?}", h.shape(), (n_r, nt))));
            }
            let mut blk = out.view_mut((0, j * nt), (s, nt));
            blk += b * h;
        }
    }
    Ok(out)
}

/// Splits a stacked (N·N_r)×N_t player channel into its N blocks.
pub fn split_stacked(h: &Mat, n_act: usize, n_r: usize) -> Vec<Mat> {
    (0..n_act).map(|i| h.rows(i * n_r, n_r).into_owned()).collect()
}

/// B^c(k) from per-player stacked controller channels (Eq. 4 layout).
pub fn assemble_bc(scn: &Scenario, stacked: &[Mat]) -> Result<Mat> {
    let grid: Vec<Vec<Mat>> = stacked.iter().map(|h| split_stacked(h, scn.b_list.len(), scn.n_r)).collect();
    assemble_gain(&scn.b_list, &grid)
}

/// B^a(k) from per-player stacked attacker channels (Eq. 5 layout).
pub fn assemble_ba(scn: &Scenario, stacked: &[Mat]) -> Result<Mat> {
    assemble_bc(scn, stacked)
}

/// Frozen weighted set of channel realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    pub seed: u64,
    pub m: usize,
    pub bc_samples: Vec<Mat>,
    pub bc_weights: Vec<f64>,
    pub ba_samples: Vec<Mat>,
    pub ba_weights: Vec<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolOptions {
    pub force_exact: bool,
    pub m_cap: usize,
    pub exec: Exec,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions { force_exact: false, m_cap: M_CAP, exec: Exec::default() }
    }
}

struct SidePool {
    samples: Vec<Mat>,
    weights: Vec<f64>,
    exact: bool,
}

fn build_side(scn: &Scenario, grid: &ChannelGrid, tag: u64, seed: u64, m: usize, opts: &PoolOptions) -> Result<SidePool> {
    let players = &grid.players;
    let per_player: Vec<Vec<(Branch, f64)>> = players.iter().map(|p| p.branches()).collect();
    let gate = grid.common_gate.unwrap_or(1.0);
    let combos: usize = per_player.iter().map(|b| b.len()).product::<usize>();
    let has_random = per_player.iter().flatten().any(|(b, _)| matches!(b, Branch::Random));
    let shape = (scn.b_list.len() * scn.n_r, players.first().and_then(|p| p.shape()).map_or(0, |s| s.1));
    let zero_gain = || assemble_bc(scn, &vec![Mat::zeros(shape.0, shape.1); players.len()]);

    if combos > opts.m_cap || (has_random && opts.force_exact) {
        if opts.force_exact {
            return Err(Error::SupportTooLarge { size: if has_random { usize::MAX } else { combos }, cap: opts.m_cap });
        }
        // Plain i.i.d. draws of the full model.
        let samples = opts
            .exec
            .map(m, |i| {
                let mut rng = counter_rng(seed, tag, i as u64);
                let on = rng.random::<f64>() < gate;
                let hs: Vec<Mat> = players
                    .iter()
                    .map(|p| {
                        let h = p.sample(&mut rng);
                        if on { h } else { Mat::zeros(h.nrows(), h.ncols()) }
                    })
                    .collect();
                assemble_bc(scn, &hs)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        return Ok(SidePool { weights: vec![1.0 / m as f64; m], samples, exact: false });
    }

    // Gaussian leaves drawn once per sample index and shared by every finite combination.
    let draws: Vec<Vec<Option<Mat>>> = if has_random {
        opts.exec.map(m, |i| {
            let mut rng = counter_rng(seed, tag, i as u64);
            players
                .iter()
                .map(|p| p.gaussian_leaf().map(|(mean, var)| gaussian_draw(mean, var, &mut rng)))
                .collect()
        })
    } else {
        Vec::new()
    };

    let mut samples = Vec::new();
    let mut weights = Vec::new();
    if gate < 1.0 {
        samples.push(zero_gain()?);
        weights.push(1.0 - gate);
    }
    if gate > 0.0 {
        let mut idx = vec![0usize; players.len()];
        'outer: loop {
            let w: f64 = gate * idx.iter().zip(&per_player).map(|(&k, b)| b[k].1).product::<f64>();
            if w > 0.0 {
                let random_here = idx.iter().zip(&per_player).any(|(&k, b)| matches!(b[k].0, Branch::Random));
                let build = |i: Option<usize>| -> Result<Mat> {
                    let hs: Vec<Mat> = idx
                        .iter()
                        .zip(&per_player)
                        .enumerate()
                        .map(|(j, (&k, b))| match &b[k].0 {
                            Branch::Fixed(h) => h.clone(),
                            Branch::Random => draws[i.expect("random branch needs a draw")][j].clone().expect("gaussian leaf"),
                        })
                        .collect();
                    assemble_bc(scn, &hs)
                };
                if random_here {
                    let block = opts.exec.map(m, |i| build(Some(i))).into_iter().collect::<Result<Vec<_>>>()?;
                    samples.extend(block);
                    weights.extend(std::iter::repeat_n(w / m as f64, m));
                } else {
                    samples.push(build(None)?);
                    weights.push(w);
                }
            }
            for j in 0..idx.len() {
                idx[j] += 1;
                if idx[j] < per_player[j].len() {
                    continue 'outer;
                }
                idx[j] = 0;
            }
            break;
        }
    }
    Ok(SidePool { samples, weights, exact: !has_random })
}

/// Builds the frozen pool. Finite-support factors (gates, finite atoms) are
/// enumerated with their weights; Gaussian factors are drawn `m` times with
/// counter-based seeding.
pub fn build_pool(scn: &Scenario, seed: u64, m: usize, force_exact: bool) -> Result<SamplePool> {
    build_pool_with(scn, seed, m, &PoolOptions { force_exact, ..PoolOptions::default() })
}

pub fn build_pool_with(scn: &Scenario, seed: u64, m: usize, opts: &PoolOptions) -> Result<SamplePool> {
    if m == 0 {
        return Err(Error::Precondition("pool size M must be at least 1".into()));
    }
    scn.validate()?;
    let bc = build_side(scn, &scn.controllers, STREAM_BC, seed, m, opts)?;
    let ba = build_side(scn, &scn.attackers, STREAM_BA, seed, m, opts)?;
    Ok(SamplePool {
        seed,
        m,
        exact: bc.exact && ba.exact,
        bc_samples: bc.samples,
        bc_weights: bc.weights,
        ba_samples: ba.samples,
        ba_weights: ba.weights,
    })
}

impl SamplePool {
    pub fn e_ba(&self) -> Mat {
        let (r, c) = self.ba_samples[0].shape();
        let mut e = Mat::zeros(r, c);
        for (b, &w) in self.ba_samples.iter().zip(&self.ba_weights) {
            e += b * w;
        }
        e
    }
}

/// Scenario matrices plus the frozen pool: everything an expectation needs.
#[derive(Debug, Clone)]
pub struct Model {
    pub a: Mat,
    pub q: Mat,
    pub rc: Mat,
    pub ra: Mat,
    pub w: Mat,
    pub v: Mat,
    pub b_list: Vec<Mat>,
    pub x0: Vector,
    pub noise: Mat,
    pub dims: Dims,
    pub pool: SamplePool,
    pub e_ba: Mat,
    pub exec: Exec,
}

impl Model {
    pub fn new(scn: &Scenario, pool: SamplePool) -> Result<Self> {
        let dims = scn.validate()?;
        let e_ba = pool.e_ba();
        Ok(Model {
            a: scn.a.clone(),
            q: symmetrize(&scn.q),
            rc: symmetrize(&scn.rc),
            ra: symmetrize(&scn.ra),
            w: scn.w.clone(),
            v: scn.v.clone(),
            b_list: scn.b_list.clone(),
            x0: Vector::from_vec(scn.x0.clone()),
            noise: scn.noise_cov(),
            dims,
            pool,
            e_ba,
            exec: Exec::default(),
        })
    }

    /// Builds the pool from the scenario's own seed and sample count.
    pub fn from_scenario(scn: &Scenario) -> Result<Self> {
        let pool = build_pool(scn, scn.seed, scn.samples, false)?;
        Self::new(scn, pool)
    }

    pub fn with_ra(&self, ra: Mat) -> Self {
        Model { ra: symmetrize(&ra), ..self.clone() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn s(&self) -> usize {
        self.dims.s
    }
}

/// E[B^a], E[(B^a)ᵀPB^a] and the deviation moment cov_term(P).
#[derive(Debug, Clone)]
pub struct AttackerMoments {
    pub e_ba: Mat,
    pub e_batpba: Mat,
    pub cov_term: Mat,
}

pub fn attacker_moments(model: &Model, p: &Mat) -> AttackerMoments {
    let pool = &model.pool;
    let na = model.e_ba.ncols();
    let e_batpba = symmetrize(&model.exec.sum_mat(pool.ba_samples.len(), na, na, |i| {
        let b = &pool.ba_samples[i];
        b.transpose() * p * b * pool.ba_weights[i]
    }));
    let mean_part = model.e_ba.transpose() * p * &model.e_ba;
    let cov_term = symmetrize(&(&e_batpba - mean_part));
    AttackerMoments { e_ba: model.e_ba.clone(), e_batpba, cov_term }
}

/// Largest entrywise variance of B^a over the pool.
pub fn sigma2_ba(pool: &SamplePool) -> f64 {
    let (r, c) = pool.ba_samples[0].shape();
    let mut mean = Mat::zeros(r, c);
    for (b, &w) in pool.ba_samples.iter().zip(&pool.ba_weights) {
        mean += b * w;
    }
    let mut var = Mat::zeros(r, c);
    for (b, &w) in pool.ba_samples.iter().zip(&pool.ba_weights) {
        let d = b - &mean;
        var += d.component_mul(&d) * w;
    }
    var.max().max(0.0)
}

/// Weighted average of `f` over the controller atoms, summed in index order.
pub fn expect_over_bc<F>(model: &Model, rows: usize, cols: usize, f: F) -> Mat
where
    F: Fn(&Mat) -> Mat + Sync + Send,
{
    let pool = &model.pool;
    model
        .exec
        .sum_mat(pool.bc_samples.len(), rows, cols, |i| f(&pool.bc_samples[i]) * pool.bc_weights[i])
}

/// Fallible variant of [`expect_over_bc`].
pub fn try_expect_over_bc<F>(model: &Model, rows: usize, cols: usize, f: F) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<Mat> + Sync + Send,
{
    let pool = &model.pool;
    model
        .exec
        .try_sum_mat(pool.bc_samples.len(), rows, cols, |i| Ok(f(&pool.bc_samples[i])? * pool.bc_weights[i]))
}
