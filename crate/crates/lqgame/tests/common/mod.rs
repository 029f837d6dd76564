#![allow(dead_code)]

use lqgame::matrix_core::{symmetrize, Mat};
use lqgame::stochastic_model::{ChannelGrid, ChannelModel, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_mat(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Random SPD matrix with eigenvalues bounded below by `floor`.
pub fn random_pd(rng: &mut impl Rng, n: usize, floor: f64) -> Mat {
    let g = uniform_mat(rng, n, n, 1.0);
    symmetrize(&(&g * g.transpose() + Mat::identity(n, n) * floor))
}

/// S-state plant, one actuator with B = I_S, one controller and one attacker.
pub fn small_scenario(a: Mat, ctrl: ChannelModel, att: ChannelModel, ra: f64) -> Scenario {
    let s = a.nrows();
    Scenario {
        name: "random".into(),
        a,
        b_list: vec![Mat::identity(s, s)],
        q: Mat::identity(s, s),
        rc: Mat::identity(s, s),
        ra: Mat::identity(s, s) * ra,
        w: Mat::identity(s, s),
        v: Mat::identity(s, s) * 0.1,
        x0: vec![1.0; s],
        n_r: s,
        nt_c: s,
        nt_a: s,
        controllers: ChannelGrid { common_gate: None, players: vec![ctrl] },
        attackers: ChannelGrid { common_gate: None, players: vec![att] },
        seed: 1,
        samples: 10,
    }
}

/// Two-atom finite laws for both sides on a 2-state plant.
pub fn random_exact_scenario(rng: &mut impl Rng, rho_target: f64, ra: f64) -> Scenario {
    let mut a = uniform_mat(rng, 2, 2, 1.0);
    let rho = lqgame::matrix_core::spectral_radius(&a).unwrap();
    if rho > 0.0 {
        a *= rho_target / rho;
    }
    let p = 0.5 + 0.4 * rng.random::<f64>();
    let ctrl = ChannelModel::FiniteSupport {
        atoms: vec![Mat::identity(2, 2) + uniform_mat(rng, 2, 2, 0.3), uniform_mat(rng, 2, 2, 0.5)],
        probs: vec![p, 1.0 - p],
    };
    let q = 0.3 + 0.4 * rng.random::<f64>();
    let att = ChannelModel::FiniteSupport {
        atoms: vec![uniform_mat(rng, 2, 2, 0.4), uniform_mat(rng, 2, 2, 0.4)],
        probs: vec![q, 1.0 - q],
    };
    small_scenario(a, ctrl, att, ra)
}

/// Gated single atom on the controller side: B^c ∈ {H, 0}.
pub fn random_gated_scenario(rng: &mut impl Rng, s: usize, gate: f64, rho_target: f64) -> Scenario {
    let mut a = uniform_mat(rng, s, s, 1.0);
    let rho = lqgame::matrix_core::spectral_radius(&a).unwrap();
    a *= rho_target / rho;
    let h = Mat::identity(s, s) + uniform_mat(rng, s, s, 0.3);
    let ctrl = ChannelModel::gated(gate, ChannelModel::deterministic(h));
    let att = ChannelModel::FiniteSupport {
        atoms: vec![uniform_mat(rng, s, s, 0.3), uniform_mat(rng, s, s, 0.3)],
        probs: vec![0.5, 0.5],
    };
    small_scenario(a, ctrl, att, 1.0)
}
