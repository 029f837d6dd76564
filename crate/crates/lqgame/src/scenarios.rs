//! Built-in instances: the 6-state benchmark plant and generators for the
//! three access/antenna configurations, plus a scalar toy problem.

use nalgebra::dmatrix;

use crate::matrix_core::Mat;
use crate::stochastic_model::{ChannelGrid, ChannelModel, Scenario};

/// Attacker weight used by the generators until a certified one is adopted.
pub const DEFAULT_RA_SCALE: f64 = 1e14;

pub fn paper_a() -> Mat {
    dmatrix![
        0.2750, 0.2745, 0.2466, 0.2724, 0.2516, 0.2975;
        0.2745, 0.2862, 0.2535, 0.2793, 0.2450, 0.2957;
        0.2466, 0.2535, 0.2272, 0.2489, 0.2188, 0.2655;
        0.2724, 0.2793, 0.2489, 0.2836, 0.2495, 0.2946;
        0.2516, 0.2450, 0.2188, 0.2495, 0.2412, 0.2742;
        0.2975, 0.2957, 0.2655, 0.2946, 0.2742, 0.3245
    ]
}

/// Actuator gains B₁, B₂, B₃ (6×2 each).
pub fn paper_b_list() -> Vec<Mat> {
    let cols = [
        ([0.5125, 0.5750, 0.0875, 0.5750, 0.4000, 0.0625], [0.1750, 0.3500, 0.6000, 0.6125, 0.1000, 0.6125]),
        ([0.6000, 0.3125, 0.5125, 0.1000, 0.2750, 0.5750], [0.5000, 0.6000, 0.4125, 0.0250, 0.5375, 0.5875]),
        ([0.4250, 0.4750, 0.4750, 0.2510, 0.4125, 0.1125], [0.4500, 0.0251, 0.1750, 0.0375, 0.0625, 0.5250]),
    ];
    cols.iter()
        .map(|(c0, c1)| Mat::from_fn(6, 2, |i, j| if j == 0 { c0[i] } else { c1[i] }))
        .collect()
}

/// [B₁, B₂, B₃].
pub fn paper_b_all() -> Mat {
    let bs = paper_b_list();
    let mut out = Mat::zeros(6, 6);
    for (i, b) in bs.iter().enumerate() {
        out.view_mut((0, 2 * i), (6, 2)).copy_from(b);
    }
    out
}

/// B̃₁, B̃₂, B̃₃ of the interference-free configuration.
pub fn example2_b_tilde() -> Vec<Mat> {
    vec![
        dmatrix![0.5125, 0.175; 0.5750, 0.3500],
        dmatrix![0.5125, 0.4125; 0.1000, 0.0250],
        dmatrix![0.4125, 0.0625; 0.1125, 0.5250],
    ]
}

/// B̃_i placed in rows 2i..2i+2 of a 6×2 actuator gain.
pub fn example2_b_list() -> Vec<Mat> {
    example2_b_tilde()
        .into_iter()
        .enumerate()
        .map(|(i, bt)| {
            let mut b = Mat::zeros(6, 2);
            b.view_mut((2 * i, 0), (2, 2)).copy_from(&bt);
            b
        })
        .collect()
}

/// Stacked [I₂; I₂; I₂].
fn stacked_identity() -> Mat {
    Mat::from_fn(6, 2, |i, j| if i % 2 == j { 1.0 } else { 0.0 })
}

/// Unit-variance Gaussian attackers with mean I₂ on every link, gated by `gate` when given.
fn gaussian_attackers(gate: Option<f64>) -> ChannelGrid {
    let g = ChannelModel::GaussianIid { mean: stacked_identity(), variance: Mat::from_element(6, 2, 1.0) };
    let p = match gate {
        Some(d) => ChannelModel::gated(d, g),
        None => g,
    };
    ChannelGrid { common_gate: None, players: vec![p; 3] }
}

fn base(name: &str, b_list: Vec<Mat>, nt_c: usize, controllers: ChannelGrid, attackers: ChannelGrid) -> Scenario {
    let na = 2 * attackers.players.len();
    let nc = nt_c * controllers.players.len();
    Scenario {
        name: name.into(),
        a: paper_a(),
        b_list,
        q: Mat::identity(6, 6),
        rc: Mat::identity(nc, nc),
        ra: Mat::identity(na, na) * DEFAULT_RA_SCALE,
        w: Mat::identity(6, 6),
        v: Mat::identity(2, 2),
        x0: vec![1.0; 6],
        n_r: 2,
        nt_c,
        nt_a: 2,
        controllers,
        attackers,
        seed: 0,
        samples: 2000,
    }
}

/// Shared access gate δ, three controllers with 3 transmit antennas and unit
/// Gaussian links, three always-on attackers with mean-I₂ Gaussian links.
pub fn example1_section6(delta: f64) -> Scenario {
    let h = ChannelModel::GaussianIid { mean: Mat::zeros(6, 3), variance: Mat::from_element(6, 3, 1.0) };
    let ctrl = ChannelGrid { common_gate: Some(delta), players: vec![h; 3] };
    base("example1", paper_b_list(), 3, ctrl, gaussian_attackers(None))
}

/// Finite-support variant: B^c ∈ {[B₁,B₂,B₃], 0} under the shared gate and
/// attacker l reaching actuator l with probability ½.
pub fn example1_exact(delta: f64) -> Scenario {
    let link = |j: usize| Mat::from_fn(6, 2, |i, c| if i / 2 == j && i % 2 == c { 1.0 } else { 0.0 });
    let ctrl = ChannelGrid { common_gate: Some(delta), players: (0..3).map(|j| ChannelModel::deterministic(link(j))).collect() };
    let att = ChannelGrid {
        common_gate: None,
        players: (0..3).map(|l| ChannelModel::gated(0.5, ChannelModel::deterministic(link(l)))).collect(),
    };
    base("example1_exact", paper_b_list(), 2, ctrl, att)
}

/// Interference-free controllers: controller i only reaches actuator i through
/// B̃_i, each with its own gate δ_i; attackers gated at ½.
pub fn example2(deltas: [f64; 3]) -> Scenario {
    let players = (0..3)
        .map(|j| {
            let mask = Mat::from_fn(6, 2, |i, _| if i / 2 == j { 1.0 } else { 0.0 });
            ChannelModel::gated(deltas[j], ChannelModel::GaussianIid { mean: Mat::zeros(6, 2), variance: mask })
        })
        .collect();
    let ctrl = ChannelGrid { common_gate: None, players };
    base("example2", example2_b_list(), 2, ctrl, gaussian_attackers(Some(0.5)))
}

/// Six transmit antennas per controller with independent gates δ_i. `exact`
/// replaces the Gaussian links by H_i = I₆ and the attackers by the gated
/// deterministic links of [`example1_exact`].
pub fn example3(deltas: [f64; 3], exact: bool) -> Scenario {
    let inner = if exact {
        ChannelModel::deterministic(Mat::identity(6, 6))
    } else {
        ChannelModel::GaussianIid { mean: Mat::zeros(6, 6), variance: Mat::from_element(6, 6, 1.0) }
    };
    let ctrl = ChannelGrid { common_gate: None, players: deltas.iter().map(|&d| ChannelModel::gated(d, inner.clone())).collect() };
    let att = if exact { example1_exact(1.0).attackers } else { gaussian_attackers(Some(0.5)) };
    base(if exact { "example3_exact" } else { "example3" }, paper_b_list(), 6, ctrl, att)
}

/// S=1 plant x⁺ = a·x + b·u_c with weights q, r_c and no attacker influence.
pub fn scalar_scenario(a: f64, b: f64, q: f64, rc: f64) -> Scenario {
    let one = |x: f64| dmatrix![x];
    Scenario {
        name: "scalar".into(),
        a: one(a),
        b_list: vec![one(b)],
        q: one(q),
        rc: one(rc),
        ra: one(1.0),
        w: one(1.0),
        v: one(0.0),
        x0: vec![1.0],
        n_r: 1,
        nt_c: 1,
        nt_a: 1,
        controllers: ChannelGrid { common_gate: None, players: vec![ChannelModel::deterministic(one(1.0))] },
        attackers: ChannelGrid { common_gate: None, players: vec![ChannelModel::deterministic(one(0.0))] },
        seed: 0,
        samples: 1,
    }
}
