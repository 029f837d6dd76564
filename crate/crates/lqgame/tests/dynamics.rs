mod common;

use lqgame::certifier::{certify, XiPolicy};
use lqgame::matrix_core::{sym_norm, Mat, Vector};
use lqgame::mgare::{phi_blocks, solve_fixed_point, stacked_gain, MgareSolution, SolveOptions, Verdict};
use lqgame::policy::{
    build_saddle_policy, game_value, lemma4_forms, ms_stabilizing_check, saddle_gain, simulate, PolicyKind, PolicySpec,
    SimOptions,
};
use lqgame::stochastic_model::Model;
use proptest::prelude::*;

/// First seed from `start` whose random gated instance certifies and solves.
fn certified_instance(start: u64, s: usize) -> (Model, MgareSolution) {
    for seed in start.. {
        let mut rng = common::rng(seed);
        let m = Model::from_scenario(&common::random_gated_scenario(&mut rng, s, 0.85, 1.15)).unwrap();
        let cert = certify(&m, XiPolicy::Auto).unwrap();
        if !cert.is_certified() {
            continue;
        }
        let m = m.with_ra(cert.ra_chosen.unwrap());
        let sol = solve_fixed_point(&m, &SolveOptions::default());
        if sol.verdict == Verdict::Exists {
            return (m, sol);
        }
    }
    unreachable!()
}

fn quad(x: &[f64], p: &Mat) -> f64 {
    let v = Vector::from_column_slice(x);
    (v.transpose() * p * &v)[(0, 0)]
}

#[test]
fn saddle_prefix_state_bounds() {
    let (m, sol) = certified_instance(100, 2);
    let t0 = 6;
    let policy = build_saddle_policy(&m, t0, &sol).unwrap();
    let (beta, f_seq) = match &policy.kind {
        PolicyKind::Saddle { beta, f_seq, .. } => (*beta, f_seq.clone()),
        _ => unreachable!(),
    };
    let alpha = policy.alpha.unwrap();
    let runs = 4000;
    let opts = SimOptions { horizon: t0 + 1, burn_in: 0, runs, seed: 11, record: runs };
    assert!(opts.horizon <= beta);
    let (traces, _) = simulate(&m, &policy, &opts).unwrap();
    let gap = &sol.p_star - &f_seq[beta - t0];
    let (mut energy, mut weighted) = (0.0, 0.0);
    for tr in &traces {
        let x = &tr.states[t0];
        energy += x.iter().map(|v| v * v).sum::<f64>();
        weighted += quad(x, &gap);
    }
    let (energy, weighted) = (energy / runs as f64, weighted / runs as f64);
    assert!(energy <= alpha, "E‖x(T0)‖² = {energy}, α = {alpha}");
    assert!(weighted < 1.0, "E‖x(T0)‖²_gap = {weighted}");
    assert!(sym_norm(&gap) * alpha < 1.0);
}

#[test]
fn steady_controls_satisfy_per_slot_stationarity() {
    let (m, sol) = certified_instance(200, 3);
    let policy = PolicySpec::steady(sol.p_star.clone());
    let opts = SimOptions { horizon: 40, burn_in: 0, runs: 8, seed: 5, record: 8 };
    let (traces, _) = simulate(&m, &policy, &opts).unwrap();
    let p = &sol.p_star;
    let mut worst: f64 = 0.0;
    for tr in &traces {
        for k in 0..opts.horizon {
            let bc = &m.pool.bc_samples[tr.bc_index[k]];
            let blocks = phi_blocks(&m, p, bc);
            let x = Vector::from_column_slice(&tr.states[k]);
            let mut u = tr.u_c[k].clone();
            u.extend_from_slice(&tr.u_a[k]);
            let u = Vector::from_vec(u);
            let b = stacked_gain(bc, &m.e_ba);
            let resid = &blocks.phi * &u + b.transpose() * p * &m.a * &x;
            let scale = 1.0 + sym_norm(p) * x.norm();
            worst = worst.max(resid.amax() / scale);
        }
    }
    assert!(worst <= 1e-9, "stationarity residual {worst:e}");
}

#[test]
fn game_value_does_not_depend_on_initial_state() {
    let (m, sol) = certified_instance(300, 2);
    let policy = PolicySpec::steady(sol.p_star.clone());
    let opts = SimOptions::new(2000, 400, 21);
    let mut far = m.clone();
    far.x0 = Vector::from_element(2, 10.0);
    let mut zero = m.clone();
    zero.x0 = Vector::zeros(2);
    let (_, a) = simulate(&far, &policy, &opts).unwrap();
    let (_, b) = simulate(&zero, &policy, &opts).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.empirical_j - b.empirical_j).abs() <= 4.0 * se, "{} vs {} (se {se})", a.empirical_j, b.empirical_j);
    let v = game_value(&m, &sol.p_star);
    assert!((a.empirical_j - v).abs() <= 4.0 * a.std_error + 1e-3 * v);
}

#[test]
fn ms_stabilizing_fixed_point_keeps_states_bounded() {
    let (m, sol) = certified_instance(400, 3);
    let ms = ms_stabilizing_check(&m, &sol).unwrap();
    assert!(ms.stabilizing, "ρ = {}", ms.rho);
    let opts = SimOptions { horizon: 1000, burn_in: 0, runs: 32, seed: 2, record: 32 };
    let (traces, report) = simulate(&m, &PolicySpec::steady(sol.p_star.clone()), &opts).unwrap();
    assert_eq!(report.overflow_runs, 0);
    let peak = traces.iter().flat_map(|t| t.states.iter()).map(|x| x.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    assert!(peak < 1e4, "peak ‖x‖² = {peak}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn completed_square_forms_agree(seed in any::<u64>(), k in 1usize..6, gscale in 0.0f64..0.6) {
        let mut rng = common::rng(seed);
        let scn = common::random_exact_scenario(&mut rng, 1.0, 50.0);
        let m = Model::from_scenario(&scn).unwrap();
        let (nc, na, s) = (m.dims.bc_cols(), m.dims.ba_cols(), m.s());
        let dc: Vec<Mat> = (0..k).map(|_| common::uniform_mat(&mut rng, nc, s, gscale)).collect();
        let da: Vec<Mat> = (0..k).map(|_| common::uniform_mat(&mut rng, na, s, gscale)).collect();
        let x0 = common::random_pd(&mut rng, s, 0.1);
        let f = lemma4_forms(&m, k, &x0, &dc, &da).unwrap();
        let tol = 1e-9 * (1.0 + f.direct.abs());
        prop_assert!((f.upper - f.direct).abs() <= tol, "upper {} direct {}", f.upper, f.direct);
        prop_assert!((f.lower - f.direct).abs() <= tol, "lower {} direct {}", f.lower, f.direct);
    }

    #[test]
    fn saddle_gains_attain_minimax(seed in any::<u64>(), k in 1usize..6) {
        // deterministic controller channel: saddle gains are realization-independent
        let mut rng = common::rng(seed);
        let mut scn = common::random_exact_scenario(&mut rng, 1.0, 50.0);
        scn.controllers.players[0] = lqgame::stochastic_model::ChannelModel::deterministic(Mat::identity(2, 2));
        let m = Model::from_scenario(&scn).unwrap();
        let nc = m.dims.bc_cols();
        let bc = m.pool.bc_samples[0].clone();
        let mut fs = vec![m.q.clone()];
        for _ in 0..k {
            let next = lqgame::mgare::f_operator(&m, fs.last().unwrap()).unwrap();
            fs.push(next);
        }
        let gains: Vec<Mat> = (0..k).map(|j| saddle_gain(&m, &fs[k - j - 1], &bc).unwrap()).collect();
        let dc: Vec<Mat> = gains.iter().map(|g| g.rows(0, nc).into_owned()).collect();
        let da: Vec<Mat> = gains.iter().map(|g| g.rows(nc, g.nrows() - nc).into_owned()).collect();
        let x0 = common::random_pd(&mut rng, 2, 0.1);
        let f = lemma4_forms(&m, k, &x0, &dc, &da).unwrap();
        let tol = 1e-9 * (1.0 + f.minimax.abs());
        prop_assert!((f.direct - f.minimax).abs() <= tol, "direct {} minimax {}", f.direct, f.minimax);
        prop_assert!((f.upper - f.minimax).abs() <= tol);
        prop_assert!((f.lower - f.minimax).abs() <= tol);
    }
}
