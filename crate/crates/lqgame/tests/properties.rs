mod common;

use lqgame::certifier::{certify, CertVerdict, XiPolicy};
use lqgame::exec::Exec;
use lqgame::kernel_decomp::{decompose, decompose_with_svd, weighted_gram_svd};
use lqgame::matrix_core::{
    is_pd, is_psd, kron, loewner_leq, min_eig, ordered_svd, pd_inverse, psd_sqrt, schur_complement, sym_norm, symmetrize,
    unvec, vec, Mat, PsdMatrix, SchurBlock, SymMatrix,
};
use lqgame::mgare::{concavity_indicator, f_operator, solve_fixed_point, SolveOptions, Verdict};
use lqgame::scenarios::example1_section6;
use lqgame::stochastic_model::{attacker_moments, build_pool, expect_over_bc, ChannelModel, Model};
use proptest::prelude::*;

fn mat(r: usize, c: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v))
}

fn pd(n: usize) -> impl Strategy<Value = Mat> {
    mat(n, n).prop_map(move |g| symmetrize(&(&g * g.transpose() + Mat::identity(n, n) * 0.2)))
}

fn sized_pd() -> impl Strategy<Value = Mat> {
    (1usize..=6).prop_flat_map(pd)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn vec_unvec_round_trip(n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let x = common::uniform_mat(&mut rng, n, n, 10.0);
        prop_assert_eq!(unvec(&vec(&x), n).unwrap(), x);
    }

    #[test]
    fn kron_mixed_product(a in mat(2, 2), b in mat(2, 2), c in mat(2, 2), d in mat(2, 2)) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn kron_vec_triple_product(a in mat(2, 2), x in mat(2, 2), b in mat(2, 2)) {
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn schur_of_pd_is_pd(m in (2usize..=6).prop_flat_map(pd), k in 1usize..=5) {
        let k = k.min(m.nrows() - 1);
        for which in [SchurBlock::UpperLeft, SchurBlock::LowerRight] {
            let s = schur_complement(&m, k, which).unwrap();
            prop_assert!(is_pd(&symmetrize(&s), 1e-12));
        }
    }

    #[test]
    fn ordered_svd_contract(m in sized_pd(), drop in 0usize..3) {
        // rank-deficient PSD from a thin factor
        let n = m.nrows();
        let r = n.saturating_sub(drop).max(1);
        let f = m.columns(0, r).into_owned();
        let psd = SymMatrix::from_symmetrized(&(&f * f.transpose())).unwrap();
        let a = ordered_svd(&psd, None);
        let b = ordered_svd(&psd, None);
        prop_assert_eq!(&a.u, &b.u);
        prop_assert!((a.u.transpose() * &a.u - Mat::identity(n, n)).amax() < 1e-10);
        prop_assert!(a.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((a.reconstruct() - &*psd).norm() < 1e-10 * (1.0 + psd.norm()));
        prop_assert_eq!(a.rank, r);
    }

    #[test]
    fn psd_sqrt_round_trip(m in sized_pd()) {
        let s = psd_sqrt(&PsdMatrix::new(m.clone()).unwrap());
        prop_assert!((&*s * &*s - &m).norm() <= 1e-10 * m.norm());
    }
}

fn kernel_case() -> impl Strategy<Value = (Mat, Mat, Mat)> {
    (2usize..=6)
        .prop_flat_map(|s| (Just(s), 1usize..=s, 1usize..=s + 2))
        .prop_flat_map(|(s, r, m)| {
            let r = r.min(m);
            (pd(s), mat(s, r), mat(r, m), pd(m))
        })
        .prop_map(|(t, f, g, rc)| (t, f * g, rc))
}

/// Rank is only meaningful when the spectrum separates cleanly from the threshold.
fn clear_rank_gap(bc: &Mat, rc: &Mat) -> bool {
    let svd = weighted_gram_svd(bc, rc).unwrap();
    let top = svd.sigma[0];
    svd.sigma.iter().all(|&s| s >= 1e-6 * top || s <= 1e-20 * top)
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn kernel_split_invariants((t, bc, rc) in kernel_case()) {
        prop_assume!(clear_rank_gap(&bc, &rc));
        let ks = decompose(&t, &bc, &rc).unwrap();
        let tn = sym_norm(&t);
        prop_assert!((&ks.t_ker + &ks.t_0 - &t).norm() <= 1e-10 * tn);
        prop_assert!((&ks.t_0 * &bc).norm() <= 1e-10 * tn * bc.norm());
        prop_assert!(min_eig(&ks.t_ker) >= -1e-10 * tn);
        prop_assert!(min_eig(&ks.t_0) >= -1e-10 * tn);
        let rank = |m: &Mat| lqgame::matrix_core::numerical_rank(m, 1e-9);
        prop_assert_eq!(rank(&(&ks.t_ker * &bc)), rank(&ks.t_ker));
    }

    #[test]
    fn kernel_split_ignores_singular_vector_signs((t, bc, rc) in kernel_case(), flips in prop::collection::vec(any::<bool>(), 6)) {
        let svd = weighted_gram_svd(&bc, &rc).unwrap();
        let mut flipped = svd.clone();
        for (i, &f) in flips.iter().enumerate().take(flipped.u.nrows()) {
            if f {
                flipped.u.row_mut(i).neg_mut();
            }
        }
        let a = decompose_with_svd(&t, svd).unwrap();
        let b = decompose_with_svd(&t, flipped).unwrap();
        let tn = sym_norm(&t);
        prop_assert!((&a.t_ker - &b.t_ker).norm() <= 1e-9 * tn);
        prop_assert!((&a.t_0 - &b.t_0).norm() <= 1e-9 * tn);
    }
}

fn finite_model(seed: u64, ra: f64) -> Model {
    let mut rng = common::rng(seed);
    Model::from_scenario(&common::random_exact_scenario(&mut rng, 1.2, ra)).unwrap()
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn cov_term_is_psd(seed in any::<u64>(), p in pd(2)) {
        let m = finite_model(seed, 10.0);
        let ct = attacker_moments(&m, &p).cov_term;
        prop_assert!(min_eig(&ct) >= -1e-12 * (1.0 + sym_norm(&ct)));
    }

    #[test]
    fn exact_pool_ignores_m(seed in any::<u64>(), m1 in 1usize..50, m2 in 50usize..500) {
        let mut rng = common::rng(seed);
        let scn = common::random_exact_scenario(&mut rng, 1.0, 10.0);
        let a = build_pool(&scn, seed, m1, false).unwrap();
        let b = build_pool(&scn, seed.wrapping_add(1), m2, false).unwrap();
        prop_assert!(a.exact);
        prop_assert_eq!(&a.bc_samples, &b.bc_samples);
        prop_assert_eq!(&a.bc_weights, &b.bc_weights);
        prop_assert_eq!(&a.ba_samples, &b.ba_samples);
    }

    #[test]
    fn monotone_operator(seed in any::<u64>(), p1 in pd(2), g in mat(2, 2)) {
        let m = finite_model(seed, 1.0);
        let p2 = symmetrize(&(&p1 + &g * g.transpose()));
        let top = lqgame::matrix_core::sym_eigenvalues(&attacker_moments(&m, &p2).e_batpba).max();
        let m = m.with_ra(Mat::identity(2, 2) * (2.0 * top + 1.0));
        prop_assert!(concavity_indicator(&m, &p1) && concavity_indicator(&m, &p2));
        let f1 = f_operator(&m, &p1).unwrap();
        let f2 = f_operator(&m, &p2).unwrap();
        prop_assert!(loewner_leq(&f1, &f2, 1e-9));
        // f(P) ⪰ Q
        prop_assert!(loewner_leq(&m.q, &f1, 1e-9));
    }

    #[test]
    fn attacker_free_reduces_to_stochastic_riccati(seed in any::<u64>(), p in pd(3)) {
        let mut rng = common::rng(seed);
        let a = common::uniform_mat(&mut rng, 3, 3, 1.0);
        let ctrl = ChannelModel::FiniteSupport {
            atoms: vec![common::uniform_mat(&mut rng, 3, 3, 1.0), common::uniform_mat(&mut rng, 3, 3, 1.0), Mat::zeros(3, 3)],
            probs: vec![0.3, 0.5, 0.2],
        };
        let scn = common::small_scenario(a, ctrl, ChannelModel::deterministic(Mat::zeros(3, 3)), 1.0);
        let m = Model::from_scenario(&scn).unwrap();
        // classical: Aᵀ E[P − P B (R + BᵀPB)⁻¹ BᵀP] A + Q
        let mut inner = Mat::zeros(3, 3);
        for (b, w) in m.pool.bc_samples.iter().zip(&m.pool.bc_weights) {
            let k = (&m.rc + b.transpose() * &p * b).try_inverse().unwrap();
            inner += (&p - &p * b * k * b.transpose() * &p) * *w;
        }
        let want = m.a.transpose() * inner * &m.a + &m.q;
        let got = f_operator(&m, &p).unwrap();
        prop_assert!((got - &want).amax() <= 1e-9 * (1.0 + want.amax()));
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn minimal_fixed_point(seed in any::<u64>(), g in mat(2, 2), scale in 0.0f64..3.0) {
        let mut rng = common::rng(seed);
        let m = Model::from_scenario(&common::random_gated_scenario(&mut rng, 2, 0.9, 1.1)).unwrap();
        let cert = certify(&m, XiPolicy::Auto).unwrap();
        prop_assume!(cert.verdict == CertVerdict::Certified);
        let m = m.with_ra(cert.ra_chosen.unwrap());
        let sol = solve_fixed_point(&m, &SolveOptions::default());
        prop_assert_eq!(sol.verdict, Verdict::Exists);
        // restart from an arbitrary PSD point; any limit reached must dominate P*
        let mut p = symmetrize(&(&g * g.transpose() * scale * sym_norm(&sol.p_star)));
        let mut converged = false;
        for _ in 0..5000 {
            if !concavity_indicator(&m, &p) || sym_norm(&p) > 1e12 {
                break;
            }
            let next = f_operator(&m, &p).unwrap();
            converged = sym_norm(&(&next - &p)) <= 1e-12 * sym_norm(&next);
            p = next;
            if converged {
                break;
            }
        }
        if converged {
            prop_assert!(loewner_leq(&sol.p_star, &p, 1e-8));
        }
    }

    #[test]
    fn certified_chain_descends(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let m = Model::from_scenario(&common::random_gated_scenario(&mut rng, 3, 0.8, 1.3)).unwrap();
        let cert = certify(&m, XiPolicy::Auto).unwrap();
        prop_assume!(cert.verdict == CertVerdict::Certified);
        let m = m.with_ra(cert.ra_chosen.unwrap());
        let mut p = cert.p_tilde.unwrap();
        for _ in 0..=20 {
            prop_assert!(concavity_indicator(&m, &p));
            let next = f_operator(&m, &p).unwrap();
            prop_assert!(loewner_leq(&next, &p, 1e-9));
            p = next;
        }
        let sol = solve_fixed_point(&m, &SolveOptions::default());
        prop_assert_eq!(sol.verdict, Verdict::Exists);
        prop_assert!(loewner_leq(&sol.p_star, &p, 1e-8));
    }
}

#[test]
fn parallel_and_sequential_paths_agree_bitwise() {
    let scn = example1_section6(0.8);
    let base = Model::from_scenario(&scn).unwrap();
    let seq = base.clone().with_exec(Exec::Sequential);
    let par = base.with_exec(Exec::Parallel);
    let p = Mat::identity(6, 6) * 4.0 + Mat::from_element(6, 6, 0.1);
    assert_eq!(f_operator(&seq, &p).unwrap(), f_operator(&par, &p).unwrap());
    let g = |b: &Mat| b * b.transpose();
    assert_eq!(expect_over_bc(&seq, 6, 6, g), expect_over_bc(&par, 6, 6, g));
    assert!(pd_inverse(&p).is_ok() && is_psd(&p));
}
