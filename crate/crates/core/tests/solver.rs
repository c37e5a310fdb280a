use nalgebra::DMatrix;
use santt::case_study::{case_study_model, generate_case_study, CaseStudyParams};
use santt::model::{build_descriptor, build_splitting, default_gamma, GammaMode, SanModel, Topology};
use santt::oracle::{dense_contraction_checks, dense_generator, dense_mtta, reachable_states};
use santt::solver::{
    compute_mtta, neumann_linear, neumann_linear_fixed, neumann_squared_fixed, neumann_transpose,
    reward_vector, Algorithm, NeumannSystem, SolverConfig,
};
use santt::tt::{RoundingPolicy, TtVector};
use santt::Error;

const ALGORITHMS: [Algorithm; 3] = [Algorithm::Linear, Algorithm::Squared, Algorithm::Transpose];

fn two_state(lambda: f64) -> SanModel {
    SanModel::new(
        vec![DMatrix::from_row_slice(2, 2, &[0.0, lambda, 0.0, 0.0])],
        vec![],
        vec![vec![1.0, 0.0]],
        None,
    )
    .unwrap()
}

fn config(algorithm: Algorithm, tol: f64) -> SolverConfig {
    SolverConfig {
        algorithm,
        rounding: RoundingPolicy::with_tolerance(tol),
        stop_tol: tol,
        ..Default::default()
    }
}

struct Setup {
    sys: NeumannSystem,
    b: TtVector,
    pi0: TtVector,
    gamma: f64,
}

fn setup(model: &SanModel, mode: GammaMode, tol: f64, shift: f64) -> Setup {
    let exact = RoundingPolicy::with_tolerance(1e-14);
    let desc = build_descriptor(model, &exact).unwrap();
    let gamma = default_gamma(&desc, mode).unwrap();
    let split = build_splitting(model, &desc, gamma, &exact).unwrap();
    let b = reward_vector(&model.state_counts(), &desc.absorbing, shift).unwrap();
    Setup {
        sys: NeumannSystem::new(split, 1e-10, RoundingPolicy::with_tolerance(tol)).unwrap(),
        b,
        pi0: TtVector::rank_one(model.pi0_factors()).unwrap(),
        gamma,
    }
}

fn oracle(model: &SanModel) -> f64 {
    dense_mtta(&dense_generator(model).unwrap()).unwrap()
}

#[test]
fn analytic_anchors() {
    for alg in ALGORITHMS {
        let r = compute_mtta(&two_state(2.0), &config(alg, 1e-10)).unwrap();
        assert!((r.mtta - 0.5).abs() < 1e-10, "{alg:?}: {}", r.mtta);
        let r = compute_mtta(&case_study_model(&Topology::identity(1)).unwrap(), &config(alg, 1e-10)).unwrap();
        assert!((r.mtta - 2.0 / 1.1).abs() < 1e-9, "{alg:?}: {}", r.mtta);
    }
}

#[test]
fn small_case_studies_match_dense_oracle() {
    let models = [
        case_study_model(&Topology::identity(3)).unwrap(),
        generate_case_study(&CaseStudyParams { k: 3, seed: 4, density: Some(0.5) }).unwrap(),
        generate_case_study(&CaseStudyParams { k: 4, seed: 1, density: Some(0.3) }).unwrap(),
    ];
    for m in &models {
        let want = oracle(m);
        for alg in ALGORITHMS {
            let r = compute_mtta(m, &config(alg, 1e-10)).unwrap();
            assert!((r.mtta - want).abs() <= 1e-6 * want, "{alg:?}: {} vs {want}", r.mtta);
            assert_eq!(r.measure_history.len(), r.iterations + 1);
            assert!(r.exp_sum_terms > 0 && r.peak_storage > 0 && r.wall_time >= 0.0);
        }
    }
}

#[test]
fn mtta_is_invariant_under_automaton_order() {
    let m = generate_case_study(&CaseStudyParams { k: 4, seed: 9, density: Some(0.4) }).unwrap();
    let cfg = SolverConfig { use_rcm: false, ..config(Algorithm::Squared, 1e-10) };
    let base = compute_mtta(&m, &cfg).unwrap().mtta;
    for perm in [[3, 2, 1, 0], [1, 3, 0, 2]] {
        let v = compute_mtta(&m.permuted(&perm).unwrap(), &cfg).unwrap().mtta;
        assert!((v - base).abs() <= 1e-8 * base);
    }
    let r = compute_mtta(&m, &config(Algorithm::Squared, 1e-10)).unwrap();
    assert!((r.mtta - base).abs() <= 1e-8 * base);
    let mut p = r.permutation.clone();
    p.sort();
    assert_eq!(p, vec![0, 1, 2, 3]);
}

#[test]
fn iteration_matrix_properties() {
    let s = setup(&two_state(2.0), GammaMode::Minimal, 1e-12, -1.0);
    assert_eq!(s.gamma, 2.0);
    // M e_N = Q_1^{-1} A_1 e_N = [[-1/2, -1/2], [0, -1/2]] (2, 0)
    let e_n = TtVector::basis(&[2], &[1]).unwrap();
    let me = s.sys.apply_m(&e_n).unwrap().to_dense().unwrap();
    assert!((me[0] + 1.0).abs() < 1e-9 && me[1].abs() < 1e-9, "{me:?}");
    let zero = s.sys.apply_m(&TtVector::zeros(&[2]).unwrap()).unwrap().to_dense().unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));

    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 2, density: Some(0.5) }).unwrap();
    let s = setup(&m, GammaMode::Minimal, 1e-12, -1.0);
    let n = 27;
    for trial in 0..5 {
        // nonnegative with a zero last entry
        let mut v: Vec<f64> = (0..n).map(|i| ((i * 7 + trial * 3) % 5) as f64).collect();
        v[n - 1] = 0.0;
        let tv = TtVector::from_dense(&v, &[3, 3, 3], &RoundingPolicy::exact()).unwrap();
        let mv = s.sys.apply_m(&tv).unwrap().to_dense().unwrap();
        let scale = mv.iter().copied().fold(0.0, f64::max);
        assert!(mv.iter().all(|&x| x >= -1e-9 * scale));
        assert!(mv[n - 1].abs() <= 1e-9 * scale);
    }
    // M against the dense oracle
    let dense_m = santt::oracle::dense_iteration_matrix(&dense_generator(&m).unwrap(), s.gamma).unwrap();
    let tt_m = s.sys.iteration_matrix().unwrap().to_dense().unwrap();
    assert!((tt_m - &dense_m).amax() <= 1e-8);
}

#[test]
fn squaring_reproduces_linear_partial_sums() {
    let m = generate_case_study(&CaseStudyParams { k: 2, seed: 3, density: Some(1.0) }).unwrap();
    let s = setup(&m, GammaMode::Minimal, 1e-13, -1.0);
    for l in 1..=4 {
        let (_, sq) = neumann_squared_fixed(&s.sys, &s.b, &s.pi0, l).unwrap();
        let (_, lin) = neumann_linear_fixed(&s.sys, &s.b, &s.pi0, (1 << (l + 1)) - 1).unwrap();
        assert!((sq.mtta - lin.mtta).abs() <= 1e-8 * lin.mtta, "l {l}: {} vs {}", sq.mtta, lin.mtta);
    }
}

#[test]
fn partial_sums_are_monotone_lower_bounds() {
    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 5, density: Some(0.5) }).unwrap();
    let want = oracle(&m);
    for alg in ALGORITHMS {
        let r = compute_mtta(&m, &config(alg, 1e-10)).unwrap();
        for w in r.measure_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!(r.measure_history.iter().all(|&h| h <= want * (1.0 + 1e-8)));
    }
}

#[test]
fn reward_shift_and_gamma_do_not_change_the_answer() {
    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 8, density: Some(0.5) }).unwrap();
    let tol = 1e-9;
    let base = compute_mtta(&m, &config(Algorithm::Linear, tol)).unwrap().mtta;
    for shift in [0.0, 2.5] {
        let cfg = SolverConfig { reward_shift: shift, ..config(Algorithm::Linear, tol) };
        let v = compute_mtta(&m, &cfg).unwrap().mtta;
        assert!((v - base).abs() <= 2.0 * tol * base, "shift {shift}: {v} vs {base}");
    }
    for alg in ALGORITHMS {
        let a = compute_mtta(&m, &config(alg, tol)).unwrap();
        let b = compute_mtta(&m, &SolverConfig { gamma_mode: GammaMode::Scaled(4.0), ..config(alg, tol) }).unwrap();
        assert!((b.gamma - 4.0 * a.gamma).abs() < 1e-12 * b.gamma);
        assert!((a.mtta - b.mtta).abs() <= 1e-6 * a.mtta);
    }
}

#[test]
fn transpose_ignores_unreachable_states() {
    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 1, density: Some(0.6) }).unwrap();
    let chain = dense_generator(&m).unwrap();
    let reach = reachable_states(&chain);
    assert!(reach.iter().any(|r| !r));
    let s = setup(&m, GammaMode::Minimal, 1e-12, -1.0);
    let (xt, rep) = neumann_transpose(&s.sys, &s.b, &s.pi0, &config(Algorithm::Transpose, 1e-12)).unwrap();
    let x = xt.to_dense().unwrap();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (i, r) in reach.iter().enumerate() {
        if !r {
            assert!(x[i].abs() <= 1e-9 * scale, "state {i}: {}", x[i]);
        }
    }
    assert!((rep.mtta - dense_mtta(&chain).unwrap()).abs() <= 1e-8 * rep.mtta);
}

#[test]
fn convergence_follows_the_spectral_radius() {
    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 6, density: Some(0.5) }).unwrap();
    let want = oracle(&m);
    let s = setup(&m, GammaMode::Minimal, 1e-13, -1.0);
    let rho = dense_contraction_checks(&m, s.gamma).unwrap().rho;
    assert!(rho < 1.0);
    let (_, rep) = neumann_linear_fixed(&s.sys, &s.b, &s.pi0, 60).unwrap();
    let h = &rep.measure_history;
    // error of x_l decays like rho^(l+1); constant fitted from the first two iterates
    let c = (h[1] - h[0]) / rho;
    for (l, &v) in h.iter().enumerate().skip(2) {
        let err = want - v;
        assert!(err <= 10.0 * c * rho.powi(l as i32 + 1) / (1.0 - rho) + 1e-12, "l {l}: {err}");
    }
}

#[test]
fn configuration_errors() {
    let m = two_state(2.0);
    let bad = [
        SolverConfig { stop_tol: 0.0, ..Default::default() },
        SolverConfig { max_iter: 0, ..Default::default() },
        SolverConfig { gamma_mode: GammaMode::Scaled(1.0), ..Default::default() },
        SolverConfig { gamma_mode: GammaMode::Value(1.0), ..Default::default() },
        SolverConfig { exp_sum_eps: 1e-16, ..Default::default() },
        SolverConfig { rounding: RoundingPolicy { rel_tolerance: -1.0, max_rank: None }, ..Default::default() },
    ];
    for cfg in bad {
        assert!(compute_mtta(&m, &cfg).is_err(), "{cfg:?}");
    }
    let ok = SolverConfig { gamma_mode: GammaMode::Value(5.0), ..Default::default() };
    assert_eq!(compute_mtta(&m, &ok).unwrap().gamma, 5.0);
}

#[test]
fn rank_cap_stops_the_squaring() {
    let m = generate_case_study(&CaseStudyParams { k: 5, seed: 0, density: Some(0.5) }).unwrap();
    let cfg = SolverConfig {
        rounding: RoundingPolicy { rel_tolerance: 1e-10, max_rank: Some(2) },
        stop_tol: 1e-10,
        ..Default::default()
    };
    let err = compute_mtta(&m, &cfg).unwrap_err();
    assert!(err.is_numerical());
    assert!(err.to_string().contains("rank"), "{err}");
}

#[test]
fn non_contractive_iteration_is_detected() {
    // a splitting built with too small a shift breaks the a priori bound
    let m = generate_case_study(&CaseStudyParams { k: 3, seed: 0, density: Some(0.5) }).unwrap();
    let mut s = setup(&m, GammaMode::Minimal, 1e-12, -1.0);
    s.sys.q2 = s.sys.q2.scale(3.0);
    let cfg = config(Algorithm::Linear, 1e-12);
    match neumann_linear(&s.sys, &s.b, &s.pi0, &cfg) {
        Err(Error::Divergence(_)) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}
