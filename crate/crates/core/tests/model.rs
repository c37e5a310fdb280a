use std::collections::VecDeque;

use nalgebra::DMatrix;
use santt::case_study::{case_study_model, figure_topology, generate_case_study, random_topology, CaseStudyParams};
use santt::model::{bandwidth, build_descriptor, rcm_order, ModelFile, SanModel, SyncTransition, Topology};
use santt::oracle::{acyclic_mtta, dense_generator, dense_mtta, DEFAULT_SWEEP_CAP};
use santt::tt::RoundingPolicy;

fn two_state(lambda: f64) -> SanModel {
    SanModel::new(
        vec![DMatrix::from_row_slice(2, 2, &[0.0, lambda, 0.0, 0.0])],
        vec![],
        vec![vec![1.0, 0.0]],
        None,
    )
    .unwrap()
}

fn descriptor_dense(model: &SanModel) -> DMatrix<f64> {
    build_descriptor(model, &RoundingPolicy::with_tolerance(1e-14))
        .unwrap()
        .generator
        .to_dense()
        .unwrap()
}

fn all_topologies(k: usize) -> Vec<Topology> {
    let off: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    (0..1usize << off.len())
        .map(|mask| {
            let mut t = Topology::identity(k);
            for (b, &(i, j)) in off.iter().enumerate() {
                t.set(i, j, mask >> b & 1 == 1);
            }
            t
        })
        .collect()
}

fn bfs_reachable(q: &DMatrix<f64>, start: usize) -> usize {
    let mut seen = vec![false; q.nrows()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        for t in 0..q.ncols() {
            if t != s && q[(s, t)] > 0.0 && !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen.iter().filter(|&&x| x).count()
}

#[test]
fn two_state_generator() {
    let q = descriptor_dense(&two_state(2.0));
    assert_eq!(q, DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 0.0, 0.0]));
    assert_eq!(dense_generator(&two_state(2.0)).unwrap().generator, q);
    assert!((dense_mtta(&dense_generator(&two_state(2.0)).unwrap()).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn erlang_chain() {
    let m = SanModel::new(
        vec![DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])],
        vec![],
        vec![vec![1.0, 0.0, 0.0]],
        None,
    )
    .unwrap();
    assert!((dense_mtta(&dense_generator(&m).unwrap()).unwrap() - 2.0).abs() < 1e-14);
    assert!((acyclic_mtta(&m, DEFAULT_SWEEP_CAP).unwrap() - 2.0).abs() < 1e-14);
}

#[test]
fn descriptor_matches_enumeration_on_all_small_topologies() {
    for k in 2..=3 {
        for t in all_topologies(k) {
            let m = case_study_model(&t).unwrap();
            let want = dense_generator(&m).unwrap().generator;
            let got = descriptor_dense(&m);
            assert!((got - &want).amax() <= 1e-12, "topology {:?}", t.rows());
            // generator structure
            for i in 0..want.nrows() {
                assert!(want.row(i).sum().abs() < 1e-12);
            }
            assert!(want.row(want.nrows() - 1).iter().all(|&x| x == 0.0));
        }
    }
    for seed in 0..10 {
        let m = generate_case_study(&CaseStudyParams::new(4, seed)).unwrap();
        assert!((descriptor_dense(&m) - dense_generator(&m).unwrap().generator).amax() <= 1e-12);
    }
}

#[test]
fn identity_syncs_are_no_ops() {
    let base = case_study_model(&figure_topology()).unwrap();
    let mut syncs = base.syncs().to_vec();
    syncs.push(SyncTransition {
        rate: 7.5,
        factors: vec![DMatrix::identity(3, 3); 4],
    });
    let noisy = SanModel::new(base.local().to_vec(), syncs, base.pi0_factors().to_vec(), None).unwrap();
    assert!((descriptor_dense(&noisy) - descriptor_dense(&base)).amax() <= 1e-12);
    assert_eq!(dense_generator(&noisy).unwrap().generator, dense_generator(&base).unwrap().generator);
}

#[test]
fn sync_fires_only_when_jointly_enabled() {
    // automaton 0 moves 0 -> 1, automaton 1 moves 0 -> 1 jointly, rate 3
    let step = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let local = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
    let m = SanModel::new(
        vec![local.clone(), local],
        vec![SyncTransition { rate: 3.0, factors: vec![step.clone(), step] }],
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        None,
    )
    .unwrap();
    let q = dense_generator(&m).unwrap().generator;
    // states 00, 01, 10, 11
    let want = DMatrix::from_row_slice(
        4,
        4,
        &[
            -4.0, 0.5, 0.5, 3.0, //
            0.0, -0.5, 0.0, 0.5, //
            0.0, 0.0, -0.5, 0.5, //
            0.0, 0.0, 0.0, 0.0,
        ],
    );
    assert_eq!(q, want);
    assert!((descriptor_dense(&m) - want).amax() <= 1e-12);
}

#[test]
fn figure_topology_by_hand() {
    let m = case_study_model(&figure_topology()).unwrap();
    let q = dense_generator(&m).unwrap().generator;
    let idx = |s: [usize; 4]| s[0] * 27 + s[1] * 9 + s[2] * 3 + s[3];
    let all_working = idx([0, 0, 0, 0]);
    let mut row = vec![0.0; 81];
    // software failures drag dependents along: 0 -> {1, 2}, 1 -> 3, 2 -> 3
    row[idx([1, 1, 1, 0])] = 1.0;
    row[idx([0, 1, 0, 1])] = 2.0;
    row[idx([0, 0, 1, 1])] = 3.0;
    row[idx([0, 0, 0, 1])] = 4.0;
    // hardware failures from the working state at rate i/10
    row[idx([2, 0, 0, 0])] = 0.1;
    row[idx([0, 2, 0, 0])] = 0.2;
    row[idx([0, 0, 2, 0])] = 0.3;
    row[idx([0, 0, 0, 2])] = 0.4;
    row[all_working] = -11.0;
    for (j, &want) in row.iter().enumerate() {
        assert!((q[(all_working, j)] - want).abs() < 1e-12, "column {j}");
    }
    // component 0 already software-failed: its own sync is disabled and
    // component 1's sync leaves it alone; hardware from state 1 at rate 1
    let s = idx([1, 0, 0, 0]);
    let mut row = vec![0.0; 81];
    row[idx([2, 0, 0, 0])] = 1.0;
    row[idx([1, 1, 0, 1])] = 2.0;
    row[idx([1, 0, 1, 1])] = 3.0;
    row[idx([1, 0, 0, 1])] = 4.0;
    row[idx([1, 2, 0, 0])] = 0.2;
    row[idx([1, 0, 2, 0])] = 0.3;
    row[idx([1, 0, 0, 2])] = 0.4;
    row[s] = -10.9;
    for (j, &want) in row.iter().enumerate() {
        assert!((q[(s, j)] - want).abs() < 1e-12, "column {j}");
    }
    // a dependent that is already down stays down
    let s = idx([0, 2, 0, 0]);
    assert!((q[(s, idx([1, 2, 1, 0]))] - 1.0).abs() < 1e-12);
    assert!((descriptor_dense(&m) - q).amax() <= 1e-12);
}

#[test]
fn identity_topology_reaches_every_state() {
    for k in 1..=4 {
        let m = case_study_model(&Topology::identity(k)).unwrap();
        let q = dense_generator(&m).unwrap().generator;
        assert_eq!(bfs_reachable(&q, 0), 3usize.pow(k as u32));
    }
    // with dependencies some product states are unreachable
    let m = case_study_model(&figure_topology()).unwrap();
    let q = dense_generator(&m).unwrap().generator;
    assert!(bfs_reachable(&q, 0) < 81);
}

#[test]
fn single_component_mtta() {
    let m = case_study_model(&Topology::identity(1)).unwrap();
    let want = 2.0 / 1.1;
    assert!((dense_mtta(&dense_generator(&m).unwrap()).unwrap() - want).abs() < 1e-14);
    assert!((acyclic_mtta(&m, DEFAULT_SWEEP_CAP).unwrap() - want).abs() < 1e-14);
}

#[test]
fn topology_density_matches_request() {
    let (k, density) = (40, 0.15);
    let mut ones = 0usize;
    let seeds = 20;
    for seed in 0..seeds {
        ones += random_topology(k, seed, density).unwrap().off_diagonal_count();
    }
    let trials = (seeds as usize * k * (k - 1)) as f64;
    let p = ones as f64 / trials;
    let sd = (density * (1.0 - density) / trials).sqrt();
    assert!((p - density).abs() < 5.0 * sd, "observed {p}");
    assert_eq!(CaseStudyParams::new(8, 0).density(), 1.0 / 16.0);
}

#[test]
fn sweep_oracle_matches_dense() {
    for k in 1..=6 {
        for seed in 0..8 {
            let m = generate_case_study(&CaseStudyParams { k, seed, density: Some(0.4) }).unwrap();
            let dense = dense_mtta(&dense_generator(&m).unwrap()).unwrap();
            let sweep = acyclic_mtta(&m, DEFAULT_SWEEP_CAP).unwrap();
            assert!((dense - sweep).abs() <= 1e-12 * dense, "k {k} seed {seed}: {dense} vs {sweep}");
        }
    }
    assert!(acyclic_mtta(&generate_case_study(&CaseStudyParams::new(8, 0)).unwrap(), 100).is_err());
}

#[test]
fn sweep_oracle_rejects_cycles() {
    let m = SanModel::new(
        vec![DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0])],
        vec![],
        vec![vec![1.0, 0.0, 0.0]],
        None,
    )
    .unwrap();
    assert!(acyclic_mtta(&m, DEFAULT_SWEEP_CAP).is_err());
    // the dense oracle handles it: t0 = 1 + t1, t1 = 1/2 + t0/2
    assert!((dense_mtta(&dense_generator(&m).unwrap()).unwrap() - 3.0).abs() < 1e-13);
}

#[test]
fn dense_mtta_is_permutation_invariant() {
    for seed in 0..5 {
        let m = generate_case_study(&CaseStudyParams { k: 5, seed, density: Some(0.3) }).unwrap();
        let base = dense_mtta(&dense_generator(&m).unwrap()).unwrap();
        for perm in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3]] {
            let p = m.permuted(&perm).unwrap();
            let v = dense_mtta(&dense_generator(&p).unwrap()).unwrap();
            assert!((v - base).abs() <= 1e-12 * base);
        }
    }
}

#[test]
fn rcm_reduces_bandwidth_to_the_optimum_on_paths() {
    assert_eq!(rcm_order(&Topology::identity(5)), vec![0, 1, 2, 3, 4]);
    // a path 0 - 3 - 1 - 4 - 2 - 5 given in scrambled order
    let chain = [0, 3, 1, 4, 2, 5];
    let mut t = Topology::identity(6);
    for w in chain.windows(2) {
        t.set(w[0], w[1], true);
    }
    let perm = rcm_order(&t);
    let mut sorted = perm.clone();
    sorted.sort();
    assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    assert_eq!(bandwidth(&t, &perm), 1);
    assert!(bandwidth(&t, &[0, 1, 2, 3, 4, 5]) > 1);
}

#[test]
fn model_files_round_trip() {
    let m = case_study_model(&figure_topology()).unwrap();
    let file = ModelFile::from_model(&m);
    let text = file.to_json();
    let back = ModelFile::from_json(&text).unwrap().to_model().unwrap();
    assert_eq!(back, m);
    assert_eq!(ModelFile::from_model(&back).to_json(), text);
}

#[test]
fn model_file_shorthand_and_errors() {
    let ok = r#"{"k": 2, "state_counts": [2, 2],
        "local": [[[0, 1], [0, 0]], [[0, 2], [0, 0]]],
        "syncs": [{"rate": 1.5, "factors": ["I", [[0, 1], [0, 0]]]}],
        "pi0_factors": [[1, 0], [1, 0]]}"#;
    let m = ModelFile::from_json(ok).unwrap().to_model().unwrap();
    assert_eq!(m.syncs()[0].factors[0], DMatrix::identity(2, 2));
    assert_eq!(m.topology(), &Topology::identity(2));
    let bad = [
        ok.replace("\"k\": 2", "\"k\": 3"),
        ok.replace("\"I\"", "\"J\""),
        ok.replace("1.5", "-1.5"),
        ok.replace("[[1, 0], [1, 0]]", "[[0.5, 0], [1, 0]]"),
        ok.replace("[[0, 2], [0, 0]]", "[[0, 2], [1, 0]]"),
        ok.replace("\"syncs\"", "\"sync\""),
        ok[..40].to_string(),
    ];
    for text in bad {
        assert!(ModelFile::from_json(&text).and_then(|f| f.to_model()).is_err(), "{text}");
    }
}
