mod common;

use common::{bellman_by_hand, dataset, deflickered, normalized, residual, segment_counts};
use proptest::prelude::*;
use samdp_core::aggregation::{kmeans, kmeans_entropy_regularized, kmeans_spatiotemporal};
use samdp_core::evaluation::{extreme_matrices, transition_entropy, intensity_factor, score_model, step_transition_matrix, vmse};
use samdp_core::samdp::{extract_segments, smoothed_runs, solve_value};
use samdp_core::{fit_samdp, ClusterConfig, ClusterModel, EmbeddedDataset, FitParams, Matrix};

/// Episodes as (rewards, terminal) plus one label per step.
fn episodes_and_labels(k: usize) -> impl Strategy<Value = (Vec<(Vec<f64>, bool)>, Vec<usize>)> {
    prop::collection::vec((prop::collection::vec(0.0f64..1.0, 1..12), any::<bool>()), 1..6).prop_flat_map(
        move |eps| {
            let n: usize = eps.iter().map(|(r, _)| r.len()).sum();
            (Just(eps), prop::collection::vec(0..k, n))
        },
    )
}

proptest! {
    #[test]
    fn segments_match_brute_force((eps, labels) in episodes_and_labels(4), f in 0usize..4) {
        let ds = dataset(&eps);
        let params = FitParams { f_flicker: f, p_truncate: 0.0, gamma: 0.9 };
        let m = fit_samdp(&labels, 4, &ds, &params).unwrap();
        let oracle = segment_counts(&labels, &ds, f, 4);
        let segs = extract_segments(&labels, &ds, 0.9, f).unwrap();
        let total: usize = oracle.iter().flatten().sum();
        prop_assert_eq!(segs.len(), total);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert_eq!(m.counts.get(i, j), oracle[i][j] as f64);
            }
        }
        let p = normalized(&oracle);
        for i in 0..4 {
            prop_assert_eq!(m.p.row(i), &p[i][..]);
        }
    }

    #[test]
    fn rows_are_stochastic_or_empty((eps, labels) in episodes_and_labels(5), trunc in 0.0f64..0.6) {
        let ds = dataset(&eps);
        let m = fit_samdp(&labels, 5, &ds, &FitParams { p_truncate: trunc, ..FitParams::default() }).unwrap();
        for i in 0..5 {
            let s: f64 = m.p.row(i).iter().sum();
            prop_assert!(s == 0.0 || (s - 1.0).abs() <= 1e-9, "row {} sums to {}", i, s);
            prop_assert_eq!(m.p.get(i, i), 0.0);
            // survivors only grow when renormalized; a lone fallback entry is 1
            for &x in m.p.row(i) {
                prop_assert!(x == 0.0 || x >= trunc - 1e-12 || x == 1.0);
            }
        }
    }

    #[test]
    fn no_flicker_filter_is_plain_run_length(labels in prop::collection::vec(0usize..3, 1..40)) {
        let runs = smoothed_runs(&labels, 0);
        let mut rebuilt = Vec::new();
        for w in runs.windows(2) {
            prop_assert_ne!(w[0].0, w[1].0);
            prop_assert_eq!(w[0].2, w[1].1);
        }
        for &(l, s, e) in &runs {
            rebuilt.extend(std::iter::repeat(l).take(e - s));
        }
        prop_assert_eq!(&rebuilt, &labels);
        prop_assert_eq!(deflickered(&labels, 0), labels);
    }

    #[test]
    fn greedy_ignores_reward_scale((eps, labels) in episodes_and_labels(4), m in -6i32..7) {
        // powers of two scale every float exactly, so near-ties cannot flip
        let c = 2f64.powi(m);
        let ds = dataset(&eps);
        let scaled: Vec<(Vec<f64>, bool)> = eps.iter().map(|(r, t)| (r.iter().map(|x| x * c).collect(), *t)).collect();
        let ds2 = dataset(&scaled);
        let p = FitParams::default();
        let a = fit_samdp(&labels, 4, &ds, &p).unwrap();
        let b = fit_samdp(&labels, 4, &ds2, &p).unwrap();
        prop_assert_eq!(a.greedy, b.greedy);
    }

    #[test]
    fn value_solve_residual((eps, labels) in episodes_and_labels(6), gamma in 0.5f64..0.999) {
        let ds = dataset(&eps);
        let m = fit_samdp(&labels, 6, &ds, &FitParams { gamma, ..FitParams::default() }).unwrap();
        let (a, b) = bellman_by_hand(&m);
        let scale = 1.0 + b.iter().fold(0.0f64, |x, y| x.max(y.abs()));
        prop_assert!(residual(&a, &b, &m.value) <= 1e-10 * scale);
        for i in 0..6 {
            if !m.visited(i) {
                prop_assert_eq!(m.value[i], 0.0);
            }
        }
    }

    #[test]
    fn criteria_ignore_cluster_names(
        (eps, labels) in episodes_and_labels(3),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let ds = dataset(&eps);
        let n = labels.len();
        let pts: Vec<[f64; 3]> = (0..n).map(|i| [labels[i] as f64 + 0.01 * i as f64, (i % 3) as f64, 0.0]).collect();
        let pts = Matrix::from_rows(&pts).unwrap();
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let score = |lab: &[usize]| {
            let cfg = ClusterConfig { k: 3, ..ClusterConfig::default() };
            let c = ClusterModel::from_labels(&pts, lab.to_vec(), cfg).unwrap();
            let m = fit_samdp(lab, 3, &ds, &FitParams::default()).unwrap();
            score_model(&pts, &c, &m, &ds).unwrap()
        };
        let (x, y) = (score(&labels), score(&relabeled));
        for (u, v) in x.costs().iter().zip(y.costs()) {
            prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{} vs {}", u, v);
        }
        prop_assert!(x.entropy >= 0.0 && x.vmse >= 0.0);
        prop_assert!(x.intensity_factor >= 0.0 && x.intensity_factor <= 3.0);
    }

    #[test]
    fn zero_window_and_zero_penalty_are_kmeans(
        xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 12..40),
        cut in 1usize..11,
        seed in 0u64..1000,
    ) {
        let pts: Vec<[f64; 3]> = xs.iter().map(|&(a, b)| [a, b, a - b]).collect();
        let e = EmbeddedDataset::new(Matrix::from_rows(&pts).unwrap()).unwrap();
        let cfg = ClusterConfig { k: 3, seed, restarts: 2, ..ClusterConfig::default() };
        let offsets = [0, cut];
        let base = kmeans(&e, &cfg).unwrap();
        let st = kmeans_spatiotemporal(&e, &ClusterConfig { w: 0, ..cfg.clone() }, &offsets).unwrap();
        let er = kmeans_entropy_regularized(&e, &ClusterConfig { d_penalty: 0.0, ..cfg.clone() }, &offsets).unwrap();
        prop_assert_eq!(&st.labels, &base.labels);
        prop_assert_eq!(&er.labels, &base.labels);
    }
}

#[test]
fn deterministic_matrix_entropy_and_identity_intensity() {
    let p = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
    assert_eq!(transition_entropy(&p, &[3, 4, 5]), 0.0);
    let step = step_transition_matrix(&[0, 0, 0, 1, 1, 2, 2, 2], &[0, 3, 5], 3);
    assert_eq!(intensity_factor(&step), 3.0);
}

#[test]
fn two_state_hand_solve() {
    // one skill 0 -> 1 of length 1 with reward 1; state 1 never leaves
    let ds = dataset(&[(vec![1.0, 0.0], false)]);
    let m = fit_samdp(&[0, 1], 2, &ds, &FitParams { f_flicker: 0, gamma: 0.9, p_truncate: 0.1 }).unwrap();
    let v = solve_value(&m).unwrap();
    assert!((v[0] - 1.0).abs() <= 1e-12 && v[1].abs() <= 1e-12, "{v:?}");
}

#[test]
fn model_value_against_itself_is_exact() {
    let eps = vec![(vec![0.0, 0.0, 0.3, 0.0, 1.0], true), (vec![0.2, 0.0, 0.0, 0.7], false)];
    let labels = [0, 0, 1, 1, 2, 1, 1, 2, 2];
    let ds = dataset(&eps);
    let m = fit_samdp(&labels, 3, &ds, &FitParams::default()).unwrap();
    let mut recs = ds.records().to_vec();
    for (r, &l) in recs.iter_mut().zip(&labels) {
        r.value_estimate = m.value[l];
    }
    let ds2 = samdp_core::TrajectoryDataset::from_records(recs).unwrap();
    assert!(m.value.iter().any(|&v| v != 0.0));
    assert_eq!(vmse(&m, &labels, &ds2).unwrap(), 0.0);
}

#[test]
fn single_episode_extremes_are_hand_counts() {
    // returns 1 and 0; the best episode alone goes 0 -> 1 -> 0, the worst 1 -> 0 -> 2
    let ds = dataset(&[(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0], false), (vec![0.0; 6], false)]);
    let labels = [0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 2, 2];
    let m = fit_samdp(&labels, 3, &ds, &FitParams { f_flicker: 0, p_truncate: 0.0, gamma: 0.9 }).unwrap();
    let (tp, tm) = extreme_matrices(&m, &labels, &ds, 1).unwrap();
    assert_eq!(tp, Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap());
    assert_eq!(tm, Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap());
}
