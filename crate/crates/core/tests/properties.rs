//! Property tests for labeling, normalization, selection and metrics.

use icsflow::dataset::{minmax_normalize, pca_project, split_dataset, DatasetMatrix, SplitMode, SplitTag};
use icsflow::eval::{compute_metrics, confusion_matrix};
use icsflow::flow::{DirectionStats, Endpoint, FlowKey, FlowProtocol, FlowRecord};
use icsflow::label::{label_flows, AttackLog, AttackLogEntry, NORMAL};
use icsflow::select::{entropy, mutual_information};
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;

fn flow(a: u8, b: u8, start: f64, len: f64) -> FlowRecord {
    FlowRecord {
        key: FlowKey {
            sender: Endpoint::Ip([10, 0, 0, a].into()),
            receiver: Endpoint::Ip([10, 0, 0, b].into()),
            protocol: FlowProtocol::Ipv4Udp,
        },
        start,
        end: start + len,
        start_offset: 0.0,
        end_offset: 0.0,
        duration: len,
        sender: DirectionStats::default(),
        receiver: DirectionStats::default(),
        tcp: None,
        labels: None,
    }
}

proptest! {
    #[test]
    fn nst_attacks_are_a_subset_of_it_attacks(
        windows in proptest::collection::vec((0.0f64..100.0, 0.1f64..20.0, 1u8..5), 0..5),
        flows in proptest::collection::vec((1u8..6, 1u8..6, 0.0f64..120.0, 0.0f64..0.5), 1..60),
    ) {
        let entries: Vec<AttackLogEntry> = windows
            .iter()
            .enumerate()
            .map(|(i, &(s, len, who))| AttackLogEntry {
                attack: ["ddos", "replay", "mitm"][i % 3].into(),
                start_ts: s,
                end_ts: s + len,
                attacker_ip: [10, 0, 0, who].into(),
                attacker_mac: Default::default(),
                extra: String::new(),
                order: i,
            })
            .collect();
        let mut fs: Vec<FlowRecord> = flows.iter().map(|&(a, b, s, l)| flow(a.min(b), a.max(b), s, l)).collect();
        let log = AttackLog::new(entries);
        label_flows(&mut fs, &log);
        for f in &fs {
            let l = f.labels.as_ref().unwrap();
            prop_assert!(l.nst_b <= l.it_b);
            prop_assert!(l.validate().is_ok());
        }
        let mut fs2: Vec<FlowRecord> = flows.iter().map(|&(a, b, s, l)| flow(a.min(b), a.max(b), s, l)).collect();
        label_flows(&mut fs2, &AttackLog::default());
        prop_assert!(fs2.iter().all(|f| f.labels.as_ref().unwrap().it_m == NORMAL));
    }

    #[test]
    fn training_rows_normalize_into_unit_interval(
        values in proptest::collection::vec(-1e6f64..1e6, 12..80),
        seed in any::<u64>(),
    ) {
        let n = values.len() / 2;
        let mut m = DatasetMatrix {
            column_names: vec!["a".into(), "b".into()],
            rows: Array2::from_shape_vec((n, 2), values[..2 * n].to_vec()).unwrap(),
            labels: vec![0; n],
            class_names: vec![NORMAL.into()],
            split: None,
        };
        split_dataset(&mut m, [0.5, 0.2, 0.3], seed, SplitMode::Random).unwrap();
        let mut again = m.clone();
        minmax_normalize(&mut m).unwrap();
        minmax_normalize(&mut again).unwrap();
        prop_assert_eq!(&m, &again);
        let split = m.split.clone().unwrap();
        for (i, row) in m.rows.rows().into_iter().enumerate() {
            if split[i] == SplitTag::Train {
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn mi_symmetric_and_bounded(
        pairs in proptest::collection::vec((0usize..6, 0usize..4), 2..300),
    ) {
        let x: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = mutual_information(&x, &y).unwrap();
        let b = mutual_information(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a <= entropy(&x).min(entropy(&y)) + 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn confusion_matrix_matches_recount(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let names: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let cm = confusion_matrix(&t, &p, &names).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let naive = pairs.iter().filter(|&&(a, b)| a == i && b == j).count() as u64;
                prop_assert_eq!(cm.counts[i][j], naive);
            }
        }
        let r = compute_metrics(&cm).unwrap();
        prop_assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
        let micro_recall = r.classes.iter().map(|c| c.tp).sum::<u64>() as f64
            / r.classes.iter().map(|c| c.tp + c.fn_).sum::<u64>() as f64;
        prop_assert!((micro_recall - r.accuracy).abs() < 1e-12);
        for c in &r.classes {
            for v in [c.accuracy, c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn pca_matches_jacobi_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let x = Array2::from_shape_simple_fn((50, 10), || rng.gen_range(-1.0..1.0));
        let pca = pca_project(x.view(), 2).unwrap();
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let c = &x - &mean;
        let cov = c.t().dot(&c) / 49.0;
        let ev = jacobi_eigenvalues(DMatrix::from_fn(10, 10, |i, j| cov[[i, j]]));
        for k in 0..2 {
            assert!((pca.explained_variance[k] - ev[k]).abs() < 1e-8, "{} vs {}", pca.explained_variance[k], ev[k]);
        }
        assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
        let full = pca_project(x.view(), 10).unwrap();
        assert!((full.explained_variance.iter().sum::<f64>() - full.total_variance).abs() < 1e-9);
        for row in pca.components.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_ratios_are_rotation_invariant() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_simple_fn((40, 2), || rng.gen_range(-1.0..1.0));
    let (s, c) = 0.7f64.sin_cos();
    let rot = ndarray::array![[c, -s], [s, c]];
    let a = pca_project(x.view(), 2).unwrap().explained_variance_ratio();
    let b = pca_project(x.dot(&rot).view(), 2).unwrap().explained_variance_ratio();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}
