use proptest::prelude::*;

use oaae::eval::auroc;
use oaae::linalg::{self, Matrix};
use oaae::ole::{self, LabeledLatentBatch, OleConfig};
use oaae::scoring;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

/// A plane rotation, or the reflection `−1` when `n == 1`.
fn givens(n: usize, i: usize, j: usize, theta: f64) -> Matrix {
    if n == 1 {
        return Matrix::identity(1).scale(-1.0);
    }
    Matrix::from_fn(n, n, |a, b| match (a, b) {
        _ if (a, b) == (i, i) || (a, b) == (j, j) => theta.cos(),
        _ if (a, b) == (i, j) => -theta.sin(),
        _ if (a, b) == (j, i) => theta.sin(),
        _ if a == b => 1.0,
        _ => 0.0,
    })
}

fn labeled_batch() -> impl Strategy<Value = LabeledLatentBatch> {
    (1usize..=6, 1usize..=10, 2usize..=4).prop_flat_map(|(d, m, c)| {
        (
            prop::collection::vec(-3.0f64..3.0, d * m),
            prop::collection::vec(0..c, m),
        )
            .prop_map(move |(v, labels)| {
                LabeledLatentBatch::new(Matrix::new(d, m, v).unwrap(), labels, c).unwrap()
            })
    })
}

fn scored() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-20i32..20, any::<bool>()), 2..=60).prop_map(|mut v| {
        v[0].1 = true;
        v[1].1 = false;
        v.into_iter()
            .map(|(s, b)| (f64::from(s) / 4.0, b))
            .collect()
    })
}

fn brute(scores: &[(f64, bool)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(a, _) in scores.iter().filter(|s| s.1) {
        for &(b, _) in scores.iter().filter(|s| !s.1) {
            pairs += 1.0;
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn nuclear_norm_is_unitarily_invariant(a in matrix(7), theta in -3.0f64..3.0) {
        let n = a.rows();
        let q = givens(n, 0, n - 1, theta);
        let base = linalg::nuclear_norm(&a).unwrap();
        let rotated = linalg::nuclear_norm(&q.matmul(&a).unwrap()).unwrap();
        prop_assert!((base - rotated).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn norm_inequalities(a in matrix(7)) {
        let nuc = linalg::nuclear_norm(&a).unwrap();
        let fro = a.frobenius_norm();
        let spec = linalg::spectral_norm(&a).unwrap();
        let rank = a.rows().min(a.cols()) as f64;
        prop_assert!(nuc + 1e-9 >= fro);
        prop_assert!(fro + 1e-9 >= spec);
        prop_assert!(nuc <= rank.sqrt() * fro + 1e-9);
    }

    #[test]
    fn nuclear_norm_is_subadditive(a in matrix(6), s in -2.0f64..2.0) {
        let b = Matrix::from_fn(a.rows(), a.cols(), |i, j| s * ((i * 7 + j * 3) % 5) as f64 - a[(i, j)] * 0.3);
        let lhs = linalg::nuclear_norm(&a.add(&b).unwrap()).unwrap();
        let rhs = linalg::nuclear_norm(&a).unwrap() + linalg::nuclear_norm(&b).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn subgradient_has_unit_spectral_bound(a in matrix(7)) {
        let g = linalg::nuclear_norm_subgradient(&a, 1e-6).unwrap();
        prop_assert!(linalg::spectral_norm(&g).unwrap() <= 1.0 + 1e-9);
        // ⟨G, A⟩ recovers the nuclear norm above the threshold.
        let inner: f64 = g.as_slice().iter().zip(a.as_slice()).map(|(x, y)| x * y).sum();
        let nuc = linalg::nuclear_norm(&a).unwrap();
        prop_assert!((inner - nuc).abs() <= 1e-5 * nuc.max(1.0) + 1e-5 * a.rows().min(a.cols()) as f64);
    }

    #[test]
    fn ole_loss_is_nonnegative_at_zero_margin(batch in labeled_batch()) {
        let cfg = OleConfig { delta_margin: 0.0, sv_threshold: 1e-6 };
        prop_assert!(ole::ole_loss(&batch, &cfg).unwrap() >= -1e-9);
    }

    #[test]
    fn ole_loss_is_rotation_invariant(batch in labeled_batch(), theta in -3.0f64..3.0) {
        let d = batch.latents().rows();
        let q = givens(d, 0, d - 1, theta);
        let rotated = LabeledLatentBatch::new(
            q.matmul(batch.latents()).unwrap(),
            batch.labels().to_vec(),
            4,
        ).unwrap();
        let cfg = OleConfig::default();
        let a = ole::ole_loss(&batch, &cfg).unwrap();
        let b = ole::ole_loss(&rotated, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ole_is_column_permutation_equivariant(batch in labeled_batch(), shift in 0usize..10) {
        let m = batch.latents().cols();
        let order: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
        let permuted = LabeledLatentBatch::new(
            batch.latents().select_columns(&order),
            order.iter().map(|&j| batch.labels()[j]).collect(),
            4,
        ).unwrap();
        let cfg = OleConfig::default();
        let (l0, g0) = ole::ole_loss_and_grad(&batch, &cfg).unwrap();
        let (l1, g1) = ole::ole_loss_and_grad(&permuted, &cfg).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-9 * l0.abs().max(1.0));
        prop_assert!(g0.select_columns(&order).max_abs_diff(&g1) <= 1e-8);
    }

    #[test]
    fn auroc_matches_pairwise_count(s in scored()) {
        prop_assert_eq!(auroc(&s).unwrap(), brute(&s));
    }

    #[test]
    fn auroc_ignores_monotone_transforms(s in scored()) {
        let t: Vec<(f64, bool)> = s.iter().map(|&(v, b)| (v.exp(), b)).collect();
        prop_assert!((auroc(&s).unwrap() - auroc(&t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn flipped_flags_complement_auroc(v in prop::collection::hash_set(-1000i32..1000, 2..50), k in 1usize..49) {
        let v: Vec<i32> = v.into_iter().collect();
        let k = k.min(v.len() - 1);
        let s: Vec<(f64, bool)> = v.iter().enumerate().map(|(i, &x)| (f64::from(x), i < k)).collect();
        let f: Vec<(f64, bool)> = s.iter().map(|&(x, b)| (x, !b)).collect();
        prop_assert!((auroc(&s).unwrap() + auroc(&f).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn angle_ignores_positive_scaling(z in prop::collection::vec(-4.0f64..4.0, 2..8), a in 0.01f64..50.0, b in 0.01f64..50.0) {
        prop_assume!(z.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let w: Vec<f64> = z.iter().rev().map(|v| v + 0.5).collect();
        prop_assume!(w.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let za: Vec<f64> = z.iter().map(|v| v * a).collect();
        let wb: Vec<f64> = w.iter().map(|v| v * b).collect();
        let base = scoring::angle(&z, &w).unwrap();
        prop_assert!((base - scoring::angle(&za, &wb).unwrap()).abs() <= 1e-7);
        prop_assert!(scoring::angle(&z, &z).unwrap() <= 1e-7);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        prop_assert!((scoring::angle(&z, &neg).unwrap() - std::f64::consts::PI).abs() <= 1e-7);
    }

    #[test]
    fn angle_ranks_like_one_minus_cosine(pairs in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), prop::collection::vec(-2.0f64..2.0, 3), any::<bool>()), 2..30)) {
        let mut pairs = pairs;
        for p in pairs.iter_mut() {
            p.0[0] += 3.0;
            p.1[1] += 3.0;
        }
        pairs[0].2 = true;
        pairs[1].2 = false;
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let by_angle: Vec<(f64, bool)> = pairs.iter().map(|(a, b, n)| (scoring::angle(a, b).unwrap(), *n)).collect();
        let by_cos: Vec<(f64, bool)> = pairs.iter().map(|(a, b, n)| (1.0 - cos(a, b), *n)).collect();
        prop_assert_eq!(auroc(&by_angle).unwrap(), auroc(&by_cos).unwrap());
    }
}
