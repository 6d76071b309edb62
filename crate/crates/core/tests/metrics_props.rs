use cifm::metrics::{ari, global_average, macro_f1, macro_recall, pearson, spearman, uniformity};
use ndarray::Array2;
use proptest::prelude::*;

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

/// Rotation composed of Givens rotations in every coordinate plane.
fn rotation(d: usize, angles: &[f64]) -> Array2<f64> {
    let mut r = Array2::eye(d);
    let mut k = 0;
    for i in 0..d {
        for j in i + 1..d {
            let (s, c) = angles[k % angles.len()].sin_cos();
            let mut g = Array2::eye(d);
            g[[i, i]] = c;
            g[[j, j]] = c;
            g[[i, j]] = -s;
            g[[j, i]] = s;
            r = r.dot(&g);
            k += 1;
        }
    }
    r
}

proptest! {
    #[test]
    fn relabeling_both_sides_keeps_macro_scores(
        (gold, pred) in (4usize..40).prop_flat_map(|n| (labels(n, 4), labels(n, 4))),
        shift in 1usize..4,
    ) {
        let map = |v: &[usize]| v.iter().map(|&c| (c + shift) % 4).collect::<Vec<_>>();
        let all = [0, 1, 2, 3];
        prop_assert!((macro_f1(&gold, &pred, Some(&all)).unwrap() - macro_f1(&map(&gold), &map(&pred), Some(&all)).unwrap()).abs() < 1e-12);
        prop_assert!((macro_recall(&gold, &pred, Some(&all)).unwrap() - macro_recall(&map(&gold), &map(&pred), Some(&all)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ari_ignores_cluster_names(
        (gold, clusters) in (2usize..40).prop_flat_map(|n| (labels(n, 3), labels(n, 5))),
        shift in 1usize..5,
    ) {
        let renamed: Vec<usize> = clusters.iter().map(|&c| (c + shift) % 5 + 10).collect();
        let a = ari(&gold, &clusters).unwrap();
        let b = ari(&gold, &renamed).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!((a.value - ari(&clusters, &gold).unwrap().value).abs() < 1e-12);
        prop_assert!(a.value <= 1.0 + 1e-12);
    }

    #[test]
    fn uniformity_rotation_invariant(
        z in prop::collection::vec(-3.0f64..3.0, 24).prop_map(|v| Array2::from_shape_vec((8, 3), v).unwrap()),
        angles in prop::collection::vec(-3.2f64..3.2, 3),
    ) {
        let rotated = z.dot(&rotation(3, &angles));
        prop_assert!((uniformity(&z, 2.0).unwrap() - uniformity(&rotated, 2.0).unwrap()).abs() < 1e-9);
        prop_assert!(uniformity(&z, 2.0).unwrap() <= 1e-12);
    }

    #[test]
    fn spearman_sees_only_order(x in prop::collection::vec(-5.0f64..5.0, 3..30), y in prop::collection::vec(-5.0f64..5.0, 30)) {
        let y = &y[..x.len()];
        let base = spearman(&x, y);
        prop_assume!(base.is_ok());
        let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + v.exp()).collect();
        prop_assert!((base.unwrap() - spearman(&warped, y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_invariant(x in prop::collection::vec(-5.0f64..5.0, 3..30), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + (i as f64).sin()).collect();
        let base = pearson(&x, &y);
        prop_assume!(base.is_ok());
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((base.unwrap() - pearson(&moved, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn global_average_is_mean_of_means(tasks in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..4), 1..6)) {
        let expected = tasks.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).sum::<f64>() / tasks.len() as f64;
        prop_assert!((global_average(&tasks).unwrap() - expected).abs() < 1e-12);
        let mut reversed = tasks.clone();
        reversed.reverse();
        prop_assert!((global_average(&reversed).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn empty_inputs_are_errors() {
    assert!(global_average(&[]).is_err());
    assert!(global_average(&[vec![]]).is_err());
    assert!(macro_f1(&[], &[], None).is_err());
    assert!(uniformity(&Array2::zeros((1, 2)), 2.0).is_err());
}
