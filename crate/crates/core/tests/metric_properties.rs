use oneclass_core::metrics::{
    correlation_distance, cosine_distance, pairwise_distances, rank_transform, spearman_distance, DistanceMetric,
};
use oneclass_core::ErrorKind;
use proptest::prelude::*;

fn pair(max_dim: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (2..=max_dim).prop_flat_map(|d| (prop::collection::vec(-100.0f32..100.0, d), prop::collection::vec(-100.0f32..100.0, d)))
}

fn non_constant(v: &[f32]) -> bool {
    v.iter().any(|x| *x != v[0])
}

fn usable(metric: DistanceMetric, v: &[f32]) -> bool {
    match metric {
        DistanceMetric::Cosine => v.iter().any(|x| *x != 0.0),
        _ => non_constant(v),
    }
}

fn metric() -> impl Strategy<Value = DistanceMetric> {
    prop::sample::select(DistanceMetric::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn bounded_symmetric_and_zero_on_self((x, y) in pair(64), m in metric()) {
        prop_assume!(usable(m, &x) && usable(m, &y));
        let dxy = m.distance(&x, &y).unwrap();
        let dyx = m.distance(&y, &x).unwrap();
        prop_assert!((0.0..=2.0).contains(&dxy));
        prop_assert!((dxy - dyx).abs() <= 1e-9);
        prop_assert!(m.distance(&x, &x).unwrap() <= 1e-9);
    }

    #[test]
    fn cosine_ignores_positive_scale((x, y) in pair(64), a in 0.01f32..100.0, b in 0.01f32..100.0) {
        prop_assume!(usable(DistanceMetric::Cosine, &x) && usable(DistanceMetric::Cosine, &y));
        let xs: Vec<f32> = x.iter().map(|v| v * a).collect();
        let ys: Vec<f32> = y.iter().map(|v| v * b).collect();
        let d0 = cosine_distance(&x, &y).unwrap();
        let d1 = cosine_distance(&xs, &ys).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-6);
    }

    #[test]
    fn correlation_ignores_affine_maps((x, y) in pair(64), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let xs: Vec<f64> = x.iter().map(|&v| a * f64::from(v) + b).collect();
        let yd: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let d0 = correlation_distance(&x, &y).unwrap();
        let d1 = correlation_distance(&xs, &yd).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-6);
    }

    #[test]
    fn spearman_ignores_monotone_maps((x, y) in pair(64)) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        // strictly increasing, exact in f64 for |v| < 100
        let xs: Vec<f64> = x.iter().map(|&v| { let v = f64::from(v); v * v * v + 3.0 * v }).collect();
        let yd: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let d0 = spearman_distance(&x, &y).unwrap();
        let d1 = spearman_distance(&xs, &yd).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9);
    }

    #[test]
    fn ranks_are_a_permutation_of_average_positions(x in prop::collection::vec(-5i8..5, 1..40)) {
        let r = rank_transform(&x.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] { prop_assert!(r[i] < r[j]); }
                if x[i] == x[j] { prop_assert_eq!(r[i], r[j]); }
            }
        }
    }

    #[test]
    fn pairwise_matches_scalar_loop(
        d in 2usize..16,
        seed_rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 16), 1..8),
        m in metric(),
    ) {
        let rows: Vec<Vec<f32>> = seed_rows.iter().map(|r| r[..d].to_vec()).collect();
        prop_assume!(rows.iter().all(|r| usable(m, r)));
        let (xs, ys) = rows.split_at(rows.len() / 2);
        let matrix = pairwise_distances(xs, ys, m).unwrap();
        prop_assert_eq!((matrix.rows(), matrix.cols()), (xs.len(), ys.len()));
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                prop_assert!((matrix.get(i, j) - m.distance(x, y).unwrap()).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let zero = [0.0f32; 3];
    let flat = [2.0f32; 3];
    let v = [1.0f32, 2.0, 3.0];
    assert_eq!(cosine_distance(&zero, &v).unwrap_err().kind(), ErrorKind::DegenerateVector);
    assert_eq!(correlation_distance(&flat, &v).unwrap_err().kind(), ErrorKind::DegenerateVector);
    assert_eq!(spearman_distance(&v, &flat).unwrap_err().kind(), ErrorKind::DegenerateVector);
    assert_eq!(cosine_distance(&v, &v[..2]).unwrap_err().kind(), ErrorKind::Input);
}
