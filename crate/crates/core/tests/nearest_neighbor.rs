use oneclass_core::classifier::{nearest_neighbor, SearchIndex};
use oneclass_core::metrics::DistanceMetric;
use oneclass_core::reference_store::ReferenceSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::brute_force;

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| *x != v[0]) {
            return v;
        }
    }
}

#[test]
fn k1_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..100 {
        let k_rows = rng.random_range(1..=500);
        let d = rng.random_range(2..=64);
        let classes = rng.random_range(1..=5usize.min(k_rows));
        let mut rows: Vec<Vec<f32>> = (0..k_rows).map(|_| random_vector(&mut rng, d)).collect();
        // plant exact duplicates so the tie rule is exercised
        if k_rows > 3 {
            rows[k_rows - 1] = rows[1].clone();
        }
        let labels: Vec<u32> = (0..k_rows)
            .map(|j| if j < classes { j as u32 } else { rng.random_range(0..classes as u32) })
            .collect();
        let set = ReferenceSet::pooled(
            (0..classes).map(|c| format!("c{c}")).collect(),
            &rows.iter().map(|r| oneclass_core::metrics::FeatureVector::new(r.clone()).unwrap()).collect::<Vec<_>>(),
            labels.clone(),
            "oracle",
            DistanceMetric::Cosine,
        )
        .unwrap();
        let q = if k_rows > 3 && instance % 5 == 0 { rows[1].clone() } else { random_vector(&mut rng, d) };
        for metric in DistanceMetric::ALL {
            let (bd, brow) = brute_force(&q, &rows, metric);
            let n = nearest_neighbor(&q, &set, metric, 1).unwrap();
            assert!((n.distance - bd).abs() <= 1e-9, "instance {instance} {metric}: {} vs {bd}", n.distance);
            assert_eq!(n.row, brow, "instance {instance} {metric}");
            assert_eq!(n.class, labels[brow]);
        }
    }
}

#[test]
fn restricted_search_only_sees_its_network() {
    let rows = vec![1.0f32, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9];
    let set = ReferenceSet::new(
        2,
        vec!["a".into(), "b".into()],
        rows,
        vec![0, 0, 1, 1],
        vec![0, 0, 1, 1],
        vec![Some(0), Some(1)],
        "t",
        DistanceMetric::Cosine,
    )
    .unwrap();
    let index = SearchIndex::new(&set, DistanceMetric::Cosine).unwrap();
    let full = index.nearest(&[1.0, 0.05], 1, None).unwrap();
    let only_b = index.nearest(&[1.0, 0.05], 1, Some(1)).unwrap();
    assert_eq!(full.class, 0);
    assert_eq!((only_b.class, only_b.row), (1, 3));
}
