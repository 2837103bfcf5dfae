//! Oracles shared by the integration tests.
#![allow(dead_code)]

use oneclass_core::metrics::DistanceMetric;

/// Independent scan: plain f64 formulas, first strict minimum wins.
pub fn brute_force(q: &[f32], rows: &[Vec<f32>], metric: DistanceMetric) -> (f64, usize) {
    let prep = |v: &[f32]| -> Vec<f64> {
        let v: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let v = match metric {
            DistanceMetric::Spearman => {
                let mut r = vec![0.0; v.len()];
                for i in 0..v.len() {
                    let less = v.iter().filter(|&&o| o < v[i]).count() as f64;
                    let equal = v.iter().filter(|&&o| o == v[i]).count() as f64;
                    r[i] = less + (equal + 1.0) / 2.0;
                }
                r
            }
            _ => v,
        };
        if metric == DistanceMetric::Cosine {
            v
        } else {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - m).collect()
        }
    };
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
    };
    let pq = prep(q);
    let mut best = (f64::INFINITY, usize::MAX);
    for (j, r) in rows.iter().enumerate() {
        let d = cos(&pq, &prep(r));
        if d < best.0 {
            best = (d, j);
        }
    }
    best
}

