//! Distances between embedding vectors.
//!
//! All three metrics reduce to the same kernel: transform each vector
//! (identity, centering, or rank-then-center), then take one minus the cosine
//! of the transformed pair. Accumulation is always `f64`, whatever the storage
//! type of the inputs.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedding emitted by a network's embedding layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("feature vector must have at least one entry".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("feature vector entry {i} is not finite")));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Correlation,
    Spearman,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Cosine,
        DistanceMetric::Correlation,
        DistanceMetric::Spearman,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Correlation => "correlation",
            DistanceMetric::Spearman => "spearman",
        }
    }

    /// Scalar distance between two vectors under this metric.
    pub fn distance<T: Copy + Into<f64>>(self, x: &[T], y: &[T]) -> Result<f64> {
        check_same_dim(x.len(), y.len())?;
        let a = self.prepare(x)?;
        let b = self.prepare(y)?;
        Ok(a.distance(&b))
    }

    /// Applies the metric's per-vector transform once so the vector can be
    /// compared against many others.
    pub fn prepare<T: Copy + Into<f64>>(self, x: &[T]) -> Result<PreparedVector> {
        check_finite(x)?;
        match self {
            DistanceMetric::Cosine => {
                let values: Vec<f64> = x.iter().map(|&v| v.into()).collect();
                PreparedVector::from_values(values, "zero Euclidean norm")
            }
            DistanceMetric::Correlation => {
                let values: Vec<f64> = x.iter().map(|&v| v.into()).collect();
                centered(values, "constant vector has zero variance")
            }
            DistanceMetric::Spearman => {
                if x.len() < 2 {
                    return Err(Error::Input("spearman distance needs at least 2 entries".into()));
                }
                centered(rank_transform(x), "all entries tied")
            }
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(DistanceMetric::Cosine),
            "correlation" => Ok(DistanceMetric::Correlation),
            "spearman" => Ok(DistanceMetric::Spearman),
            other => Err(Error::Config(format!("unknown distance metric '{other}'"))),
        }
    }
}

/// A vector after the metric's transform, with its squared norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedVector {
    values: Vec<f64>,
    sq_norm: f64,
}

impl PreparedVector {
    fn from_values(values: Vec<f64>, degenerate: &str) -> Result<Self> {
        let sq_norm = dot(&values, &values);
        if sq_norm == 0.0 || !sq_norm.is_finite() {
            return Err(Error::DegenerateVector(degenerate.to_string()));
        }
        Ok(PreparedVector { values, sq_norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `1 - cos(a, b)` clamped to `[0, 2]`. A single square root of the
    /// product keeps `d(x, x)` exactly zero.
    pub fn distance(&self, other: &PreparedVector) -> f64 {
        let cos = dot(&self.values, &other.values) / (self.sq_norm * other.sq_norm).sqrt();
        1.0 - cos.clamp(-1.0, 1.0)
    }
}

fn centered(mut values: Vec<f64>, degenerate: &str) -> Result<PreparedVector> {
    if values.len() < 2 {
        return Err(Error::Input("correlation distance needs at least 2 entries".into()));
    }
    // Exact check: a centered constant vector can carry rounding residue.
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::DegenerateVector(degenerate.to_string()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    PreparedVector::from_values(values, degenerate)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("dimension mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Input("vectors must have at least one entry".into()));
    }
    Ok(())
}

fn check_finite<T: Copy + Into<f64>>(x: &[T]) -> Result<()> {
    match x.iter().position(|&v| !v.into().is_finite()) {
        Some(i) => Err(Error::Input(format!("entry {i} is not finite"))),
        None => Ok(()),
    }
}

/// `1 - (x·y) / (‖x‖‖y‖)`.
pub fn cosine_distance<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    DistanceMetric::Cosine.distance(x, y)
}

/// One minus the Pearson correlation coefficient.
pub fn correlation_distance<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    DistanceMetric::Correlation.distance(x, y)
}

/// Correlation distance between the fractional ranks of `x` and `y`.
pub fn spearman_distance<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    DistanceMetric::Spearman.distance(x, y)
}

/// 1-based fractional ranks; tied entries share the average of the ranks they span.
pub fn rank_transform<T: Copy + Into<f64>>(x: &[T]) -> Vec<f64> {
    let values: Vec<f64> = x.iter().map(|&v| v.into()).collect();
    ranks_of(&values)
}

fn ranks_of(values: &[f64]) -> Vec<f64> {
    // integer keys ordered like `f64::total_cmp`; the index breaks ties, which
    // does not matter since tied entries share an averaged rank
    let mut order: Vec<(u64, usize)> = values.iter().map(|v| total_order_key(*v)).zip(0..).collect();
    order.sort_unstable();

    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && order[end].0 == order[start].0 {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &(_, idx) in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn total_order_key(v: f64) -> u64 {
    // adding 0.0 maps -0.0 to 0.0 so signed zeros stay tied
    let bits = (v + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Row-major `rows × cols` matrix of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Distance from every `xs[s]` to every `ys[t]`.
pub fn pairwise_distances<T, V>(xs: &[V], ys: &[V], metric: DistanceMetric) -> Result<DistanceMatrix>
where
    T: Copy + Into<f64>,
    V: AsRef<[T]>,
{
    let dim = xs
        .first()
        .or(ys.first())
        .map(|v| v.as_ref().len())
        .unwrap_or(0);
    let prepare = |vs: &[V], side: &str| -> Result<Vec<PreparedVector>> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| {
                let v = v.as_ref();
                check_same_dim(dim, v.len())
                    .and_then(|_| metric.prepare(v))
                    .map_err(|e| e.context(format!("{side} row {i}")))
            })
            .collect()
    };
    let px = prepare(xs, "X")?;
    let py = prepare(ys, "Y")?;

    let mut entries = Vec::with_capacity(px.len() * py.len());
    for a in &px {
        entries.extend(py.iter().map(|b| a.distance(b)));
    }
    Ok(DistanceMatrix {
        rows: px.len(),
        cols: py.len(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0, 1e-12));
        assert!(close(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0, 1e-12));
        assert!(close(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0, 1e-12));
        // 1 - 1/sqrt(2), evaluated independently
        assert!(close(
            cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.292_893_218_813_452_54,
            1e-12
        ));
    }

    #[test]
    fn cosine_rejects_zero_norm_and_mismatch() {
        let e = cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);
        let e = cosine_distance(&[1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
        let e = cosine_distance(&[f64::NAN, 1.0], &[1.0, 0.0]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
    }

    #[test]
    fn correlation_examples() {
        assert!(close(correlation_distance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 0.0, 1e-12));
        assert!(close(correlation_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), 2.0, 1e-12));
        assert!(close(
            correlation_distance(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.2,
            1e-12
        ));
    }

    #[test]
    fn correlation_rejects_constant() {
        let e = correlation_distance(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);
    }

    #[test]
    fn signed_zeros_tie_in_ranks() {
        assert_eq!(rank_transform(&[0.0f64, -0.0, -1.0, 2.0]), vec![2.5, 2.5, 1.0, 4.0]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_transform(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_transform(&[5.0, 5.0, 1.0]), vec![2.5, 2.5, 1.0]);
        assert_eq!(rank_transform(&[3.0, 1.0, 4.0, 1.0]), vec![3.0, 1.5, 4.0, 1.5]);
        assert!(rank_transform::<f64>(&[]).is_empty());
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman_distance(&[1.0, 2.0, 3.0], &[10.0, 100.0, 1000.0]).unwrap(), 0.0, 1e-12));
        assert!(close(spearman_distance(&[1.0, 2.0, 3.0], &[9.0, 5.0, 2.0]).unwrap(), 2.0, 1e-12));
        assert!(close(
            spearman_distance(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.2,
            1e-12
        ));
        let e = spearman_distance(&[2.0, 2.0], &[1.0, 3.0]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);
    }

    #[test]
    fn pairwise_examples() {
        let x = vec![vec![1.0, 0.0]];
        let y = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = pairwise_distances(&x, &y, DistanceMetric::Cosine).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert!(close(m.get(0, 0), 0.0, 1e-12) && close(m.get(0, 1), 1.0, 1e-12));

        let m = pairwise_distances(&y, &y, DistanceMetric::Cosine).unwrap();
        assert!(close(m.get(0, 0), 0.0, 1e-12) && close(m.get(1, 1), 0.0, 1e-12));
        assert!(close(m.get(0, 1), 1.0, 1e-12) && close(m.get(1, 0), 1.0, 1e-12));
    }

    #[test]
    fn pairwise_error_names_row() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let e = pairwise_distances(&x, &x, DistanceMetric::Cosine).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);
        assert!(e.to_string().contains("X row 1"), "{e}");
    }

    #[test]
    fn metric_parses() {
        for m in DistanceMetric::ALL {
            assert_eq!(m.as_str().parse::<DistanceMetric>().unwrap(), m);
        }
        assert_eq!("euclid".parse::<DistanceMetric>().unwrap_err().kind(), ErrorKind::Config);
    }
}
