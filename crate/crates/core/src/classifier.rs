//! The score table decision rule and the two multiclass baselines.
//!
//! For a query image every one-class network `i` produces an embedding `S_i`.
//! Row `i` of the score table holds the distance from `S_i` to its nearest
//! reference row and that row's class. The row with the smallest distance
//! (`r_m`, lowest index on ties) decides the prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datasets::Image;
use crate::embedding::{train_multiclass, Backbone, MulticlassNetwork, OneClassModel, TrainingConfig};
use crate::error::{Error, Result};
use crate::metrics::{DistanceMetric, FeatureVector, PreparedVector};
use crate::reference_store::ReferenceSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchScope {
    /// Each `S_i` is searched against the whole pooled set.
    #[default]
    FullR,
    /// Each `S_i` is searched only against the rows network `i` produced.
    RestrictedToRi,
}

impl SearchScope {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchScope::FullR => "full_r",
            SearchScope::RestrictedToRi => "restricted_to_ri",
        }
    }
}

impl std::str::FromStr for SearchScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full_r" => Ok(SearchScope::FullR),
            "restricted_to_ri" => Ok(SearchScope::RestrictedToRi),
            other => Err(Error::Config(format!("unknown search scope '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub metric: DistanceMetric,
    pub k_neighbors: usize,
    pub search_scope: SearchScope,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            metric: DistanceMetric::Cosine,
            k_neighbors: 1,
            search_scope: SearchScope::FullR,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self, reference_rows: usize) -> Result<()> {
        if self.k_neighbors == 0 || self.k_neighbors > reference_rows {
            return Err(Error::Config(format!(
                "k_neighbors must lie in 1..={reference_rows}, got {}",
                self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Result of one nearest-neighbor search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// For k = 1 the exact minimum; for k > 1 the mean of the k smallest.
    pub distance: f64,
    pub class: u32,
    /// Reference row of the closest neighbor carrying `class`.
    pub row: usize,
}

/// Reference rows pre-transformed for one metric.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    metric: DistanceMetric,
    dim: usize,
    rows: Vec<PreparedVector>,
    labels: Vec<u32>,
    source_net: Vec<u32>,
    net_classes: Vec<Option<u32>>,
    class_count: usize,
}

impl SearchIndex {
    pub fn new(set: &ReferenceSet, metric: DistanceMetric) -> Result<Self> {
        let rows = set
            .rows()
            .enumerate()
            .map(|(j, r)| metric.prepare(r).map_err(|e| e.context(format!("reference row {j}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SearchIndex {
            metric,
            dim: set.dim(),
            rows,
            labels: set.labels().to_vec(),
            source_net: set.source_net().to_vec(),
            net_classes: set.net_classes().to_vec(),
            class_count: set.class_count(),
        })
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Exact search over every row, or only rows from `net` when given.
    /// Ties between rows go to the lower row index.
    pub fn nearest(&self, query: &[f32], k: usize, net: Option<u32>) -> Result<Neighbor> {
        if query.len() != self.dim {
            return Err(Error::Input(format!(
                "query has dimension {}, reference set has {}",
                query.len(),
                self.dim
            )));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let q = self.metric.prepare(query)?;
        let candidates = (0..self.rows.len()).filter(|&j| net.is_none_or(|n| self.source_net[j] == n));

        if k == 1 {
            let mut best: Option<(f64, usize)> = None;
            for j in candidates {
                let d = q.distance(&self.rows[j]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            let (distance, row) = best.ok_or_else(|| Error::Input("no reference rows in search scope".into()))?;
            return Ok(Neighbor {
                distance,
                class: self.labels[row],
                row,
            });
        }

        let mut scored: Vec<(f64, usize)> = candidates.map(|j| (q.distance(&self.rows[j]), j)).collect();
        if scored.len() < k {
            return Err(Error::Config(format!("k = {k} exceeds the {} rows in search scope", scored.len())));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        Ok(self.vote(&scored))
    }

    /// Majority label among the k nearest; ties by smaller mean distance, then
    /// lower label index.
    fn vote(&self, nearest: &[(f64, usize)]) -> Neighbor {
        let mut votes = vec![(0usize, 0.0f64, usize::MAX); self.class_count];
        for &(d, j) in nearest {
            let v = &mut votes[self.labels[j] as usize];
            v.0 += 1;
            v.1 += d;
            v.2 = v.2.min(j);
        }
        let mut winner: Option<usize> = None;
        for (label, &(count, sum, _)) in votes.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let better = match winner {
                None => true,
                Some(w) => {
                    let (wc, ws, _) = votes[w];
                    count > wc || (count == wc && sum / (count as f64) < ws / (wc as f64))
                }
            };
            if better {
                winner = Some(label);
            }
        }
        let class = winner.expect("k >= 1 neighbors");
        let first_row = nearest.iter().find(|&&(_, j)| self.labels[j] as usize == class).map(|&(_, j)| j).unwrap();
        Neighbor {
            distance: nearest.iter().map(|(d, _)| d).sum::<f64>() / nearest.len() as f64,
            class: class as u32,
            row: first_row,
        }
    }
}

/// Nearest reference row of `query` under `metric`.
pub fn nearest_neighbor(query: &[f32], set: &ReferenceSet, metric: DistanceMetric, k: usize) -> Result<Neighbor> {
    if k > set.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} reference rows", set.len())));
    }
    SearchIndex::new(set, metric)?.nearest(query, k, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub min_distance: f64,
    pub neighbor_class: u32,
    pub neighbor_row: usize,
}

/// One row per one-class network, in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDb {
    pub rows: Vec<ScoreRow>,
    pub metric: DistanceMetric,
    pub k: usize,
    pub scope: SearchScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted_class: u32,
    /// Index of the winning score table row.
    pub r_m: usize,
    pub score_db: ScoreDb,
}

impl Prediction {
    /// Plain-text form: predicted class, `r_m`, then the score table as
    /// `min_distance,neighbor_class` lines in row order.
    pub fn to_text(&self, class_names: &[String]) -> String {
        let name = |c: u32| class_names.get(c as usize).cloned().unwrap_or_else(|| c.to_string());
        let mut out = String::new();
        let _ = writeln!(out, "predicted_class: {}", name(self.predicted_class));
        let _ = writeln!(out, "r_m: {}", self.r_m);
        let _ = writeln!(out, "metric: {}", self.score_db.metric);
        let _ = writeln!(out, "min_distance,neighbor_class");
        for row in &self.score_db.rows {
            let _ = writeln!(out, "{},{}", row.min_distance, name(row.neighbor_class));
        }
        out
    }
}

/// `S_i = embed(models[i], roi)` for every network.
pub fn query_embeddings(models: &[OneClassModel], roi: &Image) -> Result<Vec<FeatureVector>> {
    if models.is_empty() {
        return Err(Error::Config("no one-class models given".into()));
    }
    let dim = models[0].network().embedding_dim();
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.network().embedding_dim() != dim {
                return Err(Error::Config(format!("network {i} emits {}-d embeddings, expected {dim}", m.network().embedding_dim())));
            }
            m.network().embed(roi).map_err(|e| e.context(format!("network {i}")))
        })
        .collect()
}

fn check_scope(index: &SearchIndex, rows: usize, scope: SearchScope) -> Result<()> {
    if scope == SearchScope::RestrictedToRi {
        let aligned = index.net_classes.len() == rows
            && index.net_classes.iter().enumerate().all(|(i, c)| *c == Some(i as u32));
        if !aligned {
            return Err(Error::Config(
                "restricted_to_ri needs one reference subset per network, network i serving class i".into(),
            ));
        }
    }
    Ok(())
}

/// Score table against a prepared index.
pub fn score_db_with_index(queries: &[FeatureVector], index: &SearchIndex, cfg: &ClassifierConfig) -> Result<ScoreDb> {
    if queries.is_empty() {
        return Err(Error::Input("no query embeddings".into()));
    }
    if index.metric != cfg.metric {
        return Err(Error::Config(format!("index built for {}, classifier uses {}", index.metric, cfg.metric)));
    }
    cfg.validate(index.len())?;
    check_scope(index, queries.len(), cfg.search_scope)?;
    let rows = queries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let net = (cfg.search_scope == SearchScope::RestrictedToRi).then_some(i as u32);
            index
                .nearest(s, cfg.k_neighbors, net)
                .map(|n| ScoreRow {
                    min_distance: n.distance,
                    neighbor_class: n.class,
                    neighbor_row: n.row,
                })
                .map_err(|e| e.context(format!("score row {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreDb {
        rows,
        metric: cfg.metric,
        k: cfg.k_neighbors,
        scope: cfg.search_scope,
    })
}

/// Row `i` is the nearest neighbor of `S_i` within the configured scope.
pub fn build_score_db(queries: &[FeatureVector], set: &ReferenceSet, cfg: &ClassifierConfig) -> Result<ScoreDb> {
    let index = SearchIndex::new(set, cfg.metric)?;
    score_db_with_index(queries, &index, cfg)
}

/// Arg-min over the distance column, lowest row index on ties.
pub fn decide(db: ScoreDb) -> Result<Prediction> {
    let mut r_m = None;
    for (i, row) in db.rows.iter().enumerate() {
        if r_m.is_none_or(|m: usize| row.min_distance < db.rows[m].min_distance) {
            r_m = Some(i);
        }
    }
    let r_m = r_m.ok_or_else(|| Error::Input("score table is empty".into()))?;
    Ok(Prediction {
        predicted_class: db.rows[r_m].neighbor_class,
        r_m,
        score_db: db,
    })
}

/// Full pipeline: query embeddings, score table, decision.
pub fn classify(models: &[OneClassModel], set: &ReferenceSet, roi: &Image, cfg: &ClassifierConfig) -> Result<Prediction> {
    let queries = query_embeddings(models, roi).map_err(|e| e.context("query embedding"))?;
    let db = build_score_db(&queries, set, cfg).map_err(|e| e.context("score table"))?;
    decide(db).map_err(|e| e.context("decision"))
}

/// The one-class ensemble with its reference index prepared once.
#[derive(Debug, Clone)]
pub struct EnsembleClassifier {
    models: Vec<OneClassModel>,
    index: SearchIndex,
    cfg: ClassifierConfig,
}

impl EnsembleClassifier {
    pub fn new(models: Vec<OneClassModel>, set: &ReferenceSet, cfg: ClassifierConfig) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("no one-class models given".into()));
        }
        if models[0].network().embedding_dim() != set.dim() {
            return Err(Error::Config(format!(
                "models emit {}-d embeddings, reference set holds {}-d rows",
                models[0].network().embedding_dim(),
                set.dim()
            )));
        }
        cfg.validate(set.len())?;
        let index = SearchIndex::new(set, cfg.metric)?;
        check_scope(&index, models.len(), cfg.search_scope)?;
        Ok(EnsembleClassifier { models, index, cfg })
    }

    pub fn models(&self) -> &[OneClassModel] {
        &self.models
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn classify(&self, roi: &Image) -> Result<Prediction> {
        let queries = query_embeddings(&self.models, roi).map_err(|e| e.context("query embedding"))?;
        let db = score_db_with_index(&queries, &self.index, &self.cfg).map_err(|e| e.context("score table"))?;
        decide(db).map_err(|e| e.context("decision"))
    }

    /// Same trained models, different metric; no retraining.
    pub fn with_metric(&self, set: &ReferenceSet, metric: DistanceMetric) -> Result<Self> {
        let cfg = ClassifierConfig { metric, ..self.cfg };
        EnsembleClassifier::new(self.models.clone(), set, cfg)
    }
}

/// Single backbone fine-tuned with a C-way softmax head; predicts the arg-max class.
#[derive(Debug, Clone)]
pub struct MulticlassSoftmaxBaseline {
    network: MulticlassNetwork,
}

pub fn baseline_multiclass_softmax(backbone: &Backbone, train_data: &[Vec<Image>], cfg: &TrainingConfig) -> Result<MulticlassSoftmaxBaseline> {
    Ok(MulticlassSoftmaxBaseline {
        network: train_multiclass(backbone, train_data, cfg)?,
    })
}

impl MulticlassSoftmaxBaseline {
    pub fn from_network(network: MulticlassNetwork) -> Self {
        MulticlassSoftmaxBaseline { network }
    }

    pub fn network(&self) -> &MulticlassNetwork {
        &self.network
    }

    pub fn predict(&self, roi: &Image) -> Result<u32> {
        self.network.predict(roi).map(|c| c as u32)
    }
}

/// One multiclass fine-tune, then k-NN over its embeddings of every training image.
#[derive(Debug, Clone)]
pub struct MulticlassKnnBaseline {
    network: MulticlassNetwork,
    references: ReferenceSet,
    index: SearchIndex,
    k: usize,
}

pub fn baseline_multiclass_knn(
    backbone: &Backbone,
    class_names: &[String],
    train_data: &[Vec<Image>],
    cfg: &TrainingConfig,
    classifier: &ClassifierConfig,
) -> Result<MulticlassKnnBaseline> {
    let network = train_multiclass(backbone, train_data, cfg)?;
    MulticlassKnnBaseline::from_network(network, class_names, train_data, classifier)
}

impl MulticlassKnnBaseline {
    /// Builds the pooled reference set from an already fine-tuned network.
    pub fn from_network(
        network: MulticlassNetwork,
        class_names: &[String],
        train_data: &[Vec<Image>],
        classifier: &ClassifierConfig,
    ) -> Result<Self> {
        if class_names.len() != train_data.len() {
            return Err(Error::Config(format!("{} class names for {} classes", class_names.len(), train_data.len())));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, images) in train_data.iter().enumerate() {
            rows.extend(network.network().embed_batch(images)?);
            labels.extend(std::iter::repeat_n(c as u32, images.len()));
        }
        let references = ReferenceSet::pooled(
            class_names.to_vec(),
            &rows,
            labels,
            network.network().spec().identifier.clone(),
            classifier.metric,
        )?;
        classifier.validate(references.len())?;
        let index = SearchIndex::new(&references, classifier.metric)?;
        Ok(MulticlassKnnBaseline {
            network,
            references,
            index,
            k: classifier.k_neighbors,
        })
    }

    pub fn network(&self) -> &MulticlassNetwork {
        &self.network
    }

    pub fn references(&self) -> &ReferenceSet {
        &self.references
    }

    pub fn predict(&self, roi: &Image) -> Result<u32> {
        let e = self.network.network().embed(roi)?;
        Ok(self.index.nearest(&e, self.k, None)?.class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    fn set_2d() -> ReferenceSet {
        ReferenceSet::new(
            2,
            vec!["A".into(), "B".into()],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0, 1],
            vec![0, 1],
            vec![Some(0), Some(1)],
            "test",
            DistanceMetric::Cosine,
        )
        .unwrap()
    }

    fn row(d: f64, c: u32) -> ScoreRow {
        ScoreRow {
            min_distance: d,
            neighbor_class: c,
            neighbor_row: 0,
        }
    }

    fn db(rows: Vec<ScoreRow>) -> ScoreDb {
        ScoreDb {
            rows,
            metric: DistanceMetric::Cosine,
            k: 1,
            scope: SearchScope::FullR,
        }
    }

    #[test]
    fn nearest_examples() {
        let set = set_2d();
        let n = nearest_neighbor(&[1.0, 0.0], &set, DistanceMetric::Cosine, 1).unwrap();
        assert_eq!((n.distance, n.class, n.row), (0.0, 0, 0));
        let n = nearest_neighbor(&[0.9, 0.1], &set, DistanceMetric::Cosine, 1).unwrap();
        // 1 - 0.9 / sqrt(0.82), evaluated independently
        assert!((n.distance - 0.006_116_265_326_381_098).abs() < 1e-7);
        assert_eq!(n.class, 0);
        let e = nearest_neighbor(&[1.0, 0.0, 0.0], &set, DistanceMetric::Cosine, 1).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
        assert_eq!(nearest_neighbor(&[1.0, 0.0], &set, DistanceMetric::Cosine, 3).unwrap_err().kind(), ErrorKind::Config);
    }

    #[test]
    fn ties_go_to_lower_row() {
        let set = ReferenceSet::new(
            2,
            vec!["A".into(), "B".into()],
            vec![0.0, 1.0, 0.0, 2.0],
            vec![1, 0],
            vec![0, 0],
            vec![None],
            "t",
            DistanceMetric::Cosine,
        )
        .unwrap();
        let n = nearest_neighbor(&[0.0, 3.0], &set, DistanceMetric::Cosine, 1).unwrap();
        assert_eq!((n.row, n.class), (0, 1));
    }

    #[test]
    fn knn_majority_vote() {
        let set = ReferenceSet::new(
            1,
            vec!["A".into(), "B".into()],
            vec![1.0, 2.0, 3.0, 10.0],
            vec![0, 1, 1, 0],
            vec![0, 0, 0, 0],
            vec![None],
            "t",
            DistanceMetric::Cosine,
        )
        .unwrap();
        // all cosine distances are 0 for positive 1-d vectors, so the vote ties
        // on count and mean distance at k=2 and the lower label wins
        let index = SearchIndex::new(&set, DistanceMetric::Cosine).unwrap();
        let n = index.nearest(&[5.0], 2, None).unwrap();
        assert_eq!(n.class, 0);
        let n = index.nearest(&[5.0], 3, None).unwrap();
        assert_eq!((n.class, n.row), (1, 1));
    }

    #[test]
    fn decide_examples() {
        let p = decide(db(vec![row(0.2, 3), row(0.5, 1)])).unwrap();
        assert_eq!((p.predicted_class, p.r_m), (3, 0));
        let p = decide(db(vec![row(0.4, 1), row(0.4, 2)])).unwrap();
        assert_eq!((p.predicted_class, p.r_m), (1, 0));
        let p = decide(db(vec![row(0.31, 2), row(0.30, 2), row(0.90, 1)])).unwrap();
        assert_eq!((p.predicted_class, p.r_m), (2, 1));
        assert_eq!(decide(db(vec![])).unwrap_err().kind(), ErrorKind::Input);
    }

    #[test]
    fn score_db_zero_distance_and_restricted_scope() {
        let set = set_2d();
        let s = vec![FeatureVector::new(vec![1.0, 0.0]).unwrap(), FeatureVector::new(vec![0.9, 0.2]).unwrap()];
        let full = build_score_db(&s, &set, &ClassifierConfig::default()).unwrap();
        assert_eq!(full.rows[0].min_distance, 0.0);
        assert_eq!(full.rows[0].neighbor_class, 0);
        assert_eq!(full.rows[1].neighbor_class, 0);

        let cfg = ClassifierConfig {
            search_scope: SearchScope::RestrictedToRi,
            ..ClassifierConfig::default()
        };
        let restricted = build_score_db(&s, &set, &cfg).unwrap();
        let classes: Vec<u32> = restricted.rows.iter().map(|r| r.neighbor_class).collect();
        assert_eq!(classes, vec![0, 1]);

        let e = build_score_db(&s[..1], &set, &cfg).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }

    #[test]
    fn prediction_text() {
        let p = decide(db(vec![row(0.25, 1), row(0.5, 0)])).unwrap();
        let text = p.to_text(&["A".into(), "B".into()]);
        assert_eq!(text, "predicted_class: B\nr_m: 0\nmetric: cosine\nmin_distance,neighbor_class\n0.25,B\n0.5,A\n");
    }

    #[test]
    fn degenerate_query_is_an_error() {
        let set = set_2d();
        let s = vec![FeatureVector::new(vec![0.0, 0.0]).unwrap()];
        let e = build_score_db(&s, &set, &ClassifierConfig::default()).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);
    }
}
