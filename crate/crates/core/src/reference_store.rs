//! The pooled reference set of training embeddings and its on-disk format.
//!
//! Payload layout (all little-endian): magic `OCR1`, `u32` row count K,
//! `u32` dimension D, then K·D `f32` values row-major. Labels, per-row source
//! network and metadata live in a TOML sidecar next to the payload, which also
//! carries a SHA-256 checksum of the payload bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Image;
use crate::embedding::{sha256_hex, OneClassModel};
use crate::error::{Error, Result};
use crate::metrics::{DistanceMetric, FeatureVector};

pub const PAYLOAD_MAGIC: &[u8; 4] = b"OCR1";
const HEADER_LEN: usize = 12;

/// Labeled K × D matrix of reference embeddings.
///
/// Row `j` came from network `source_net[j]`. A network that serves a single
/// class (`net_classes[i] == Some(c)`) only contributes rows labeled `c`; a
/// multiclass network (`None`) may contribute any label.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    dim: usize,
    class_names: Vec<String>,
    vectors: Vec<f32>,
    labels: Vec<u32>,
    source_net: Vec<u32>,
    net_classes: Vec<Option<u32>>,
    backbone: String,
    metric: DistanceMetric,
}

impl ReferenceSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        class_names: Vec<String>,
        vectors: Vec<f32>,
        labels: Vec<u32>,
        source_net: Vec<u32>,
        net_classes: Vec<Option<u32>>,
        backbone: impl Into<String>,
        metric: DistanceMetric,
    ) -> Result<Self> {
        let set = ReferenceSet {
            dim,
            class_names,
            vectors,
            labels,
            source_net,
            net_classes,
            backbone: backbone.into(),
            metric,
        };
        set.validate()?;
        Ok(set)
    }

    /// Rows produced by one multiclass network, e.g. for the pooled kNN baseline.
    pub fn pooled(
        class_names: Vec<String>,
        rows: &[FeatureVector],
        labels: Vec<u32>,
        backbone: impl Into<String>,
        metric: DistanceMetric,
    ) -> Result<Self> {
        let dim = rows.first().map(|r| r.dim()).unwrap_or(0);
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (j, r) in rows.iter().enumerate() {
            if r.dim() != dim {
                return Err(Error::Input(format!("row {j} has dimension {}, expected {dim}", r.dim())));
            }
            vectors.extend_from_slice(r);
        }
        let k = rows.len();
        ReferenceSet::new(dim, class_names, vectors, labels, vec![0; k], vec![None], backbone, metric)
    }

    /// Checks every structural invariant in O(K·D).
    pub fn validate(&self) -> Result<()> {
        let k = self.labels.len();
        if self.dim == 0 {
            return Err(Error::Integrity("reference set dimension must be positive".into()));
        }
        if k == 0 {
            return Err(Error::Integrity("reference set has no rows".into()));
        }
        if self.vectors.len() != k * self.dim || self.source_net.len() != k {
            return Err(Error::Integrity(format!(
                "reference set holds {} values, {} labels and {} sources for {k} rows of dimension {}",
                self.vectors.len(),
                k,
                self.source_net.len(),
                self.dim
            )));
        }
        let classes = self.class_names.len();
        let mut seen = vec![false; classes];
        for j in 0..k {
            let label = self.labels[j] as usize;
            if label >= classes {
                return Err(Error::Integrity(format!("row {j} has unknown class index {label}")));
            }
            seen[label] = true;
            let net = self.source_net[j] as usize;
            match self.net_classes.get(net) {
                None => return Err(Error::Integrity(format!("row {j} names unknown network {net}"))),
                Some(Some(c)) if *c as usize != label => {
                    return Err(Error::Integrity(format!(
                        "row {j} is labeled {} but network {net} serves {}",
                        self.class_names[label], self.class_names[*c as usize]
                    )))
                }
                _ => {}
            }
            let row = self.row(j);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("row {j} holds non-finite values")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateVector(format!("reference row {j} has zero norm")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Integrity(format!("class '{}' has no reference rows", self.class_names[missing])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> u32 {
        self.labels[j]
    }

    pub fn source_net(&self) -> &[u32] {
        &self.source_net
    }

    pub fn net_classes(&self) -> &[Option<u32>] {
        &self.net_classes
    }

    pub fn backbone(&self) -> &str {
        &self.backbone
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn set_metric(&mut self, metric: DistanceMetric) {
        self.metric = metric;
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Embeds class `i`'s training images with network `i` and stacks the results
/// class-major, preserving image order within each class.
pub fn build_reference_set(models: &[OneClassModel], train_images: &[Vec<Image>]) -> Result<ReferenceSet> {
    if models.is_empty() {
        return Err(Error::Config("no one-class models given".into()));
    }
    if models.len() != train_images.len() {
        return Err(Error::Config(format!(
            "{} models for {} classes of training images",
            models.len(),
            train_images.len()
        )));
    }
    let dim = models[0].network().embedding_dim();
    for (i, m) in models.iter().enumerate() {
        if m.class().id != i {
            return Err(Error::Config(format!(
                "model {i} was trained for class {} ('{}')",
                m.class().id,
                m.class().name
            )));
        }
        if m.network().embedding_dim() != dim {
            return Err(Error::Config(format!("model {i} emits {}-d embeddings, model 0 emits {dim}-d", m.network().embedding_dim())));
        }
    }

    let per_class: Vec<Vec<FeatureVector>> = models
        .par_iter()
        .zip(train_images.par_iter())
        .map(|(m, images)| m.network().embed_batch(images).map_err(|e| e.context(format!("class '{}'", m.class().name))))
        .collect::<Result<_>>()?;

    let k: usize = per_class.iter().map(Vec::len).sum();
    let mut vectors = Vec::with_capacity(k * dim);
    let mut labels = Vec::with_capacity(k);
    let mut source_net = Vec::with_capacity(k);
    for (i, rows) in per_class.iter().enumerate() {
        for (j, row) in rows.iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateVector(format!(
                    "embedding of training image {j} of class '{}' has zero norm",
                    models[i].class().name
                )));
            }
            vectors.extend_from_slice(row);
            labels.push(i as u32);
            source_net.push(i as u32);
        }
    }
    ReferenceSet::new(
        dim,
        models.iter().map(|m| m.class().name.clone()).collect(),
        vectors,
        labels,
        source_net,
        (0..models.len() as u32).map(Some).collect(),
        models[0].network().spec().identifier.clone(),
        DistanceMetric::default(),
    )
}

/// Sidecar metadata stored next to the binary payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceManifest {
    pub format: String,
    pub rows: usize,
    pub dim: usize,
    pub metric: DistanceMetric,
    pub backbone: String,
    pub created_unix: u64,
    pub checksum: String,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    /// Class served by each network; -1 marks a multiclass network.
    pub net_classes: Vec<i64>,
    pub labels: Vec<u32>,
    pub source_net: Vec<u32>,
}

/// Sidecar path for a payload path: `refs.ocr` → `refs.ocr.manifest.toml`.
pub fn manifest_path(payload: &Path) -> PathBuf {
    let mut name = payload.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.toml");
    payload.with_file_name(name)
}

fn encode_payload(set: &ReferenceSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + set.vectors.len() * 4);
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set for reproducible output.
fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

pub fn save_reference_set(set: &ReferenceSet, path: &Path) -> Result<()> {
    set.validate()?;
    if set.len() > u32::MAX as usize || set.dim > u32::MAX as usize {
        return Err(Error::Input("reference set too large for the OCR1 format".into()));
    }
    let payload = encode_payload(set);
    let manifest = ReferenceManifest {
        format: "OCR1".into(),
        rows: set.len(),
        dim: set.dim,
        metric: set.metric,
        backbone: set.backbone.clone(),
        created_unix: creation_time(),
        checksum: format!("sha256:{}", sha256_hex(&payload)),
        class_names: set.class_names.clone(),
        class_counts: set.class_counts(),
        net_classes: set.net_classes.iter().map(|c| c.map_or(-1, i64::from)).collect(),
        labels: set.labels.clone(),
        source_net: set.source_net.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Input(format!("cannot encode manifest: {e}")))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, &payload).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn load_reference_set(path: &Path) -> Result<ReferenceSet> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ReferenceManifest =
        toml::from_str(&text).map_err(|e| Error::Corruption(format!("{}: {e}", mpath.display())))?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;

    if format!("sha256:{}", sha256_hex(&payload)) != manifest.checksum {
        return Err(Error::Corruption(format!("{} does not match its manifest checksum", path.display())));
    }
    if payload.len() < HEADER_LEN || &payload[..4] != PAYLOAD_MAGIC {
        return Err(Error::Corruption(format!("{} is not an OCR1 payload", path.display())));
    }
    let rows = u32::from_le_bytes(payload[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(payload[8..12].try_into().unwrap()) as usize;
    if payload.len() != HEADER_LEN + rows * dim * 4 {
        return Err(Error::Corruption(format!(
            "payload is {} bytes but its header declares {rows}x{dim}",
            payload.len()
        )));
    }
    if manifest.format != "OCR1" || manifest.rows != rows || manifest.dim != dim {
        return Err(Error::Integrity(format!(
            "manifest declares {} {}x{}, payload holds OCR1 {rows}x{dim}",
            manifest.format, manifest.rows, manifest.dim
        )));
    }
    if manifest.labels.len() != rows || manifest.source_net.len() != rows || manifest.class_counts.iter().sum::<usize>() != rows {
        return Err(Error::Integrity("manifest labels or class counts disagree with the row count".into()));
    }
    let vectors: Vec<f32> = payload[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net_classes = manifest
        .net_classes
        .iter()
        .map(|&c| if c < 0 { Ok(None) } else { u32::try_from(c).map(Some) })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Integrity("network class index out of range".into()))?;
    let set = ReferenceSet::new(
        dim,
        manifest.class_names,
        vectors,
        manifest.labels,
        manifest.source_net,
        net_classes,
        manifest.backbone,
        manifest.metric,
    )?;
    if set.class_counts() != manifest.class_counts {
        return Err(Error::Integrity("manifest class counts disagree with the row labels".into()));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{synthetic_backbone, train_one_class, ClassLabel, OneClassStrategy, TrainingConfig};
    use crate::ErrorKind;

    fn tiny_set() -> ReferenceSet {
        ReferenceSet::new(
            2,
            vec!["a".into(), "b".into()],
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
            vec![0, 1, 1],
            vec![0, 1, 1],
            vec![Some(0), Some(1)],
            "synthetic",
            DistanceMetric::Cosine,
        )
        .unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        let ok = tiny_set();
        assert_eq!(ok.class_counts(), vec![1, 2]);

        let e = ReferenceSet::new(2, vec!["a".into()], vec![0.0, 0.0], vec![0], vec![0], vec![Some(0)], "s", DistanceMetric::Cosine)
            .unwrap_err();
        assert_eq!(e.kind(), ErrorKind::DegenerateVector);

        let e = ReferenceSet::new(
            2,
            vec!["a".into(), "b".into()],
            vec![1.0, 0.0],
            vec![0],
            vec![0],
            vec![Some(0)],
            "s",
            DistanceMetric::Cosine,
        )
        .unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Integrity, "class b has no rows");

        let e = ReferenceSet::new(
            2,
            vec!["a".into(), "b".into()],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0, 1],
            vec![0, 0],
            vec![Some(0), Some(1)],
            "s",
            DistanceMetric::Cosine,
        )
        .unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Integrity, "net 0 cannot emit class b");
    }

    #[test]
    fn build_from_models() {
        let b = synthetic_backbone(1, 8).unwrap();
        let imgs: Vec<Vec<Image>> = (0..3)
            .map(|c| (0..5).map(|i| Image::from_fn(32, 32, |x, y, ch| ((x * (c + 1) + y * (i + 2) + ch) % 9) as f32 / 9.0)).collect())
            .collect();
        let cfg = TrainingConfig::with_minibatch(5, 1);
        let models: Vec<OneClassModel> = (0..3)
            .map(|c| train_one_class(&b, &imgs[c], &ClassLabel::new(c, format!("c{c}")), OneClassStrategy::PositiveOnlyLiteral, &cfg, None).unwrap())
            .collect();
        let set = build_reference_set(&models, &imgs).unwrap();
        assert_eq!((set.len(), set.dim()), (15, 8));
        for c in 0..3 {
            for (i, img) in imgs[c].iter().enumerate() {
                let j = c * 5 + i;
                assert_eq!(set.label(j) as usize, c);
                assert_eq!(set.source_net()[j] as usize, c);
                let expected = models[c].network().embed(img).unwrap();
                let diff = set.row(j).iter().zip(expected.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
                assert!(diff <= 1e-5);
            }
        }

        let e = build_reference_set(&models[..2], &imgs).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let swapped = vec![models[1].clone(), models[0].clone(), models[2].clone()];
        assert_eq!(build_reference_set(&swapped, &imgs).unwrap_err().kind(), ErrorKind::Config);
    }

    #[test]
    fn save_load_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.ocr");
        let set = tiny_set();
        save_reference_set(&set, &path).unwrap();
        assert_eq!(load_reference_set(&path).unwrap(), set);
        assert!(manifest_path(&path).ends_with("refs.ocr.manifest.toml"));

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"OCR1");
        assert_eq!(bytes.len(), 12 + 6 * 4);
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert_eq!(load_reference_set(&path).unwrap_err().kind(), ErrorKind::Corruption);
    }
}
