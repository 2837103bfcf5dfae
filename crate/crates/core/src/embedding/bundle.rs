//! One directory per trained network: `weights.bin` plus `manifest.toml`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::DenseLayer;
use super::train::{OneClassModel, OneClassStrategy, TrainingPlan};
use super::{Backbone, BackboneSpec, ClassLabel, EMBEDDING_LAYER};
use crate::error::{Error, Result};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub class_id: usize,
    pub class_name: String,
    pub strategy: OneClassStrategy,
    pub backbone: String,
    pub embedding_dim: usize,
    pub seed: u64,
    pub training_seconds: f64,
    pub iterations_run: usize,
    pub early_stopped: bool,
    pub embedding_layer: String,
    pub weights_sha256: String,
    pub plan: TrainingPlan,
    pub backbone_spec: BackboneSpec,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_model_bundle(model: &OneClassModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = model.network.layer().to_bytes();
    let spec = model.network.spec();
    let manifest = ModelManifest {
        class_id: model.class.id,
        class_name: model.class.name.clone(),
        strategy: model.strategy,
        backbone: spec.identifier.clone(),
        embedding_dim: spec.embedding_dim,
        seed: model.seed,
        training_seconds: model.training_seconds,
        iterations_run: model.iterations_run,
        early_stopped: model.early_stopped,
        embedding_layer: EMBEDDING_LAYER.to_string(),
        weights_sha256: sha256_hex(&weights),
        plan: model.plan,
        backbone_spec: BackboneSpec {
            weights_path: None,
            ..spec.clone()
        },
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Input(format!("cannot encode model manifest: {e}")))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, weights).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn load_model_bundle(dir: &Path) -> Result<OneClassModel> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ModelManifest =
        toml::from_str(&text).map_err(|e| Error::Corruption(format!("{}: {e}", mpath.display())))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if sha256_hex(&bytes) != manifest.weights_sha256 {
        return Err(Error::Corruption(format!("{} does not match its checksum", wpath.display())));
    }
    if manifest.backbone != manifest.backbone_spec.identifier || manifest.embedding_dim != manifest.backbone_spec.embedding_dim {
        return Err(Error::Integrity(format!("{} disagrees with its backbone spec", mpath.display())));
    }
    let layer = DenseLayer::from_bytes(&bytes)?;
    let network = Backbone::with_layer(manifest.backbone_spec.clone(), Arc::new(layer))?;
    Ok(OneClassModel {
        class: ClassLabel::new(manifest.class_id, manifest.class_name),
        network,
        strategy: manifest.strategy,
        seed: manifest.seed,
        training_seconds: manifest.training_seconds,
        iterations_run: manifest.iterations_run,
        early_stopped: manifest.early_stopped,
        plan: manifest.plan,
    })
}

/// Loads every bundle under `dir` (one subdirectory each), ordered by class
/// id. Ids must run 0..C without gaps.
pub fn load_model_directory(dir: &Path) -> Result<Vec<OneClassModel>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut models = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            models.push(load_model_bundle(&path).map_err(|e| e.context(path.display().to_string()))?);
        }
    }
    if models.is_empty() {
        return Err(Error::Input(format!("no model bundles under {}", dir.display())));
    }
    models.sort_by_key(|m| m.class.id);
    for (i, m) in models.iter().enumerate() {
        if m.class.id != i {
            return Err(Error::Integrity(format!(
                "model bundles under {} do not cover class ids 0..{} (found id {} at position {i})",
                dir.display(),
                models.len(),
                m.class.id
            )));
        }
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Image;
    use crate::embedding::{synthetic_backbone, train_one_class, TrainingConfig};
    use crate::ErrorKind;

    fn model() -> OneClassModel {
        let b = synthetic_backbone(2, 8).unwrap();
        let imgs: Vec<Image> = (0..4).map(|i| Image::from_fn(32, 32, |x, y, c| ((x + y * i + c) % 7) as f32 / 7.0)).collect();
        let cfg = TrainingConfig::with_minibatch(2, 1);
        train_one_class(&b, &imgs, &ClassLabel::new(3, "cat"), OneClassStrategy::Compactness, &cfg, None).unwrap()
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_model_bundle(&m, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        for key in ["class_id", "strategy", "backbone", "embedding_dim", "seed", "training_seconds", "iterations_run"] {
            assert!(text.contains(key), "manifest lacks {key}");
        }
        let back = load_model_bundle(dir.path()).unwrap();
        assert_eq!(back.class(), m.class());
        assert_eq!(back.strategy(), m.strategy());
        assert_eq!(back.iterations_run(), m.iterations_run());
        assert_eq!(back.network().layer(), m.network().layer());
    }

    #[test]
    fn tampered_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_model_bundle(&model(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&w).unwrap();
        bytes[20] ^= 1;
        fs::write(&w, bytes).unwrap();
        assert_eq!(load_model_bundle(dir.path()).unwrap_err().kind(), ErrorKind::Corruption);
    }

    #[test]
    fn directory_is_ordered_by_class_id() {
        let dir = tempfile::tempdir().unwrap();
        let b = synthetic_backbone(2, 8).unwrap();
        let imgs: Vec<Image> = (0..2).map(|i| Image::from_fn(32, 32, |x, _, c| ((x + c + i) % 5) as f32 / 5.0)).collect();
        let cfg = TrainingConfig::with_minibatch(1, 1);
        for (id, name) in [(1, "a_second"), (0, "z_first")] {
            let m = train_one_class(&b, &imgs, &ClassLabel::new(id, name), OneClassStrategy::PositiveOnlyLiteral, &cfg, None).unwrap();
            save_model_bundle(&m, &dir.path().join(name)).unwrap();
        }
        let models = load_model_directory(dir.path()).unwrap();
        let names: Vec<&str> = models.iter().map(|m| m.class().name.as_str()).collect();
        assert_eq!(names, ["z_first", "a_second"]);

        fs::remove_dir_all(dir.path().join("z_first")).unwrap();
        assert_eq!(load_model_directory(dir.path()).unwrap_err().kind(), ErrorKind::Integrity);
    }
}
