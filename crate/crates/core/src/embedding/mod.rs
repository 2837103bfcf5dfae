//! Backbones, one-class fine-tuning and embedding extraction.
//!
//! A backbone is a frozen pooling stage (bilinear resize to the input shape,
//! then area pooling over a fixed grid) followed by one trainable dense layer
//! whose post-activation output is the embedding. Two backbones are built in:
//!
//! - `fc7-surrogate`: 227×227×3 input, 16×16 pooling grid, 4096-d ReLU output.
//!   Weights are seeded He-normal random features unless a weights blob is
//!   supplied through `weights_path`.
//! - `synthetic`: configurable input shape and dimension, 4×4 pooling grid,
//!   linear output. A fixed random projection used as a deterministic test
//!   double.

mod bundle;
mod network;
mod train;

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::bundle::{load_model_bundle, load_model_directory, save_model_bundle, ModelManifest, MANIFEST_FILE, WEIGHTS_FILE};
pub(crate) use self::bundle::sha256_hex;
pub use self::network::{pooled_features, Activation, DenseLayer};
pub use self::train::{
    planned_iterations, sample_negatives, train_multiclass, train_one_class, MulticlassNetwork,
    OneClassModel, OneClassStrategy, TrainingConfig, TrainingPlan,
};
use crate::datasets::{seeded_rng, Image, InputShape};
use crate::error::{Error, Result};
use crate::metrics::FeatureVector;

pub const FC7_SURROGATE: &str = "fc7-surrogate";
pub const SYNTHETIC: &str = "synthetic";
/// Backbone used when a configuration names none.
pub const DEFAULT_BACKBONE: &str = FC7_SURROGATE;

const FC7_DIM: usize = 4096;
const FC7_INPUT: InputShape = InputShape::rgb(227, 227);
const FC7_GRID: usize = 16;
const SYNTHETIC_GRID: usize = 4;
const SYNTHETIC_INPUT: InputShape = InputShape::rgb(32, 32);

/// Where the embedding is read from; recorded in model provenance.
pub const EMBEDDING_LAYER: &str = "penultimate dense layer, post-activation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}

impl ClassLabel {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        ClassLabel {
            id,
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub identifier: String,
    pub embedding_dim: usize,
    pub input_shape: InputShape,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
}

impl BackboneSpec {
    pub fn fc7_surrogate() -> Self {
        BackboneSpec {
            identifier: FC7_SURROGATE.to_string(),
            embedding_dim: FC7_DIM,
            input_shape: FC7_INPUT,
            seed: 0,
            weights_path: None,
        }
    }

    pub fn synthetic(seed: u64, dim: usize) -> Self {
        BackboneSpec {
            identifier: SYNTHETIC.to_string(),
            embedding_dim: dim,
            input_shape: SYNTHETIC_INPUT,
            seed,
            weights_path: None,
        }
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::fc7_surrogate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Architecture {
    grid: usize,
    activation: Activation,
}

impl Architecture {
    fn feature_dim(&self) -> usize {
        self.grid * self.grid * 3
    }
}

fn architecture_for(spec: &BackboneSpec) -> Result<Architecture> {
    spec.input_shape.validate()?;
    let arch = match spec.identifier.as_str() {
        FC7_SURROGATE => {
            if spec.embedding_dim != FC7_DIM {
                return Err(Error::Integrity(format!(
                    "{FC7_SURROGATE} emits {FC7_DIM}-d embeddings, spec asks for {}",
                    spec.embedding_dim
                )));
            }
            if spec.input_shape != FC7_INPUT {
                return Err(Error::Integrity(format!(
                    "{FC7_SURROGATE} takes 227x227x3 input, spec asks for {}x{}x{}",
                    spec.input_shape.height, spec.input_shape.width, spec.input_shape.channels
                )));
            }
            Architecture {
                grid: FC7_GRID,
                activation: Activation::Relu,
            }
        }
        SYNTHETIC => {
            if spec.embedding_dim < 2 {
                return Err(Error::Config("synthetic backbone needs embedding_dim >= 2".into()));
            }
            Architecture {
                grid: SYNTHETIC_GRID,
                activation: Activation::Identity,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown backbone '{other}' (available: {FC7_SURROGATE}, {SYNTHETIC})"
            )))
        }
    };
    if spec.input_shape.height < arch.grid || spec.input_shape.width < arch.grid {
        return Err(Error::Config(format!(
            "input shape must be at least {0}x{0} for this backbone",
            arch.grid
        )));
    }
    Ok(arch)
}

/// A frozen pooling stage plus the dense embedding layer.
///
/// Cloning is cheap; weights are shared until a training run replaces them.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    arch: Architecture,
    layer: Arc<DenseLayer>,
}

/// Resolves a backbone spec to weights.
pub fn load_backbone(spec: &BackboneSpec) -> Result<Backbone> {
    let arch = architecture_for(spec)?;
    let layer = match &spec.weights_path {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            DenseLayer::from_bytes(&bytes)?
        }
        None => initial_layer(spec, arch),
    };
    Backbone::with_layer(spec.clone(), Arc::new(layer))
}

/// Deterministic random-projection backbone with 32×32×3 input.
pub fn synthetic_backbone(seed: u64, dim: usize) -> Result<Backbone> {
    load_backbone(&BackboneSpec::synthetic(seed, dim))
}

/// Weights are drawn row-major from `ChaCha8Rng::seed_from_u64(seed)` as
/// `StandardNormal` f32 samples times `scale`; biases follow the weights.
fn initial_layer(spec: &BackboneSpec, arch: Architecture) -> DenseLayer {
    let fan_in = arch.feature_dim();
    let (scale, bias) = match arch.activation {
        Activation::Identity => ((1.0 / fan_in as f32).sqrt(), 0.0),
        Activation::Relu => ((2.0 / fan_in as f32).sqrt(), 0.01),
    };
    let mut rng = seeded_rng(spec.seed, 0);
    let weights = Array2::from_shape_simple_fn((spec.embedding_dim, fan_in), || {
        rng.sample::<f32, _>(StandardNormal) * scale
    });
    DenseLayer {
        weights,
        bias: Array1::from_elem(spec.embedding_dim, bias),
    }
}

impl Backbone {
    fn with_layer(spec: BackboneSpec, layer: Arc<DenseLayer>) -> Result<Self> {
        let arch = architecture_for(&spec)?;
        if layer.out_dim() != spec.embedding_dim || layer.in_dim() != arch.feature_dim() {
            return Err(Error::Integrity(format!(
                "weights are {}x{}, backbone '{}' needs {}x{}",
                layer.out_dim(),
                layer.in_dim(),
                spec.identifier,
                spec.embedding_dim,
                arch.feature_dim()
            )));
        }
        Ok(Backbone { spec, arch, layer })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    pub fn input_shape(&self) -> InputShape {
        self.spec.input_shape
    }

    pub fn activation(&self) -> Activation {
        self.arch.activation
    }

    pub fn pooling_grid(&self) -> usize {
        self.arch.grid
    }

    pub fn layer(&self) -> &DenseLayer {
        &self.layer
    }

    /// True when both share the same weight allocation.
    pub fn shares_weights_with(&self, other: &Backbone) -> bool {
        Arc::ptr_eq(&self.layer, &other.layer)
    }

    pub(crate) fn replace_layer(&self, layer: DenseLayer) -> Backbone {
        Backbone {
            spec: self.spec.clone(),
            arch: self.arch,
            layer: Arc::new(layer),
        }
    }

    /// Output of the frozen stage for one image.
    pub fn features(&self, image: &Image) -> Array1<f32> {
        let shape = self.spec.input_shape;
        if image.has_shape(shape) {
            pooled_features(image, self.arch.grid)
        } else {
            pooled_features(&image.resized(shape.width, shape.height), self.arch.grid)
        }
    }

    pub(crate) fn feature_matrix(&self, images: &[Image]) -> Array2<f32> {
        let mut x = Array2::<f32>::zeros((images.len(), self.arch.feature_dim()));
        for (mut row, image) in x.axis_iter_mut(Axis(0)).zip(images) {
            row.assign(&self.features(image));
        }
        x
    }

    /// Embeddings for a batch of pooled feature rows.
    #[cfg(test)]
    pub(crate) fn embed_features(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut z = self.layer.forward(&x.view());
        self.arch.activation.apply(&mut z);
        z
    }

    pub fn embed(&self, image: &Image) -> Result<FeatureVector> {
        let mut z = self.layer.forward_one(&self.features(image));
        self.arch.activation.apply_1d(&mut z);
        let v = FeatureVector::new(z.to_vec())?;
        debug_assert_eq!(v.dim(), self.spec.embedding_dim);
        Ok(v)
    }

    /// Same arithmetic as [`Backbone::embed`] per image, so a stored
    /// reference row and a query of the same image are bit-identical.
    pub fn embed_batch(&self, images: &[Image]) -> Result<Vec<FeatureVector>> {
        images
            .par_iter()
            .enumerate()
            .map(|(i, image)| self.embed(image).map_err(|e| e.context(format!("image {i}"))))
            .collect()
    }
}

/// Embedding of `image` under a trained one-class model.
pub fn embed(model: &OneClassModel, image: &Image) -> Result<FeatureVector> {
    model.network().embed(image)
}

/// Batched form of [`embed`]; bit-identical to the per-image path.
pub fn embed_batch(model: &OneClassModel, images: &[Image]) -> Result<Vec<FeatureVector>> {
    model.network().embed_batch(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    fn test_image(seed: u64, size: usize) -> Image {
        let mut rng = seeded_rng(seed, 1);
        Image::from_fn(size, size, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn surrogate_emits_4096() {
        let b = load_backbone(&BackboneSpec::fc7_surrogate()).unwrap();
        let v = b.embed(&test_image(1, 64)).unwrap();
        assert_eq!(v.dim(), 4096);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn surrogate_rejects_wrong_dim() {
        let spec = BackboneSpec {
            embedding_dim: 999,
            ..BackboneSpec::fc7_surrogate()
        };
        assert_eq!(load_backbone(&spec).unwrap_err().kind(), ErrorKind::Integrity);
    }

    #[test]
    fn unknown_identifier_is_config_error() {
        let spec = BackboneSpec {
            identifier: "vgg".into(),
            ..BackboneSpec::synthetic(0, 8)
        };
        assert_eq!(load_backbone(&spec).unwrap_err().kind(), ErrorKind::Config);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_backbone(7, 16).unwrap();
        let b = synthetic_backbone(7, 16).unwrap();
        let img = test_image(3, 32);
        assert_eq!(a.embed(&img).unwrap(), b.embed(&img).unwrap());
        assert_eq!(a.embed(&img).unwrap().dim(), 16);
    }

    #[test]
    fn synthetic_distinguishes_pixels_and_seeds() {
        let s1 = synthetic_backbone(1, 16).unwrap();
        let s2 = synthetic_backbone(2, 16).unwrap();
        let mut rng = seeded_rng(99, 0);
        for i in 0..100 {
            let img = test_image(i, 32);
            let mut other = img.clone();
            let (x, y, c) = (rng.random_range(0..32), rng.random_range(0..32), rng.random_range(0..3));
            let old = other.get(x, y, c);
            other.set(x, y, c, if old > 0.5 { old - 0.25 } else { old + 0.25 });
            assert_ne!(s1.embed(&img).unwrap(), s1.embed(&other).unwrap());
            assert_ne!(s1.embed(&img).unwrap(), s2.embed(&img).unwrap());
        }
    }

    #[test]
    fn batch_matches_loop() {
        let b = synthetic_backbone(5, 24).unwrap();
        assert!(b.embed_batch(&[]).unwrap().is_empty());
        let images: Vec<Image> = (0..10).map(|i| test_image(i, 40)).collect();
        let batched = b.embed_batch(&images).unwrap();
        for (img, v) in images.iter().zip(&batched) {
            assert_eq!(&b.embed(img).unwrap(), v);
        }
        assert_eq!(b.embed_batch(&images[..1]).unwrap().len(), 1);
    }

    #[test]
    fn weights_file_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let b = synthetic_backbone(3, 8).unwrap();
        let path = dir.path().join("w.bin");
        std::fs::write(&path, b.layer().to_bytes()).unwrap();
        let spec = BackboneSpec {
            weights_path: Some(path.clone()),
            ..BackboneSpec::synthetic(99, 8)
        };
        let loaded = load_backbone(&spec).unwrap();
        assert_eq!(loaded.layer(), b.layer());
        let spec = BackboneSpec {
            weights_path: Some(path),
            ..BackboneSpec::synthetic(99, 9)
        };
        assert_eq!(load_backbone(&spec).unwrap_err().kind(), ErrorKind::Integrity);
    }
}
