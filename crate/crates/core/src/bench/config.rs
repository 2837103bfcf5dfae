use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::datasets::synthetic::SyntheticSpec;
use crate::datasets::{SplitMode, SplitSpec};
use crate::embedding::{BackboneSpec, OneClassStrategy, TrainingConfig};
use crate::error::{Error, Result};

/// Embedding width used by the desk-scale protocol presets.
pub const PRESET_SYNTHETIC_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// One C-way network, arg-max of the softmax head.
    Conventional,
    /// C one-class networks with the score table decision rule.
    Proposed,
    /// One C-way network, nearest neighbor over its embeddings.
    MulticlassKnn,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Conventional, Approach::Proposed, Approach::MulticlassKnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Conventional => "conventional",
            Approach::Proposed => "proposed",
            Approach::MulticlassKnn => "multiclass_knn",
        }
    }

    fn uses_multiclass_network(self) -> bool {
        self != Approach::Proposed
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown approach '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory of class subdirectories. With `synthetic` set, the generated
    /// images are written here first.
    pub root: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub class_count: Option<usize>,
    pub per_class_count: Option<usize>,
}

/// Data selection that differs for one approach.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproachOverride {
    pub per_class_count: Option<usize>,
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub proposed: Option<ApproachOverride>,
    pub conventional: Option<ApproachOverride>,
    pub multiclass_knn: Option<ApproachOverride>,
}

impl Overrides {
    pub fn get(&self, approach: Approach) -> Option<&ApproachOverride> {
        match approach {
            Approach::Proposed => self.proposed.as_ref(),
            Approach::Conventional => self.conventional.as_ref(),
            Approach::MulticlassKnn => self.multiclass_knn.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Applied to every one-class network.
    pub proposed: TrainingConfig,
    /// Applied to the single network shared by both multiclass baselines.
    pub multiclass: TrainingConfig,
}

/// Everything needed to run one comparison. The top-level `seed` drives all
/// randomness; nested seed fields are overwritten with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub approaches: Vec<Approach>,
    pub parallel_training: bool,
    pub strategy: OneClassStrategy,
    pub output: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub classifier: ClassifierConfig,
    pub training: TrainingSection,
    pub backbone: BackboneSpec,
    pub overrides: Overrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            approaches: Approach::ALL.to_vec(),
            parallel_training: true,
            strategy: OneClassStrategy::default(),
            output: None,
            dataset: DatasetConfig::default(),
            split: SplitSpec::fraction(0.7, 0),
            classifier: ClassifierConfig::default(),
            training: TrainingSection::default(),
            backbone: BackboneSpec::default(),
            overrides: Overrides::default(),
        }
    }
}

/// Table-shaped protocols on generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// 4 classes; one-class nets see 80/40 per class with minibatch 40, the
    /// multiclass nets 140/60 per class with minibatch 16.
    FourClassVideo,
    /// 50 classes of 40 images, 15/25 split, minibatch 15.
    FiftyCategory,
    /// 17 classes of 80 images, 70/30 split, minibatch 56.
    SeventeenFlower,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::FourClassVideo, Protocol::FiftyCategory, Protocol::SeventeenFlower];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::FourClassVideo => "four_class_video",
            Protocol::FiftyCategory => "fifty_category",
            Protocol::SeventeenFlower => "seventeen_flower",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown protocol '{s}'")))
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: generated images written to `root`, synthetic backbone.
    pub fn protocol(protocol: Protocol, root: impl Into<PathBuf>, seed: u64) -> Self {
        let (classes, per_class, prefix, split, mb_one, mb_multi) = match protocol {
            Protocol::FourClassVideo => (4, 200, "face", SplitSpec::count_per_class(140, seed), 40, 16),
            Protocol::FiftyCategory => (50, 40, "category", SplitSpec::count_per_class(15, seed), 15, 15),
            Protocol::SeventeenFlower => (17, 80, "flower", SplitSpec::fraction(0.7, seed), 56, 56),
        };
        let mut synthetic = SyntheticSpec::new(classes, per_class, seed);
        synthetic.class_prefix = prefix.to_string();
        let overrides = match protocol {
            Protocol::FourClassVideo => Overrides {
                proposed: Some(ApproachOverride {
                    per_class_count: Some(120),
                    split: Some(SplitSpec::count_per_class(80, seed)),
                }),
                ..Overrides::default()
            },
            _ => Overrides::default(),
        };
        let mut cfg = ExperimentConfig {
            dataset: DatasetConfig {
                root: Some(root.into()),
                synthetic: Some(synthetic),
                class_count: None,
                per_class_count: Some(per_class),
            },
            split,
            training: TrainingSection {
                proposed: TrainingConfig::with_minibatch(mb_one, 1),
                multiclass: TrainingConfig::with_minibatch(mb_multi, 1),
            },
            backbone: BackboneSpec::synthetic(seed, PRESET_SYNTHETIC_DIM),
            overrides,
            ..ExperimentConfig::default()
        };
        cfg.apply_seed(seed);
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
    }

    /// Propagates `seed` into every nested seed field.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = seed;
        self.training.proposed.seed = seed;
        self.training.multiclass.seed = seed;
        self.backbone.seed = seed;
        if let Some(s) = self.dataset.synthetic.as_mut() {
            s.seed = seed;
        }
        for o in [&mut self.overrides.proposed, &mut self.overrides.conventional, &mut self.overrides.multiclass_knn]
            .into_iter()
            .flatten()
        {
            if let Some(split) = o.split.as_mut() {
                split.seed = seed;
            }
        }
    }

    /// Approaches in report order, duplicates removed.
    pub fn selected_approaches(&self) -> Vec<Approach> {
        let mut a = self.approaches.clone();
        a.sort();
        a.dedup();
        a
    }

    pub fn runs(&self, approach: Approach) -> bool {
        self.approaches.contains(&approach)
    }

    pub fn runs_multiclass(&self) -> bool {
        self.approaches.iter().any(|a| a.uses_multiclass_network())
    }

    pub fn per_class_count_for(&self, approach: Approach) -> Option<usize> {
        self.overrides
            .get(approach)
            .and_then(|o| o.per_class_count)
            .or(self.dataset.per_class_count)
    }

    pub fn split_for(&self, approach: Approach) -> &SplitSpec {
        self.overrides.get(approach).and_then(|o| o.split.as_ref()).unwrap_or(&self.split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.approaches.is_empty() {
            return Err(Error::Config("at least one approach must be selected".into()));
        }
        let d = &self.dataset;
        if d.root.is_none() {
            return Err(Error::Config("dataset.root is required".into()));
        }
        if let Some(s) = &d.synthetic {
            s.validate()?;
        }
        if d.class_count == Some(0) {
            return Err(Error::Config("dataset.class_count must be positive".into()));
        }
        for approach in self.selected_approaches() {
            if self.per_class_count_for(approach) == Some(0) {
                return Err(Error::Config(format!("per_class_count for {approach} must be positive")));
            }
            validate_split(self.split_for(approach)).map_err(|e| e.context(format!("split for {approach}")))?;
        }
        if self.classifier.k_neighbors == 0 {
            return Err(Error::Config("classifier.k_neighbors must be at least 1".into()));
        }
        self.training.proposed.validate().map_err(|e| e.context("training.proposed"))?;
        self.training.multiclass.validate().map_err(|e| e.context("training.multiclass"))?;
        self.backbone.input_shape.validate().map_err(|e| e.context("backbone"))?;
        Ok(())
    }
}

fn validate_split(spec: &SplitSpec) -> Result<()> {
    match spec.mode {
        SplitMode::CountPerClass if spec.train_count.is_none() => {
            Err(Error::Config("count_per_class split needs train_count".into()))
        }
        SplitMode::CountPerClass if spec.train_count == Some(0) => {
            Err(Error::Config("train_count must be at least 1".into()))
        }
        SplitMode::Fraction => match spec.train_fraction {
            Some(f) if f > 0.0 && f < 1.0 => Ok(()),
            _ => Err(Error::Config("fraction split needs train_fraction in (0, 1)".into())),
        },
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn toml_round_trip_and_seed_propagation() {
        let cfg = ExperimentConfig::protocol(Protocol::FourClassVideo, "/tmp/x", 9);
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.split_for(Approach::Proposed).seed, 9);
        assert_eq!(back.training.multiclass.seed, 9);
    }

    #[test]
    fn minimal_toml() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 3\napproaches = [\"proposed\"]\n[dataset]\nroot = \"data\"\n[split]\nmode = \"count_per_class\"\ntrain_count = 5\n",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.split.seed, 3);
        assert_eq!(cfg.selected_approaches(), vec![Approach::Proposed]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ExperimentConfig::protocol(Protocol::FiftyCategory, "/tmp/x", 0);
        cfg.approaches.clear();
        assert_eq!(cfg.validate().unwrap_err().kind(), ErrorKind::Config);
        let e = ExperimentConfig::from_toml_str("approaches = [\"magic\"]").unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let e = ExperimentConfig::from_toml_str("bogus_key = 1").unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }
}
