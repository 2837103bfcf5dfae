//! Directory-of-classes datasets, seeded selection and train/test splits.
//!
//! Layout on disk is `root/<class_name>/<image files>`. All randomness goes
//! through `ChaCha8Rng` seeded from a `u64`, so the same seed yields the same
//! selection and split on every platform.

mod image;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::image::{load_image, Image, InputShape};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "ppm", "pgm", "pnm"];

/// Stream id reserved for class selection; per-class streams use the class index.
const CLASS_SELECTION_STREAM: u64 = u64::MAX;

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassImages {
    pub name: String,
    /// Paths relative to the dataset root, lexicographically ordered.
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    root: PathBuf,
    classes: Vec<ClassImages>,
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn classes(&self) -> &[ClassImages] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn image_count(&self, class: usize) -> usize {
        self.classes[class].files.len()
    }

    pub fn total_images(&self) -> usize {
        self.classes.iter().map(|c| c.files.len()).sum()
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.retain(|e| !e.file_name().to_string_lossy().starts_with('.'));
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Scans `root/<class>/<image>` into a manifest with lexicographic ordering.
pub fn scan_directory(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Input(format!("dataset root {} is not a directory", root.display())));
    }
    let mut classes = Vec::new();
    for entry in sorted_entries(root)? {
        let class_dir = entry.path();
        if !class_dir.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut files = Vec::new();
        for file in sorted_entries(&class_dir)? {
            let path = file.path();
            if !path.is_file() || !is_image_file(&path) {
                continue;
            }
            fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            files.push(Path::new(&name).join(file.file_name()));
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!("class '{name}' has no images")));
        }
        classes.push(ClassImages { name, files });
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
    })
}

/// Seeded, balanced subsample: `class_count` classes with `per_class_count`
/// images each (`None` keeps all). Output keeps lexicographic order.
pub fn select_classes(
    manifest: &DatasetManifest,
    class_count: Option<usize>,
    per_class_count: Option<usize>,
    seed: u64,
) -> Result<DatasetManifest> {
    let available = manifest.class_count();
    let class_count = class_count.unwrap_or(available);
    if class_count == 0 || class_count > available {
        return Err(Error::Dataset(format!(
            "requested {class_count} classes but the dataset has {available}"
        )));
    }
    let mut chosen: Vec<usize> = if class_count == available {
        (0..available).collect()
    } else {
        let mut rng = seeded_rng(seed, CLASS_SELECTION_STREAM);
        index::sample(&mut rng, available, class_count).into_vec()
    };
    chosen.sort_unstable();

    let per_class = match per_class_count {
        Some(n) => n,
        None => chosen.iter().map(|&c| manifest.image_count(c)).min().unwrap_or(0),
    };
    if per_class == 0 {
        return Err(Error::Dataset("per-class image count must be at least 1".into()));
    }

    let mut classes = Vec::with_capacity(chosen.len());
    for &c in &chosen {
        let source = &manifest.classes[c];
        let n = source.files.len();
        if n < per_class {
            return Err(Error::Dataset(format!(
                "class '{}' has {n} images, {per_class} requested",
                source.name
            )));
        }
        let files = if n == per_class {
            source.files.clone()
        } else {
            let mut rng = seeded_rng(seed, c as u64);
            let mut picked = index::sample(&mut rng, n, per_class).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| source.files[i].clone()).collect()
        };
        classes.push(ClassImages {
            name: source.name.clone(),
            files,
        });
    }
    Ok(DatasetManifest {
        root: manifest.root.clone(),
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    CountPerClass,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn count_per_class(train_count: usize, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::CountPerClass,
            train_count: Some(train_count),
            train_fraction: None,
            seed,
        }
    }

    pub fn fraction(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Fraction,
            train_count: None,
            train_fraction: Some(train_fraction),
            seed,
        }
    }

    /// Training images for a class of `class_size`; must leave at least one
    /// test image and take at least one training image.
    pub fn train_count_for(&self, class_size: usize) -> Result<usize> {
        let n = match self.mode {
            SplitMode::CountPerClass => self
                .train_count
                .ok_or_else(|| Error::Config("count_per_class split needs train_count".into()))?,
            SplitMode::Fraction => {
                let f = self
                    .train_fraction
                    .ok_or_else(|| Error::Config("fraction split needs train_fraction".into()))?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Input(format!("train_fraction {f} must lie in (0, 1)")));
                }
                (f * class_size as f64).round() as usize
            }
        };
        if n == 0 || n >= class_size {
            return Err(Error::Input(format!(
                "train count {n} invalid for a class of {class_size} images"
            )));
        }
        Ok(n)
    }
}

/// Per-class train/test partition of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub train: Vec<Vec<PathBuf>>,
    pub test: Vec<Vec<PathBuf>>,
    /// Absent when the split was parsed from a listing.
    pub spec: Option<SplitSpec>,
}

/// Shuffles each class with its own seeded stream, then takes the prefix for
/// training and the suffix for testing.
pub fn make_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    let mut train = Vec::with_capacity(manifest.class_count());
    let mut test = Vec::with_capacity(manifest.class_count());
    for (c, class) in manifest.classes.iter().enumerate() {
        let n_train = spec
            .train_count_for(class.files.len())
            .map_err(|e| e.context(format!("class '{}'", class.name)))?;
        let mut files = class.files.clone();
        files.shuffle(&mut seeded_rng(spec.seed, c as u64));
        let test_part = files.split_off(n_train);
        train.push(files);
        test.push(test_part);
    }
    Ok(Split {
        root: manifest.root.clone(),
        class_names: manifest.class_names(),
        train,
        test,
        spec: Some(spec.clone()),
    })
}

impl Split {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn train_total(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn test_total(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    pub fn absolute(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    /// One line per image: `<train|test>\t<class>\t<relative path>`.
    pub fn to_listing(&self) -> String {
        let mut out = String::new();
        for (c, name) in self.class_names.iter().enumerate() {
            for (part, files) in [("train", &self.train[c]), ("test", &self.test[c])] {
                for f in files {
                    let _ = writeln!(out, "{part}\t{name}\t{}", listing_path(f));
                }
            }
        }
        out
    }

    pub fn from_listing(root: &Path, listing: &str) -> Result<Split> {
        let mut class_names: Vec<String> = Vec::new();
        let mut index_of: HashMap<String, usize> = HashMap::new();
        let mut train: Vec<Vec<PathBuf>> = Vec::new();
        let mut test: Vec<Vec<PathBuf>> = Vec::new();
        for (lineno, line) in listing.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [part, class, path] = fields[..] else {
                return Err(Error::Input(format!("split listing line {}: expected 3 tab-separated fields", lineno + 1)));
            };
            let c = *index_of.entry(class.to_string()).or_insert_with(|| {
                class_names.push(class.to_string());
                train.push(Vec::new());
                test.push(Vec::new());
                class_names.len() - 1
            });
            match part {
                "train" => train[c].push(PathBuf::from(path)),
                "test" => test[c].push(PathBuf::from(path)),
                other => {
                    return Err(Error::Input(format!(
                        "split listing line {}: unknown partition '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if class_names.is_empty() {
            return Err(Error::Input("split listing is empty".into()));
        }
        Ok(Split {
            root: root.to_path_buf(),
            class_names,
            train,
            test,
            spec: None,
        })
    }
}

/// Forward slashes regardless of platform so listings compare byte-for-byte.
fn listing_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
