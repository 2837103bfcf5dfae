//! Generator for a synthetic directory-of-classes dataset.
//!
//! Each class has an archetype: a 4×4 grid of cells, each cell pushed above or
//! below mid-gray by a class-specific sign, with class-specific per-channel
//! amplitudes. For the first 15 classes the cell signs are rows of a 16×16
//! Sylvester–Hadamard matrix (skipping the constant row), so archetypes are
//! exactly orthogonal after centering; later classes draw random signs.
//! Individual images add uniform pixel noise and an optional blend toward a
//! random other class.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{scan_directory, seeded_rng, DatasetManifest, Image};
use crate::error::{Error, Result};

pub const ARCHETYPE_GRID: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub images_per_class: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Half-width of uniform per-pixel noise.
    #[serde(default = "default_noise")]
    pub noise: f32,
    /// Upper bound of the blend weight toward another class's archetype.
    #[serde(default)]
    pub confusion: f32,
    #[serde(default = "default_prefix")]
    pub class_prefix: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> usize {
    32
}

fn default_noise() -> f32 {
    0.02
}

fn default_prefix() -> String {
    "class".to_string()
}

impl SyntheticSpec {
    pub fn new(classes: usize, images_per_class: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            images_per_class,
            image_size: default_image_size(),
            noise: default_noise(),
            confusion: 0.0,
            class_prefix: default_prefix(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.images_per_class == 0 {
            return Err(Error::Config("synthetic dataset needs at least one class and one image".into()));
        }
        if self.image_size < ARCHETYPE_GRID {
            return Err(Error::Config(format!("synthetic image_size must be at least {ARCHETYPE_GRID}")));
        }
        if !(0.0..=0.5).contains(&self.noise) || !(0.0..1.0).contains(&self.confusion) {
            return Err(Error::Config("synthetic noise must be in [0, 0.5] and confusion in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn class_name(&self, class: usize) -> String {
        format!("{}_{:02}", self.class_prefix, class + 1)
    }
}

/// Per-class pattern: one sign per grid cell and one amplitude per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub signs: [f32; ARCHETYPE_GRID * ARCHETYPE_GRID],
    pub amplitudes: [f32; 3],
}

fn hadamard_sign(row: usize, col: usize) -> f32 {
    // Sylvester construction: H[r][c] = (-1)^popcount(r & c)
    if (row & col).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

pub fn archetypes(classes: usize, seed: u64) -> Vec<Archetype> {
    let cells = ARCHETYPE_GRID * ARCHETYPE_GRID;
    let mut rng = seeded_rng(seed, u64::MAX - 1);
    (0..classes)
        .map(|c| {
            let mut signs = [0.0; ARCHETYPE_GRID * ARCHETYPE_GRID];
            for (cell, s) in signs.iter_mut().enumerate() {
                *s = if c + 1 < cells {
                    hadamard_sign(c + 1, cell)
                } else if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                };
            }
            let amplitudes = [0.0; 3].map(|_: f32| rng.random_range(0.2..0.4));
            Archetype { signs, amplitudes }
        })
        .collect()
}

impl Archetype {
    /// Signed offset from mid-gray at pixel `(x, y)` of a `size`² image.
    pub fn offset(&self, x: usize, y: usize, channel: usize, size: usize) -> f32 {
        let cx = x * ARCHETYPE_GRID / size;
        let cy = y * ARCHETYPE_GRID / size;
        self.signs[cy * ARCHETYPE_GRID + cx] * self.amplitudes[channel]
    }
}

/// Renders image `index` of `class` without touching the filesystem.
pub fn render(spec: &SyntheticSpec, patterns: &[Archetype], class: usize, index: usize) -> Image {
    let mut rng = seeded_rng(spec.seed, (class as u64) << 32 | index as u64);
    let (blend, other) = if spec.confusion > 0.0 && patterns.len() > 1 {
        let w = rng.random_range(0.0..spec.confusion);
        let mut o = rng.random_range(0..patterns.len() - 1);
        if o >= class {
            o += 1;
        }
        (w, o)
    } else {
        (0.0, class)
    };
    let own = &patterns[class];
    let mix = &patterns[other];
    let size = spec.image_size;
    Image::from_fn(size, size, |x, y, c| {
        let base = (1.0 - blend) * own.offset(x, y, c, size) + blend * mix.offset(x, y, c, size);
        let noise = if spec.noise > 0.0 {
            rng.random_range(-spec.noise..=spec.noise)
        } else {
            0.0
        };
        0.5 + base + noise
    })
}

/// Writes `root/<prefix>_NN/img_NNNN.png` for every class and scans the result.
pub fn generate_synthetic_dataset(root: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let patterns = archetypes(spec.classes, spec.seed);
    for class in 0..spec.classes {
        let dir = root.join(spec.class_name(class));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..spec.images_per_class {
            render(spec, &patterns, class, i).save_png(&dir.join(format!("img_{i:04}.png")))?;
        }
    }
    scan_directory(root)
}
