//! Samples, manifests, augmentation, PK batch sampling and the synthetic
//! dual-modality generator.

mod augment;
mod manifest;
mod sampler;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{eval_transform, hflip, sample_rng, AugmentationConfig, augment};
pub use manifest::{load_manifest, load_manifest_with, write_manifest, ManifestOptions};
pub use sampler::{pk_cross_modal_sampler, PkBatch, PkSampler};
pub use synthetic::{render_prototype, synthesize_dataset, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visible => "visible",
            Modality::Infrared => "infrared",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "visible" | "rgb" => Ok(Modality::Visible),
            "infrared" | "ir" => Ok(Modality::Infrared),
            other => Err(format!("unknown modality {other:?} (expected visible or infrared)")),
        }
    }
}

impl From<Modality> for crate::model::Branch {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Visible => crate::model::Branch::Visible,
            Modality::Infrared => crate::model::Branch::Infrared,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub source: ImageSource,
    /// Dense identity index.
    pub identity: usize,
    pub modality: Modality,
    pub camera: u32,
}

impl Sample {
    /// Decodes the image, converting any pixel format to 8-bit RGB.
    pub fn load_rgb(&self) -> Result<Arc<RgbImage>> {
        match &self.source {
            ImageSource::Memory(img) => Ok(Arc::clone(img)),
            ImageSource::Path(p) => {
                let img = image::open(p).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(p, io),
                    other => Error::Image {
                        path: p.clone(),
                        message: other.to_string(),
                    },
                })?;
                Ok(Arc::new(img.to_rgb8()))
            }
        }
    }
}

/// Samples plus the mapping from dense identity index to the original label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub original_ids: Vec<i64>,
}

impl Dataset {
    pub fn num_identities(&self) -> usize {
        self.original_ids.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cameras(&self, modality: Modality) -> BTreeSet<u32> {
        self.samples
            .iter()
            .filter(|s| s.modality == modality)
            .map(|s| s.camera)
            .collect()
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples.iter().filter(|s| s.modality == modality).count()
    }

    /// Keeps the samples matching `keep`, leaving identity indices untouched.
    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            original_ids: self.original_ids.clone(),
        }
    }

    /// Writes every in-memory image as PNG under `dir/images` and a manifest
    /// at `dir/manifest.csv`. Samples backed by files keep their paths.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut rows = Vec::with_capacity(self.samples.len());
        let mut counters = std::collections::HashMap::new();
        for s in &self.samples {
            let original = self.original_ids[s.identity];
            let rel = match &s.source {
                ImageSource::Path(p) => p.clone(),
                ImageSource::Memory(img) => {
                    let n = counters.entry((original, s.modality)).or_insert(0usize);
                    let name = format!("{}_{original:04}_c{}_{:03}.png", s.modality, s.camera, *n);
                    *n += 1;
                    let path = images.join(&name);
                    img.save(&path).map_err(|e| Error::Image {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    PathBuf::from("images").join(name)
                }
            };
            rows.push((rel, original, s.modality, s.camera));
        }
        let manifest = dir.join("manifest.csv");
        write_manifest(&manifest, &rows)?;
        Ok(manifest)
    }
}
