//! Resize, flip, pad, crop and normalise.

use image::{imageops::FilterType, RgbImage};
use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub target_height: usize,
    pub target_width: usize,
    pub flip_prob: f64,
    pub pad_pixels: usize,
    pub random_crop: bool,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            target_height: 288,
            target_width: 144,
            flip_prob: 0.5,
            pad_pixels: 10,
            random_crop: true,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.target_height == 0 || self.target_width == 0 {
            p.push("augmentation target size must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            p.push(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        if self.std.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            p.push("normalisation std entries must be positive".to_string());
        }
        p
    }
}

/// Independent generator for one sample draw. `stage` and `epoch` separate
/// draws of the same sample across the run.
pub fn sample_rng(seed: u64, stage: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut h = seed;
    for v in [stage, epoch, index] {
        h = splitmix(h ^ splitmix(v.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn to_chw(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = f64::from(px[c]) / 255.0;
        }
    }
    out
}

fn resized(img: &RgbImage, cfg: &AugmentationConfig) -> Array3<f64> {
    let (w, h) = (cfg.target_width as u32, cfg.target_height as u32);
    if img.dimensions() == (w, h) {
        to_chw(img)
    } else {
        to_chw(&image::imageops::resize(img, w, h, FilterType::Triangle))
    }
}

/// Mirrors a `[C, H, W]` array left to right.
pub fn hflip(x: &Array3<f64>) -> Array3<f64> {
    x.slice(s![.., .., ..;-1]).to_owned()
}

fn normalize(mut x: Array3<f64>, cfg: &AugmentationConfig) -> Array3<f64> {
    for c in 0..3 {
        x.slice_mut(s![c, .., ..])
            .mapv_inplace(|v| (v - cfg.mean[c]) / cfg.std[c]);
    }
    x
}

/// Training-time transform.
pub fn augment<R: Rng + ?Sized>(img: &RgbImage, cfg: &AugmentationConfig, rng: &mut R) -> Result<Array3<f64>> {
    ensure!(img.width() > 0 && img.height() > 0, "empty image");
    let mut x = resized(img, cfg);
    if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
        x = hflip(&x);
    }
    let pad = cfg.pad_pixels;
    if pad > 0 {
        let (h, w) = (cfg.target_height, cfg.target_width);
        let mut padded = Array3::zeros((3, h + 2 * pad, w + 2 * pad));
        padded.slice_mut(s![.., pad..pad + h, pad..pad + w]).assign(&x);
        let (dy, dx) = if cfg.random_crop {
            (rng.random_range(0..=2 * pad), rng.random_range(0..=2 * pad))
        } else {
            (pad, pad)
        };
        x = padded.slice(s![.., dy..dy + h, dx..dx + w]).to_owned();
    }
    Ok(normalize(x, cfg))
}

/// Evaluation transform: resize and normalise only.
pub fn eval_transform(img: &RgbImage, cfg: &AugmentationConfig) -> Result<Array3<f64>> {
    ensure!(img.width() > 0 && img.height() > 0, "empty image");
    Ok(normalize(resized(img, cfg), cfg))
}
