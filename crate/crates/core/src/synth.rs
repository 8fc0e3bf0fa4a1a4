//! Synthetic lesion-like data: one filled disc on a dark noisy background.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Radius range in pixels at the reference resolution; scaled linearly with size.
pub const RADIUS_RANGE: (f64, f64) = (20.0, 60.0);
pub const REFERENCE_SIZE: usize = 224;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            size: REFERENCE_SIZE,
            seed: 0,
        }
    }
}

pub struct SynthSample {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub radius: f64,
}

pub fn sample(size: usize, rng: &mut impl Rng) -> SynthSample {
    let scale = size as f64 / REFERENCE_SIZE as f64;
    let radius = rng.random_range(RADIUS_RANGE.0..=RADIUS_RANGE.1) * scale;
    let lo = radius.min(size as f64 / 2.0);
    let hi = (size as f64 - radius).max(lo);
    let cy = rng.random_range(lo..=hi);
    let cx = rng.random_range(lo..=hi);
    let lesion = [
        rng.random_range(150.0..200.0),
        rng.random_range(90.0..130.0),
        rng.random_range(60.0..90.0),
    ];
    let noise = Normal::new(0.0, 8.0).expect("positive std");
    let mut image = RgbImage::new(size as u32, size as u32);
    let mut mask = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let inside = dy * dy + dx * dx <= radius * radius;
            let base: [f64; 3] = if inside { lesion } else { [30.0, 25.0, 22.0] };
            let px = base.map(|b| (b + noise.sample(rng)).clamp(0.0, 255.0).round() as u8);
            image.put_pixel(x as u32, y as u32, Rgb(px));
            mask.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
        }
    }
    SynthSample { image, mask, radius }
}

/// Writes `images/synth_NNN.png` and `masks/synth_NNN_segmentation.png` under
/// `out`, returning the ids.
pub fn generate(out: &Path, cfg: SynthConfig) -> Result<Vec<String>> {
    let images = out.join("images");
    let masks = out.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let s = sample(cfg.size, &mut rng);
        let id = format!("synth_{i:03}");
        let ip = images.join(format!("{id}.png"));
        let mp = masks.join(format!("{id}_segmentation.png"));
        s.image.save(&ip).map_err(|e| Error::Decode {
            path: ip.clone(),
            message: e.to_string(),
        })?;
        s.mask.save(&mp).map_err(|e| Error::Decode {
            path: mp.clone(),
            message: e.to_string(),
        })?;
        ids.push(id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_fits_and_is_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let s = sample(224, &mut rng);
            assert!((20.0..=60.0).contains(&s.radius));
            let on = s.mask.pixels().filter(|p| p.0[0] == 255).count() as f64;
            assert!(s.mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
            let area = std::f64::consts::PI * s.radius * s.radius;
            assert!((on - area).abs() / area < 0.1, "{on} vs {area}");
        }
    }
}
