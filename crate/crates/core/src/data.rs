//! Image/mask discovery, loading, load-time augmentation and seeded batching.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageError, ImageReader};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::resize::{resize_bilinear, resize_nearest};
use crate::tensor::{Shape, Tensor};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
/// Number of sorted files assigned to training when no split lists are given.
pub const DEFAULT_TRAIN_COUNT: usize = 2074;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataConfig {
    pub root: PathBuf,
    pub image_dir: String,
    pub mask_dir: String,
    pub mask_suffix: String,
    /// Square network resolution.
    pub size: usize,
    pub split_train: Option<PathBuf>,
    pub split_test: Option<PathBuf>,
    pub train_count: usize,
}

impl DataConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataConfig {
            root: root.into(),
            image_dir: "images".into(),
            mask_dir: "masks".into(),
            mask_suffix: "_segmentation".into(),
            size: 224,
            split_train: None,
            split_test: None,
            train_count: DEFAULT_TRAIN_COUNT,
        }
    }
}

/// Paths of one image and its mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPath {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, 1, H, W)` in `{0, 1}`.
    pub mask: Tensor<f32>,
}

fn has_image_ext(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && has_image_ext(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Every image in `root/image_dir` with its mask `stem + suffix + .ext` from
/// `root/mask_dir`, sorted by id.
pub fn discover(cfg: &DataConfig) -> Result<Vec<PairPath>> {
    let images = list_images(&cfg.root.join(&cfg.image_dir))?;
    let masks = list_images(&cfg.root.join(&cfg.mask_dir))?;
    let mut pairs = Vec::with_capacity(images.len());
    for image in images {
        let id = stem(&image);
        let want = format!("{id}{}", cfg.mask_suffix);
        let mask = masks
            .iter()
            .find(|m| stem(m) == want)
            .ok_or_else(|| Error::MissingMask(id.clone()))?
            .clone();
        pairs.push(PairPath { id, image, mask });
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(pairs)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<PairPath>,
    pub test: Vec<PairPath>,
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Splits a sorted corpus. Explicit id lists win; a single list takes its
/// complement as the other side. Without lists the first `train_count` go to
/// training.
pub fn split(pairs: Vec<PairPath>, cfg: &DataConfig) -> Result<Split> {
    let train_ids = cfg.split_train.as_deref().map(read_ids).transpose()?;
    let test_ids = cfg.split_test.as_deref().map(read_ids).transpose()?;
    if train_ids.is_none() && test_ids.is_none() {
        let k = cfg.train_count.min(pairs.len());
        let mut train = pairs;
        let test = train.split_off(k);
        return Ok(Split { train, test });
    }
    let known: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    for id in train_ids.iter().chain(&test_ids).flatten() {
        if !known.contains(id.as_str()) {
            return Err(Error::InvalidConfig(format!("split lists unknown id {id:?}")));
        }
    }
    let train_set: Option<HashSet<String>> = train_ids.map(|v| v.into_iter().collect());
    let test_set: Option<HashSet<String>> = test_ids.map(|v| v.into_iter().collect());
    if let (Some(a), Some(b)) = (&train_set, &test_set) {
        if let Some(id) = a.intersection(b).next() {
            return Err(Error::InvalidConfig(format!("id {id:?} is in both splits")));
        }
    }
    let mut out = Split::default();
    for p in pairs {
        let in_train = match (&train_set, &test_set) {
            (Some(t), _) if t.contains(&p.id) => true,
            (_, Some(t)) if t.contains(&p.id) => false,
            (Some(_), Some(_)) => continue,
            (Some(_), None) => false,
            (None, _) => true,
        };
        if in_train {
            out.train.push(p);
        } else {
            out.test.push(p);
        }
    }
    Ok(out)
}

fn open_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| open_error(path, e))
}

/// Decodes an RGB image as a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Decodes a grayscale mask as a `(1, 1, H, W)` tensor of raw 8-bit values.
pub fn read_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::from_vec(Shape::new(1, 1, h as usize, w as usize), data)
}

/// Writes a binary `(1, 1, H, W)` mask as 8-bit `{0, 255}`.
pub fn write_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let s = mask.shape();
    let data = mask.data().iter().map(|&v| if v > 0.5 { 255u8 } else { 0 }).collect();
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, data).expect("buffer sized");
    img.save(path).map_err(|e| open_error(path, e))
}

/// Resizes one decoded pair to `size × size`: bilinear for the image,
/// nearest-neighbour then `> 127` for the mask.
pub fn prepare_pair(id: &str, image: &Tensor<f32>, mask_raw: &Tensor<f32>, size: usize) -> Result<SamplePair> {
    let image = resize_bilinear(image, size, size)?;
    let mask = resize_nearest(mask_raw, size, size)?.map(|v| if v > 127.0 { 1.0 } else { 0.0 });
    Ok(SamplePair {
        id: id.to_string(),
        image,
        mask,
    })
}

pub fn load_pair(pair: &PairPath, size: usize) -> Result<SamplePair> {
    let image = read_rgb(&pair.image)?;
    let mask = read_gray(&pair.mask)?;
    prepare_pair(&pair.id, &image, &mask, size)
}

/// One element of the flip/rotation group, applied as horizontal flip, then
/// vertical flip, then `quarter_turns` clockwise rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
    };

    /// Draws hflip, vflip, then the rotation, in that order.
    pub fn draw(rng: &mut impl Rng) -> Transform {
        Transform {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4u8),
        }
    }

    /// Destination of source pixel `(r, c)` in an `n × n` plane.
    pub fn map(&self, n: usize, r: usize, c: usize) -> (usize, usize) {
        let c = if self.hflip { n - 1 - c } else { c };
        let r = if self.vflip { n - 1 - r } else { r };
        let (mut r, mut c) = (r, c);
        for _ in 0..self.quarter_turns {
            (r, c) = (c, n - 1 - r);
        }
        (r, c)
    }

    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = t.shape();
        if s.h != s.w {
            return Err(Error::NonSquare {
                op: "augment",
                h: s.h,
                w: s.w,
            });
        }
        if *self == Transform::IDENTITY {
            return Ok(t.clone());
        }
        let n = s.h;
        let mut out = Tensor::zeros(s);
        let (src, dst) = (t.data(), out.data_mut());
        for plane in 0..s.n * s.c {
            let base = plane * n * n;
            for r in 0..n {
                for c in 0..n {
                    let (rr, cc) = self.map(n, r, c);
                    dst[base + rr * n + cc] = src[base + r * n + c];
                }
            }
        }
        Ok(out)
    }
}

/// Applies one random group element identically to image and mask.
pub fn augment(pair: &SamplePair, rng: &mut impl Rng) -> Result<SamplePair> {
    let t = Transform::draw(rng);
    Ok(SamplePair {
        id: pair.id.clone(),
        image: t.apply(&pair.image)?,
        mask: t.apply(&pair.mask)?,
    })
}

fn seeded(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Augmentation stream for one sample in one epoch, independent of load order.
pub fn sample_rng(seed: u64, epoch: usize, id: &str) -> ChaCha8Rng {
    seeded(&[
        b"augment",
        &seed.to_le_bytes(),
        &(epoch as u64).to_le_bytes(),
        id.as_bytes(),
    ])
}

/// Shuffled index order for an epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = seeded(&[b"shuffle", &seed.to_le_bytes(), &(epoch as u64).to_le_bytes()]);
    order.shuffle(&mut rng);
    order
}

/// Consecutive chunks of the epoch order; the final short batch is kept.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::EmptySplit("train".into()));
    }
    Ok(epoch_order(len, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
}

/// A split held as paths, optionally with every resized pair cached in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    pairs: Vec<PairPath>,
    size: usize,
    cache: Option<Vec<SamplePair>>,
}

impl Dataset {
    pub fn new(name: &str, pairs: Vec<PairPath>, size: usize, cache: bool) -> Result<Self> {
        let cache = if cache {
            Some(
                pairs
                    .par_iter()
                    .map(|p| load_pair(p, size))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Dataset {
            name: name.to_string(),
            pairs,
            size,
            cache,
        })
    }

    /// Wraps already-prepared samples (for tests and in-memory data).
    pub fn from_samples(name: &str, samples: Vec<SamplePair>) -> Result<Self> {
        let size = samples.first().map_or(0, |s| s.image.shape().h);
        let pairs = samples
            .iter()
            .map(|s| PairPath {
                id: s.id.clone(),
                image: PathBuf::new(),
                mask: PathBuf::new(),
            })
            .collect();
        Ok(Dataset {
            name: name.to_string(),
            pairs,
            size,
            cache: Some(samples),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    pub fn get(&self, i: usize) -> Result<SamplePair> {
        match &self.cache {
            Some(c) => Ok(c[i].clone()),
            None => load_pair(&self.pairs[i], self.size),
        }
    }

    /// Assembles the samples at `indices`. With `augment = Some((seed, epoch))`
    /// each sample gets its own per-(seed, epoch, id) transform, so the batch is
    /// identical regardless of how loading is parallelised.
    pub fn batch(&self, indices: &[usize], augment: Option<(u64, usize)>) -> Result<Batch> {
        let samples = indices
            .par_iter()
            .map(|&i| {
                let s = self.get(i)?;
                match augment {
                    Some((seed, epoch)) => self::augment(&s, &mut sample_rng(seed, epoch, &s.id)),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
        let masks: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask.clone()).collect();
        Ok(Batch {
            ids: samples.into_iter().map(|s| s.id).collect(),
            images: Tensor::stack(&images)?,
            masks: Tensor::stack(&masks)?,
        })
    }
}
