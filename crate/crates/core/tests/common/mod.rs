#![allow(dead_code)]

pub mod grad_suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slpnet::{ConvSpec, ModelConfig, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Like [`uniform`] but keeps every value at least `gap` away from zero, so
/// finite differences never straddle a ReLU kink.
pub fn away_from_zero(shape: Shape, gap: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn binary(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

/// Textbook convolution straight from the definition.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, s: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let (kh, kw) = s.kernel;
    let oh = (xs.h + 2 * s.padding.0 - s.dilation.0 * (kh - 1) - 1) / s.stride.0 + 1;
    let ow = (xs.w + 2 * s.padding.1 - s.dilation.1 * (kw - 1) - 1) / s.stride.1 + 1;
    let ipg = s.in_channels / s.groups;
    let opg = s.out_channels / s.groups;
    Tensor::from_fn(Shape::new(xs.n, s.out_channels, oh, ow), |n, oc, y, xo| {
        let g = oc / opg;
        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
        for ic in 0..ipg {
            for i in 0..kh {
                for j in 0..kw {
                    let iy = (y * s.stride.0 + i * s.dilation.0) as isize - s.padding.0 as isize;
                    let ix = (xo * s.stride.1 + j * s.dilation.1) as isize - s.padding.1 as isize;
                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                        continue;
                    }
                    acc += x.at(n, g * ipg + ic, iy as usize, ix as usize) * w.at(oc, ic, i, j);
                }
            }
        }
        acc
    })
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        stage_widths: [4, 8, 16, 24],
        dilation_zeros: [0, 1, 2, 3],
        input_size: (16, 16),
        seed,
    }
}
