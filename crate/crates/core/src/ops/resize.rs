//! Bilinear resampling with half-pixel coordinate mapping: output pixel `o`
//! samples source coordinate `(o + 0.5) · in / out − 0.5`, clamped to the
//! valid range. Used both for upsampling feature maps and for building the
//! image pyramid.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn check(input: Shape, out_h: usize, out_w: usize) -> Result<()> {
    if input.h == 0 || input.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::EmptyOutput {
            op: "resize_bilinear",
            input,
        });
    }
    Ok(())
}

pub fn resize_bilinear<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, out_h, out_w)?;
    let ty = taps(s.h, out_h);
    let tx: Vec<_> = taps(s.w, out_w)
        .into_iter()
        .map(|t| (t.lo, t.hi, T::from_f64_lossy(t.frac)))
        .collect();
    let out_shape = s.with_spatial(out_h, out_w);
    let mut out = Tensor::zeros(out_shape);
    let x = input.data();
    let y = out.data_mut();
    let mut row_lo = vec![T::zero(); out_w];
    let mut row_hi = vec![T::zero(); out_w];
    for plane in 0..s.n * s.c {
        let src = &x[plane * s.plane()..(plane + 1) * s.plane()];
        let dst = &mut y[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(t.frac);
            let a = &src[t.lo * s.w..(t.lo + 1) * s.w];
            let b = &src[t.hi * s.w..(t.hi + 1) * s.w];
            for (ox, &(lo, hi, fx)) in tx.iter().enumerate() {
                row_lo[ox] = a[lo] + (a[hi] - a[lo]) * fx;
                row_hi[ox] = b[lo] + (b[hi] - b[lo]) * fx;
            }
            let out_row = &mut dst[oy * out_w..(oy + 1) * out_w];
            for ((o, &l), &h) in out_row.iter_mut().zip(&row_lo).zip(&row_hi) {
                *o = l + (h - l) * fy;
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let g = grad_out.shape();
    let ty = taps(s.h, g.h);
    let tx = taps(s.w, g.w);
    let mut gx = Tensor::zeros(s);
    let dst_all = gx.data_mut();
    for plane in 0..s.n * s.c {
        let src = &grad_out.data()[plane * g.plane()..(plane + 1) * g.plane()];
        let dst = &mut dst_all[plane * s.plane()..(plane + 1) * s.plane()];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(t.frac);
            for (ox, u) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(u.frac);
                let v = src[oy * g.w + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[t.lo * s.w + u.lo] += top * (T::one() - fx);
                dst[t.lo * s.w + u.hi] += top * fx;
                dst[t.hi * s.w + u.lo] += bot * (T::one() - fx);
                dst[t.hi * s.w + u.hi] += bot * fx;
            }
        }
    }
    gx
}

/// Integer-factor bilinear upsampling restricted to the factors the network uses.
pub fn upsample_output_shape(input: Shape, scale: usize) -> Result<Shape> {
    if !matches!(scale, 2 | 4 | 8) {
        return Err(Error::UnsupportedScale(scale));
    }
    Ok(input.with_spatial(input.h * scale, input.w * scale))
}

/// Nearest-neighbour resampling with the same half-pixel mapping, for masks.
pub fn resize_nearest<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, out_h, out_w)?;
    let pick = |o: usize, out_len: usize, in_len: usize| {
        (((o as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
    };
    let ys: Vec<usize> = (0..out_h).map(|o| pick(o, out_h, s.h)).collect();
    let xs: Vec<usize> = (0..out_w).map(|o| pick(o, out_w, s.w)).collect();
    Ok(Tensor::from_fn(s.with_spatial(out_h, out_w), |n, c, h, w| {
        input.at(n, c, ys[h], xs[w])
    }))
}
