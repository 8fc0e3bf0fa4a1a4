use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub fn maxpool_output_shape(input: Shape) -> Result<Shape> {
    if !input.h.is_multiple_of(2) || !input.w.is_multiple_of(2) {
        return Err(Error::OddSpatial {
            op: "maxpool2d_2x2",
            h: input.h,
            w: input.w,
        });
    }
    if input.h == 0 || input.w == 0 {
        return Err(Error::EmptyOutput {
            op: "maxpool2d_2x2",
            input,
        });
    }
    Ok(input.with_spatial(input.h / 2, input.w / 2))
}

/// Non-overlapping 2×2 max pooling. Also returns, for every output element,
/// the flat input index it was taken from (first in scan order on ties).
pub fn maxpool2d_2x2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = input.shape();
    let out_shape = maxpool_output_shape(s)?;
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let x = input.data();
    let mut o = 0;
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let candidates = [top, top + 1, top + s.w, top + s.w + 1];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                out.data_mut()[o] = x[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_2x2_backward<T: Element>(input_shape: Shape, argmax: &[u32], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[idx as usize] += g;
    }
    gx
}
