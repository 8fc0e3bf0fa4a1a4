use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Clamp applied to probabilities before taking logarithms in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// `max(0, x) + slope · min(0, x)`; `slope == 0` is ReLU.
pub fn leaky<T: Element>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Adds a per-channel bias (any tensor with `C` elements) to every position.
pub fn bias_add<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if bias.numel() != s.c {
        return Err(Error::shape("bias_add", s.c, bias.numel()));
    }
    let mut out = x.clone();
    let plane = s.plane();
    for n in 0..s.n {
        let sample = out.sample_mut(n);
        for (c, &b) in bias.data().iter().enumerate() {
            for v in &mut sample[c * plane..(c + 1) * plane] {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Per-channel sums of a gradient, the backward of [`bias_add`].
pub fn channel_sums<T: Element>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let mut out = Tensor::zeros(Shape::new(s.c, 1, 1, 1));
    let plane = s.plane();
    for n in 0..s.n {
        let sample = g.sample(n);
        for (c, o) in out.data_mut().iter_mut().enumerate() {
            *o += sample[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
        }
    }
    out
}

pub fn concat_output_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = *shapes
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "at least one input", 0))?;
    let mut c = 0;
    for s in shapes {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", first, s));
        }
        c += s.c;
    }
    Ok(first.with_channels(c))
}

pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<Shape> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = concat_output_shape(&shapes)?;
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..out_shape.n {
        for t in inputs {
            data.extend_from_slice(t.sample(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<T: Element>(g: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let s = g.shape();
    let plane = s.plane();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * plane)).collect();
    for n in 0..s.n {
        let sample = g.sample(n);
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&sample[off..off + c * plane]);
            off += c * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor::from_vec(s.with_channels(c), data).expect("split sizes"))
        .collect()
}

pub fn check_binary<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    match t.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(&v) => Err(Error::NonBinary {
            op,
            value: v.to_f64_lossy(),
        }),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1 − ε]`.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("bce_loss", pred.shape(), target.shape()));
    }
    check_binary("bce_loss", target)?;
    let eps = T::from_f64_lossy(BCE_EPS);
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / T::from_usize(pred.numel()).unwrap())
}

/// Gradient of [`bce_loss`] with respect to `pred`, evaluated at the clamped
/// prediction so saturated outputs keep a restoring gradient.
pub fn bce_loss_backward<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let eps = T::from_f64_lossy(BCE_EPS);
    let scale = upstream / T::from_usize(pred.numel()).unwrap();
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            scale * (p - t) / (p * (T::one() - p))
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}

/// Soft Dice loss `1 − (2Σpt + 1) / (Σp + Σt + 1)` over the whole batch.
pub fn dice_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("dice_loss", pred.shape(), target.shape()));
    }
    check_binary("dice_loss", target)?;
    let (inter, denom) = dice_terms(pred, target);
    Ok(T::one() - (inter + inter + T::one()) / (denom + T::one()))
}

fn dice_terms<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, T) {
    let mut inter = T::zero();
    let mut denom = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        inter += p * t;
        denom += p + t;
    }
    (inter, denom)
}

pub fn dice_loss_backward<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let (inter, denom) = dice_terms(pred, target);
    let two = T::one() + T::one();
    let num = two * inter + T::one();
    let den = denom + T::one();
    let data = target
        .data()
        .iter()
        .map(|&t| -upstream * (two * t * den - num) / (den * den))
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}
