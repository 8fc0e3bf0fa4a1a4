//! 2-D cross-correlation over NCHW tensors with stride, zero padding,
//! dilation and channel groups.
//!
//! Two execution paths share one contract: grouped convolutions and convolutions
//! with very few taps per output run a direct shift-and-add loop; everything
//! else lowers each (sample, group) pair to im2col followed by a GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Geometry of a convolution. The kernel tensor it expects has shape
/// `(out_channels, in_channels / groups, kh, kw)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// Tap spacing; 1 is a dense kernel, `d + 1` inserts `d` zeros between taps.
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Padding that keeps spatial dims unchanged at stride 1 (odd kernels).
    pub fn same_padding(mut self) -> Self {
        self.padding = (
            self.dilation.0 * (self.kernel.0 - 1) / 2,
            self.dilation.1 * (self.kernel.1 - 1) / 2,
        );
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups.max(1)
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups.max(1)
    }

    pub fn kernel_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1)
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_shape().numel()
    }

    /// Receptive extent of the kernel along each axis.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation.0 * (self.kernel.0 - 1) + 1,
            self.dilation.1 * (self.kernel.1 - 1) + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::InvalidConfig("conv groups must be >= 1".into()));
        }
        if !self.in_channels.is_multiple_of(self.groups) {
            return Err(Error::GroupDivisibility {
                what: "in_channels",
                value: self.in_channels,
                groups: self.groups,
            });
        }
        if !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::GroupDivisibility {
                what: "out_channels",
                value: self.out_channels,
                groups: self.groups,
            });
        }
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel, stride and dilation must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output shape for `input`, computed from shapes alone.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("{} input channels", self.in_channels),
                input,
            ));
        }
        let (eh, ew) = self.extent();
        let padded_h = input.h + 2 * self.padding.0;
        let padded_w = input.w + 2 * self.padding.1;
        if padded_h < eh || padded_w < ew {
            return Err(Error::EmptyOutput { op: "conv2d", input });
        }
        let oh = (padded_h - eh) / self.stride.0 + 1;
        let ow = (padded_w - ew) / self.stride.1 + 1;
        if oh == 0 || ow == 0 || input.n == 0 {
            return Err(Error::EmptyOutput { op: "conv2d", input });
        }
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }

    /// Multiply-accumulates for one forward pass over `input`.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(out.numel() as u64 * (self.in_per_group() * self.kernel.0 * self.kernel.1) as u64)
    }

    fn uses_direct_path(&self) -> bool {
        self.groups > 1 || self.in_per_group() * self.kernel.0 * self.kernel.1 <= 4
    }

    fn check_kernel<T: Element>(&self, weight: &Tensor<T>) -> Result<()> {
        if weight.shape() != self.kernel_shape() {
            return Err(Error::shape("conv2d kernel", self.kernel_shape(), weight.shape()));
        }
        Ok(())
    }
}

/// Output positions `o` in `0..out_len` for which `o * stride + offset` lands
/// inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(input: Shape, output: Shape) -> Self {
        Geometry {
            in_h: input.h,
            in_w: input.w,
            out_h: output.h,
            out_w: output.w,
        }
    }
}

/// Visits every valid (output row span, input row span) pairing of a single
/// tap `(ki, kj)`: `f(out_offset, in_offset, len)` for stride-1 width, or
/// per element otherwise.
#[inline]
fn for_each_tap_row(
    spec: &ConvSpec,
    g: &Geometry,
    ki: usize,
    kj: usize,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let off_h = (ki * spec.dilation.0) as isize - spec.padding.0 as isize;
    let off_w = (kj * spec.dilation.1) as isize - spec.padding.1 as isize;
    let (oy_lo, oy_hi) = valid_range(g.out_h, g.in_h, spec.stride.0, off_h);
    let (ox_lo, ox_hi) = valid_range(g.out_w, g.in_w, spec.stride.1, off_w);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in oy_lo..oy_hi {
        let iy = (oy * spec.stride.0) as isize + off_h;
        let ix0 = (ox_lo * spec.stride.1) as isize + off_w;
        f(
            oy * g.out_w + ox_lo,
            iy as usize * g.in_w + ix0 as usize,
            ox_hi - ox_lo,
            spec.stride.1,
        );
    }
}

fn im2col<T: Element>(spec: &ConvSpec, g: &Geometry, input: &[T], col: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    col.fill(T::zero());
    for ic in 0..spec.in_per_group() {
        let src = &input[ic * plane_in..(ic + 1) * plane_in];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ic * kh + ki) * kw + kj;
                let dst = &mut col[row * plane_out..(row + 1) * plane_out];
                for_each_tap_row(spec, g, ki, kj, |o, i, len, s| {
                    if s == 1 {
                        dst[o..o + len].copy_from_slice(&src[i..i + len]);
                    } else {
                        for t in 0..len {
                            dst[o + t] = src[i + t * s];
                        }
                    }
                });
            }
        }
    }
}

fn col2im<T: Element>(spec: &ConvSpec, g: &Geometry, col: &[T], grad_in: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    for ic in 0..spec.in_per_group() {
        let dst = &mut grad_in[ic * plane_in..(ic + 1) * plane_in];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ic * kh + ki) * kw + kj;
                let src = &col[row * plane_out..(row + 1) * plane_out];
                for_each_tap_row(spec, g, ki, kj, |o, i, len, s| {
                    for t in 0..len {
                        dst[i + t * s] += src[o + t];
                    }
                });
            }
        }
    }
}

/// Forward convolution. `bias`, when given, holds one value per output channel.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input.shape())?;
    spec.check_kernel(weight)?;
    if let Some(b) = bias {
        if b.numel() != spec.out_channels {
            return Err(Error::shape("conv2d bias", spec.out_channels, b.numel()));
        }
    }
    let in_shape = input.shape();
    let geom = Geometry::new(in_shape, out_shape);
    let mut out = Tensor::zeros(out_shape);

    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let plane_in = in_shape.plane();
    let plane_out = out_shape.plane();
    let k_len = cin_g * spec.kernel.0 * spec.kernel.1;
    let pointwise = spec.kernel == (1, 1) && spec.stride == (1, 1) && spec.padding == (0, 0);
    let mut col = if spec.uses_direct_path() || pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k_len * plane_out]
    };

    for n in 0..in_shape.n {
        let x = input.sample(n);
        let y = out.sample_mut(n);
        for grp in 0..spec.groups {
            let xg = &x[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
            let yg = &mut y[grp * cout_g * plane_out..(grp + 1) * cout_g * plane_out];
            let wg = &weight.data()[grp * cout_g * k_len..(grp + 1) * cout_g * k_len];
            if spec.uses_direct_path() {
                direct_forward(spec, &geom, xg, wg, yg);
            } else if pointwise {
                T::gemm(cout_g, k_len, plane_out, wg, false, xg, false, T::zero(), yg);
            } else {
                im2col(spec, &geom, xg, &mut col);
                T::gemm(cout_g, k_len, plane_out, wg, false, &col, false, T::zero(), yg);
            }
        }
        if let Some(b) = bias {
            for (oc, &bv) in b.data().iter().enumerate() {
                for v in &mut y[oc * plane_out..(oc + 1) * plane_out] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

fn direct_forward<T: Element>(spec: &ConvSpec, g: &Geometry, x: &[T], w: &[T], y: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let cin_g = spec.in_per_group();
    for oc in 0..spec.out_per_group() {
        let yo = &mut y[oc * plane_out..(oc + 1) * plane_out];
        for ic in 0..cin_g {
            let xi = &x[ic * plane_in..(ic + 1) * plane_in];
            for ki in 0..kh {
                for kj in 0..kw {
                    let wv = w[((oc * cin_g + ic) * kh + ki) * kw + kj];
                    for_each_tap_row(spec, g, ki, kj, |o, i, len, s| {
                        if s == 1 {
                            for (dst, &src) in yo[o..o + len].iter_mut().zip(&xi[i..i + len]) {
                                *dst += wv * src;
                            }
                        } else {
                            for t in 0..len {
                                yo[o + t] += wv * xi[i + t * s];
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to its operands.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass. The bias gradient is always produced (shape `(C_out,1,1,1)`);
/// the input gradient only when `need_input` is set.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let out_shape = spec.output_shape(input.shape())?;
    spec.check_kernel(weight)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape("conv2d backward", out_shape, grad_out.shape()));
    }
    let in_shape = input.shape();
    let geom = Geometry::new(in_shape, out_shape);
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let plane_in = in_shape.plane();
    let plane_out = out_shape.plane();
    let k_len = cin_g * spec.kernel.0 * spec.kernel.1;
    let direct = spec.uses_direct_path();
    let pointwise = spec.kernel == (1, 1) && spec.stride == (1, 1) && spec.padding == (0, 0);

    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(Shape::new(spec.out_channels, 1, 1, 1));
    let mut grad_x = need_input.then(|| Tensor::zeros(in_shape));
    let mut col = if direct || pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k_len * plane_out]
    };
    let mut dcol = if direct || !need_input {
        Vec::new()
    } else {
        vec![T::zero(); k_len * plane_out]
    };

    for n in 0..in_shape.n {
        let x = input.sample(n);
        let gy = grad_out.sample(n);
        for (oc, gb) in grad_b.data_mut().iter_mut().enumerate() {
            *gb += gy[oc * plane_out..(oc + 1) * plane_out].iter().copied().sum::<T>();
        }
        for grp in 0..spec.groups {
            let xg = &x[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
            let gyg = &gy[grp * cout_g * plane_out..(grp + 1) * cout_g * plane_out];
            let w_range = grp * cout_g * k_len..(grp + 1) * cout_g * k_len;
            let wg = &weight.data()[w_range.clone()];
            let gwg = &mut grad_w.data_mut()[w_range];
            let gxg = grad_x
                .as_mut()
                .map(|gx| &mut gx.sample_mut(n)[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in]);
            if direct {
                direct_backward(spec, &geom, xg, wg, gyg, gwg, gxg);
                continue;
            }
            let cols: &[T] = if pointwise {
                xg
            } else {
                im2col(spec, &geom, xg, &mut col);
                &col
            };
            T::gemm(cout_g, plane_out, k_len, gyg, false, cols, true, T::one(), gwg);
            if let Some(gxg) = gxg {
                if pointwise {
                    T::gemm(k_len, cout_g, plane_out, wg, true, gyg, false, T::one(), gxg);
                } else {
                    T::gemm(k_len, cout_g, plane_out, wg, true, gyg, false, T::zero(), &mut dcol);
                    col2im(spec, &geom, &dcol, gxg);
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    })
}

fn direct_backward<T: Element>(
    spec: &ConvSpec,
    g: &Geometry,
    x: &[T],
    w: &[T],
    gy: &[T],
    gw: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let (kh, kw) = spec.kernel;
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let cin_g = spec.in_per_group();
    for oc in 0..spec.out_per_group() {
        let gyo = &gy[oc * plane_out..(oc + 1) * plane_out];
        for ic in 0..cin_g {
            let xi = &x[ic * plane_in..(ic + 1) * plane_in];
            for ki in 0..kh {
                for kj in 0..kw {
                    let widx = ((oc * cin_g + ic) * kh + ki) * kw + kj;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for_each_tap_row(spec, g, ki, kj, |o, i, len, s| {
                        if s == 1 {
                            acc += gyo[o..o + len]
                                .iter()
                                .zip(&xi[i..i + len])
                                .map(|(&a, &b)| a * b)
                                .sum::<T>();
                        } else {
                            for t in 0..len {
                                acc += gyo[o + t] * xi[i + t * s];
                            }
                        }
                    });
                    gw[widx] += acc;
                    if let Some(gx) = gx.as_deref_mut() {
                        let gxi = &mut gx[ic * plane_in..(ic + 1) * plane_in];
                        for_each_tap_row(spec, g, ki, kj, |o, i, len, s| {
                            for t in 0..len {
                                gxi[i + t * s] += wv * gyo[o + t];
                            }
                        });
                    }
                }
            }
        }
    }
}
