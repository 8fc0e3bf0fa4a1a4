//! The network's building blocks: the stem, the SNP-type downsampler (SDS),
//! the SNP-type lightweight pyramid (SLP) and the SNP-type feature
//! self-adaptation block (SFA).
//!
//! Each block also reports its cost for a given input shape without touching
//! any data; see [`Flops`] for the counting rules.

use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::ops::{pool, resize, ConvSpec};
use crate::params::{Bound, Init, ParamStore};
use crate::snp::{prelu_slope, Activation, Branch, ConvLayer, ConvSnp, MsConvSnp};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Shape};

/// Floating-point operation tally. Convolutions count `2 · MACs`; bilinear
/// resampling counts 8 per output element; 2×2 max pooling counts 3 per
/// output element; every other elementwise op (bias, activations, sums,
/// sigmoid) counts 1 per element. Concatenation is free.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flops {
    pub conv: u64,
    pub other: u64,
}

impl Flops {
    pub fn total(&self) -> u64 {
        self.conv + self.other
    }

    pub(crate) fn conv(spec: &ConvSpec, input: Shape) -> Result<(Shape, Flops)> {
        let out = spec.output_shape(input)?;
        Ok((
            out,
            Flops {
                conv: 2 * spec.macs(input)?,
                other: 0,
            },
        ))
    }

    pub(crate) fn elementwise(shape: Shape) -> Flops {
        Flops {
            conv: 0,
            other: shape.numel() as u64,
        }
    }

    pub(crate) fn resample(out: Shape) -> Flops {
        Flops {
            conv: 0,
            other: 8 * out.numel() as u64,
        }
    }
}

impl AddAssign for Flops {
    fn add_assign(&mut self, rhs: Flops) {
        self.conv += rhs.conv;
        self.other += rhs.other;
    }
}

fn conv_layer_flops(layer: &ConvLayer, input: Shape) -> Result<(Shape, Flops)> {
    let (out, mut f) = Flops::conv(&layer.spec, input)?;
    f += Flops::elementwise(out);
    Ok((out, f))
}

fn expect_channels(op: &'static str, shape: Shape, c: usize) -> Result<()> {
    if shape.c != c {
        return Err(Error::shape(op, format!("{c} channels"), shape));
    }
    Ok(())
}

/// Three 3×3 stride-1 convolutions (3→16→16→16 by default), each followed by ReLU.
#[derive(Clone, Debug)]
pub struct InitBlock {
    pub layers: Vec<ConvLayer>,
}

impl InitBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        out_channels: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(3);
        let mut c = 3;
        for i in 1..=3 {
            let spec = ConvSpec::new(c, out_channels, (3, 3)).same_padding();
            layers.push(ConvLayer::new(store, &format!("{name}.conv{i}"), spec, init)?);
            c = out_channels;
        }
        Ok(InitBlock { layers })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        expect_channels("initblock", tape.shape(x), 3)?;
        self.layers.iter().try_fold(x, |h, layer| {
            let y = layer.forward(tape, p, h)?;
            Ok(tape.relu(y))
        })
    }

    pub fn flops(&self, input: Shape) -> Result<(Shape, Flops)> {
        expect_channels("initblock", input, 3)?;
        let mut total = Flops::default();
        let mut s = input;
        for layer in &self.layers {
            let (out, f) = conv_layer_flops(layer, s)?;
            total += f;
            total += Flops::elementwise(out);
            s = out;
        }
        Ok((s, total))
    }
}

/// Halves resolution by concatenating a strided 3×3 convolution (with ReLU),
/// a 2×2 max-pool of the input, and the original image at the output scale.
#[derive(Clone, Debug)]
pub struct SdsBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv: ConvLayer,
}

impl SdsBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let conv_channels = out_channels
            .checked_sub(in_channels + 3)
            .filter(|&c| c > 0)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{name}: output width {out_channels} leaves no room for a conv branch next to {in_channels} pooled + 3 image channels"
                ))
            })?;
        let spec = ConvSpec::new(in_channels, conv_channels, (3, 3))
            .stride(2, 2)
            .padding(1, 1);
        Ok(SdsBlock {
            in_channels,
            out_channels,
            conv: ConvLayer::new(store, &format!("{name}.conv"), spec, init)?,
        })
    }

    pub fn conv_channels(&self) -> usize {
        self.conv.spec.out_channels
    }

    fn check(&self, x: Shape, image: Shape) -> Result<()> {
        expect_channels("sds", x, self.in_channels)?;
        if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
            return Err(Error::OddSpatial {
                op: "sds",
                h: x.h,
                w: x.w,
            });
        }
        let expected = Shape::new(x.n, 3, x.h / 2, x.w / 2);
        if image != expected {
            return Err(Error::shape("sds image", expected, image));
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, image: Var) -> Result<Var> {
        self.check(tape.shape(x), tape.shape(image))?;
        let c = self.conv.forward(tape, p, x)?;
        let c = tape.relu(c);
        let pooled = tape.maxpool2d_2x2(x)?;
        tape.concat_channels(&[c, pooled, image])
    }

    pub fn flops(&self, input: Shape) -> Result<(Shape, Flops)> {
        self.check(input, Shape::new(input.n, 3, input.h / 2, input.w / 2))?;
        let (conv_out, mut f) = conv_layer_flops(&self.conv, input)?;
        f += Flops::elementwise(conv_out);
        let pooled = pool::maxpool_output_shape(input)?;
        f.other += 3 * pooled.numel() as u64;
        Ok((pooled.with_channels(self.out_channels), f))
    }
}

/// SNP-type lightweight pyramid. A four-branch depthwise neuron (grouped
/// 3×1 then 1×3 convolutions at distinct dilations, 2N→N→2N, one shared
/// bias) feeds a 1×1 pointwise neuron; the result is added to the input.
#[derive(Clone, Debug)]
pub struct SlpBlock {
    pub channels: usize,
    pub dw: MsConvSnp,
    pub pw: ConvSnp,
}

impl SlpBlock {
    /// `zeros` lists, per branch, the number of zeros inserted between taps;
    /// the dilation factor is `zeros + 1`.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        zeros: &[usize],
        init: &mut Init,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "{name}: SLP needs an even channel count, got {channels}"
            )));
        }
        let half = channels / 2;
        let mut branches = Vec::with_capacity(zeros.len());
        for (i, &z) in zeros.iter().enumerate() {
            let d = z + 1;
            let vertical = ConvSpec::new(channels, half, (3, 1))
                .dilation(d, 1)
                .groups(half)
                .same_padding();
            let horizontal = ConvSpec::new(half, channels, (1, 3))
                .dilation(1, d)
                .groups(half)
                .same_padding();
            branches.push(Branch::with_init(
                store,
                &format!("{name}.dw.branch{i}"),
                &[("k31", vertical), ("k13", horizontal)],
                Activation::Relu.init_gain(),
                zeros.len(),
                init,
            )?);
        }
        let dw = MsConvSnp::new(store, &format!("{name}.dw"), branches, channels, Activation::Relu)?;
        let pw = ConvSnp::new(
            store,
            &format!("{name}.pw"),
            ConvSpec::new(channels, channels, (1, 1)),
            Activation::Relu,
            init,
        )?;
        Ok(SlpBlock { channels, dw, pw })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        expect_channels("slp", tape.shape(x), self.channels)?;
        let d = self.dw.forward(tape, p, x)?;
        let e = self.pw.forward(tape, p, d)?;
        tape.add(x, e)
    }

    pub fn flops(&self, input: Shape) -> Result<(Shape, Flops)> {
        expect_channels("slp", input, self.channels)?;
        let out = self.dw.output_shape(input)?;
        let mut f = Flops::elementwise(input);
        for b in &self.dw.branches {
            let mut s = input;
            for (spec, _) in &b.stages {
                let (o, g) = Flops::conv(spec, s)?;
                f += g;
                s = o;
            }
        }
        f.other += (self.dw.branches.len() as u64 - 1) * out.numel() as u64;
        f += Flops::elementwise(out);
        f += Flops::elementwise(out);
        let (pw_out, g) = conv_layer_flops(&self.pw.conv, out)?;
        f += g;
        f += Flops::elementwise(pw_out);
        Ok((pw_out, f))
    }

    pub fn param_count(&self) -> usize {
        self.dw.param_count() + self.pw.conv.param_count()
    }
}

/// SNP-type feature self-adaptation: PReLU, then parallel 3×3 and 1×1
/// projections 2N→N each, concatenated back to 2N and upsampled.
#[derive(Clone, Debug)]
pub struct SfaBlock {
    pub channels: usize,
    pub activation: Activation,
    pub psi3: ConvLayer,
    pub psi1: ConvLayer,
    /// Bilinear output factor; 1 disables upsampling.
    pub upsample: usize,
}

pub use crate::snp::PRELU_INIT;

impl SfaBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        upsample: usize,
        init: &mut Init,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "{name}: SFA needs an even channel count, got {channels}"
            )));
        }
        if upsample != 1 {
            resize::upsample_output_shape(Shape::scalar(), upsample)?;
        }
        let half = channels / 2;
        let activation = prelu_slope(store, &format!("{name}.lambda"), PRELU_INIT)?;
        let gain = activation.init_gain();
        let psi3 = ConvLayer::with_gain(
            store,
            &format!("{name}.psi3"),
            ConvSpec::new(channels, half, (3, 3)).same_padding(),
            gain,
            init,
        )?;
        let psi1 = ConvLayer::with_gain(
            store,
            &format!("{name}.psi1"),
            ConvSpec::new(channels, half, (1, 1)),
            gain,
            init,
        )?;
        Ok(SfaBlock {
            channels,
            activation,
            psi3,
            psi1,
            upsample,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        expect_channels("sfa", tape.shape(x), self.channels)?;
        let a = self.activation.apply(tape, p, x)?;
        let y3 = self.psi3.forward(tape, p, a)?;
        let y1 = self.psi1.forward(tape, p, a)?;
        let y = tape.concat_channels(&[y3, y1])?;
        if self.upsample == 1 {
            Ok(y)
        } else {
            tape.upsample_bilinear(y, self.upsample)
        }
    }

    pub fn flops(&self, input: Shape) -> Result<(Shape, Flops)> {
        expect_channels("sfa", input, self.channels)?;
        let mut f = Flops::elementwise(input);
        let (o3, g3) = conv_layer_flops(&self.psi3, input)?;
        let (_, g1) = conv_layer_flops(&self.psi1, input)?;
        f += g3;
        f += g1;
        let cat = o3.with_channels(self.channels);
        if self.upsample == 1 {
            return Ok((cat, f));
        }
        let out = resize::upsample_output_shape(cat, self.upsample)?;
        f += Flops::resample(out);
        Ok((out, f))
    }
}
