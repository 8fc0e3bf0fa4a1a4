//! Activation-before-weighting convolution neurons.
//!
//! A [`ConvSnp`] computes `W ⊛ f(X) + b` rather than the conventional
//! `f(W ⊛ X + b)`. An [`MsConvSnp`] feeds the same activated input through
//! `r` weight branches, sums them, and adds a single bias shared by every
//! branch, so backward produces one gradient per branch kernel and exactly one
//! bias gradient.

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tape::{Act, Tape, Var};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Parametric ReLU with a learnable scalar slope.
    Prelu(ParamId),
}

/// Initial slope of learnable PReLU activations.
pub const PRELU_INIT: f64 = 0.25;

impl Activation {
    /// Variance gain of the fan-in initializer for a kernel reading this
    /// activation's output (PReLU assumed at its initial slope).
    pub fn init_gain(self) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => 2.0,
            Activation::Prelu(_) => 2.0 / (1.0 + PRELU_INIT * PRELU_INIT),
        }
    }

    pub fn apply<T: Element>(self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let act = match self {
            Activation::Identity => Act::Identity,
            Activation::Relu => Act::Relu,
            Activation::Prelu(id) => Act::Prelu(p.var(id)),
        };
        tape.activation(x, act)
    }
}

/// Registers a learnable PReLU slope initialised to `init` and excluded from
/// weight decay.
pub fn prelu_slope<T: Element>(store: &mut ParamStore<T>, name: &str, init: f64) -> Result<Activation> {
    let id = store.add(name, Tensor::scalar(T::from_f64_lossy(init)), false)?;
    Ok(Activation::Prelu(id))
}

fn bias_shape(channels: usize) -> Shape {
    Shape::new(channels, 1, 1, 1)
}

/// A plain convolution with per-output-channel bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    /// Weights scaled for ReLU-activated input.
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, init: &mut Init) -> Result<Self> {
        Self::with_gain(store, name, spec, 2.0, init)
    }

    pub fn with_gain<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        gain: f64,
        init: &mut Init,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = store.add(
            format!("{name}.weight"),
            init.scaled(spec.kernel_shape(), gain, 1),
            true,
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(bias_shape(spec.out_channels)),
            true,
        )?;
        Ok(ConvLayer { spec, weight, bias })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), &self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_count() + self.spec.out_channels
    }
}

/// Single-kernel SNP neuron: `conv(f(x), W) + b`.
#[derive(Clone, Debug)]
pub struct ConvSnp {
    pub conv: ConvLayer,
    pub activation: Activation,
}

impl ConvSnp {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        activation: Activation,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(ConvSnp {
            conv: ConvLayer::with_gain(store, name, spec, activation.init_gain(), init)?,
            activation,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let a = self.activation.apply(tape, p, x)?;
        self.conv.forward(tape, p, a)
    }
}

/// One weight branch: a chain of bias-free convolutions applied in order.
#[derive(Clone, Debug)]
pub struct Branch {
    pub stages: Vec<(ConvSpec, ParamId)>,
}

impl Branch {
    /// A branch reading ReLU-activated input that is not summed with others.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        stages: &[(&str, ConvSpec)],
        init: &mut Init,
    ) -> Result<Self> {
        Self::with_init(store, name, stages, 2.0, 1, init)
    }

    /// The first stage uses `input_gain` and a fan-in widened by the number of
    /// `siblings` summed with it; later stages read linear input (gain 1).
    pub fn with_init<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        stages: &[(&str, ConvSpec)],
        input_gain: f64,
        siblings: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(stages.len());
        for (i, (suffix, spec)) in stages.iter().enumerate() {
            spec.validate()?;
            let w = if i == 0 {
                init.scaled(spec.kernel_shape(), input_gain, siblings)
            } else {
                init.scaled(spec.kernel_shape(), 1.0, 1)
            };
            let id = store.add(format!("{name}.{suffix}"), w, true)?;
            out.push((*spec, id));
        }
        Ok(Branch { stages: out })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        self.stages
            .iter()
            .try_fold(x, |h, (spec, id)| tape.conv2d(h, p.var(*id), None, spec))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.stages.iter().try_fold(input, |s, (spec, _)| spec.output_shape(s))
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|(s, _)| s.weight_count()).sum()
    }
}

/// Multi-branch SNP neuron: `Σᵢ branchᵢ(f(x)) + b` with one shared bias.
#[derive(Clone, Debug)]
pub struct MsConvSnp {
    pub branches: Vec<Branch>,
    pub bias: ParamId,
    pub activation: Activation,
    pub out_channels: usize,
}

impl MsConvSnp {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        branches: Vec<Branch>,
        out_channels: usize,
        activation: Activation,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{name}: MSConvSNP needs at least one branch"
            )));
        }
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(bias_shape(out_channels)), true)?;
        Ok(MsConvSnp {
            branches,
            bias,
            activation,
            out_channels,
        })
    }

    /// Checks that every branch maps `input` to the same shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let first = self.branches[0].output_shape(input)?;
        for b in &self.branches[1..] {
            let s = b.output_shape(input)?;
            if s != first {
                return Err(Error::shape("msconvsnp branch", first, s));
            }
        }
        if first.c != self.out_channels {
            return Err(Error::shape("msconvsnp", self.out_channels, first.c));
        }
        Ok(first)
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        self.output_shape(tape.shape(x))?;
        let a = self.activation.apply(tape, p, x)?;
        let mut acc = self.branches[0].forward(tape, p, a)?;
        for b in &self.branches[1..] {
            let y = b.forward(tape, p, a)?;
            acc = tape.add(acc, y)?;
        }
        tape.bias_add(acc, p.var(self.bias))
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(Branch::param_count).sum::<usize>() + self.out_channels
    }
}
