//! Reverse-mode differentiation over the operation set the network needs.
//!
//! Every op evaluates eagerly and appends a node holding its value and the
//! context its backward pass needs. [`Tape::backward`] walks the nodes in
//! exact reverse order of execution. A tape is a single-threaded unit.

use crate::error::{Error, Result};
use crate::ops::{self, pointwise, pool, resize, ConvSpec};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Activation selector for [`Tape::activation`].
#[derive(Clone, Copy, Debug)]
pub enum Act {
    Identity,
    Relu,
    /// Parametric ReLU whose scalar slope is itself a tape value.
    Prelu(Var),
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BiasAdd {
        x: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Bce {
        pred: Var,
        target: Tensor<T>,
    },
    Dice {
        pred: Var,
        target: Tensor<T>,
    },
    /// `Σ x · weights` (plain sum when `weights` is `None`).
    Dot {
        x: Var,
        weights: Option<Tensor<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    recording: bool,
    last_backward: Vec<usize>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
            last_backward: Vec::new(),
        }
    }

    /// A tape that keeps values but no backward context.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        let rg = self.recording;
        self.push(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::new(0, 0, 0, 0)))
    }

    /// Node indices in the order the last backward pass visited them.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.last_backward
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, spec: *spec }, rg))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let value = pointwise::bias_add(self.value(x), self.value(b))?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::BiasAdd { x, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = pointwise::leaky(self.value(x), T::zero());
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    /// PReLU with a learnable one-element slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let s = self.value(slope);
        if s.numel() != 1 {
            return Err(Error::shape("prelu slope", 1, s.numel()));
        }
        let value = pointwise::leaky(self.value(x), s.item());
        let rg = self.rg(&[x, slope]);
        Ok(self.push(value, Op::Prelu { x, slope }, rg))
    }

    pub fn activation(&mut self, x: Var, act: Act) -> Result<Var> {
        match act {
            Act::Identity => Ok(x),
            Act::Relu => Ok(self.relu(x)),
            Act::Prelu(slope) => self.prelu(x, slope),
        }
    }

    pub fn maxpool2d_2x2(&mut self, x: Var) -> Result<Var> {
        let (value, argmax) = pool::maxpool2d_2x2(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let value = resize::resize_bilinear(self.value(x), h, w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Resize { x }, rg))
    }

    /// Bilinear upsampling by 2, 4 or 8.
    pub fn upsample_bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = resize::upsample_output_shape(self.shape(x), scale)?;
        self.resize_bilinear(x, out.h, out.w)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = pointwise::concat_channels(&values)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = pointwise::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = pointwise::sigmoid(self.value(x));
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = pointwise::bce_loss(self.value(pred), target)?;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn dice_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = pointwise::dice_loss(self.value(pred), target)?;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Dice {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Dot { x, weights: None }, rg)
    }

    /// `Σ x ⊙ weights` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::shape("weighted_sum", xv.shape(), weights.shape()));
        }
        let s = xv.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::Dot {
                x,
                weights: Some(weights.clone()),
            },
            rg,
        ))
    }

    /// Accumulates d`loss`/d`v` for every recorded value that requires it.
    /// `loss` must hold a single element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::shape("backward", "one-element loss", ls));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.last_backward.clear();
        self.grads[loss.0] = Some(Tensor::full(ls, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.last_backward.push(i);
            let contributions = self.node_backward(i, &g)?;
            self.grads[i] = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&dg),
                    slot => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let grads = ops::conv2d_backward(self.value(*x), self.value(*w), g, spec, needs(*x))?;
                if let Some(gx) = grads.input {
                    out.push((*x, gx));
                }
                out.push((*w, grads.weight));
                if let Some(b) = b {
                    out.push((*b, grads.bias.reshape(self.shape(*b))?));
                }
            }
            Op::BiasAdd { x, b } => {
                out.push((*x, g.clone()));
                if needs(*b) {
                    out.push((*b, pointwise::channel_sums(g).reshape(self.shape(*b))?));
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*x, Tensor::from_vec(xv.shape(), data)?));
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x);
                let s = self.value(*slope).item();
                let mut ds = T::zero();
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| {
                        if v > T::zero() {
                            d
                        } else {
                            ds += v * d;
                            s * d
                        }
                    })
                    .collect();
                out.push((*x, Tensor::from_vec(xv.shape(), data)?));
                out.push((*slope, Tensor::full(self.shape(*slope), ds)));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, pool::maxpool2d_2x2_backward(self.shape(*x), argmax, g)));
            }
            Op::Resize { x } => {
                out.push((*x, resize::resize_bilinear_backward(self.shape(*x), g)));
            }
            Op::Concat { inputs } => {
                let channels: Vec<usize> = inputs.iter().map(|&v| self.shape(v).c).collect();
                for (&v, part) in inputs.iter().zip(pointwise::split_channels(g, &channels)) {
                    out.push((v, part));
                }
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&p, &d)| d * p * (T::one() - p))
                    .collect();
                out.push((*x, Tensor::from_vec(y.shape(), data)?));
            }
            Op::Bce { pred, target } => {
                out.push((*pred, pointwise::bce_loss_backward(self.value(*pred), target, g.item())));
            }
            Op::Dice { pred, target } => {
                out.push((
                    *pred,
                    pointwise::dice_loss_backward(self.value(*pred), target, g.item()),
                ));
            }
            Op::Dot { x, weights } => {
                let up = g.item();
                let gx = match weights {
                    Some(w) => w.map(|v| v * up),
                    None => Tensor::full(self.shape(*x), up),
                };
                out.push((*x, gx));
            }
        }
        Ok(out)
    }
}
