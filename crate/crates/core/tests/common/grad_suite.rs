//! Finite-difference sweeps of every differentiable op and every block, in
//! f64, over randomized small shapes. Each case returns its worst trial.

use super::{away_from_zero, binary, rng, uniform};
use rand::Rng;
use slpnet::blocks::{InitBlock, SdsBlock, SfaBlock, SlpBlock};
use slpnet::gradcheck::{grad_check, GradCheckConfig};
use slpnet::params::Init;
use slpnet::snp::{Activation, Branch, ConvSnp, MsConvSnp};
use slpnet::tape::Act;
use slpnet::{Bound, ConvSpec, ParamStore, Result, Shape, Tape, Tensor, Var};

pub const TOL: f64 = 1e-4;
pub const TRIALS: u64 = 20;

/// Largest relative error seen across a case's trials, and where.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub label: String,
    pub trial: u64,
    pub err: f64,
    pub tol: f64,
    pub checks: usize,
}

impl Worst {
    pub fn new(tol: f64) -> Self {
        Worst {
            tol,
            ..Worst::default()
        }
    }

    pub fn passes(&self) -> bool {
        self.err < self.tol
    }

    fn record(&mut self, label: &str, trial: u64, err: f64) {
        self.checks += 1;
        if err >= self.err {
            *self = Worst {
                label: label.to_string(),
                trial,
                err,
                tol: self.tol,
                checks: self.checks,
            };
        }
    }
}

impl std::fmt::Display for Worst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} checks, worst {:.3e} ({} trial {}), tol {:e}",
            self.checks, self.err, self.label, self.trial, self.tol
        )
    }
}

fn check(
    worst: &mut Worst,
    name: &str,
    trial: u64,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) {
    check_with(worst, name, trial, inputs, GradCheckConfig::default(), f)
}

pub fn check_with(
    worst: &mut Worst,
    name: &str,
    trial: u64,
    inputs: &[Tensor<f64>],
    cfg: GradCheckConfig,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) {
    let cfg = GradCheckConfig { seed: trial, ..cfg };
    let report = grad_check(f, inputs, cfg).unwrap();
    worst.record(name, trial, report.max_rel_err);
}

/// Randomizes every parameter so biases and slopes are exercised too.
pub fn randomize(store: &mut ParamStore<f64>, r: &mut impl Rng) {
    for e in store.entries_mut() {
        e.value = uniform(e.value.shape(), r).map(|v| 0.5 * v);
    }
}

/// Jitters every parameter around its initial value, scaled to the tensor's
/// own magnitude, so deep stacks keep a well-conditioned signal.
pub fn jitter(store: &mut ParamStore<f64>, r: &mut impl Rng) {
    for e in store.entries_mut() {
        let d = e.value.data();
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt().max(0.1);
        let noise = uniform(e.value.shape(), r);
        for (v, u) in e.value.data_mut().iter_mut().zip(noise.data()) {
            *v += 0.5 * rms * u;
        }
    }
}

/// Checks a block with respect to its data inputs and all of its parameters.
fn check_block(
    worst: &mut Worst,
    name: &str,
    trial: u64,
    store: &ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    forward: impl Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var>,
) {
    check_block_with(worst, name, trial, store, data, GradCheckConfig::default(), forward)
}

pub fn check_block_with(
    worst: &mut Worst,
    name: &str,
    trial: u64,
    store: &ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    cfg: GradCheckConfig,
    forward: impl Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var>,
) {
    let k = data.len();
    let mut inputs = data;
    inputs.extend(store.entries().iter().map(|e| e.value.clone()));
    check_with(worst, name, trial, &inputs, cfg, |tape, vars| {
        let p = Bound::from_vars(vars[k..].to_vec());
        forward(tape, &p, &vars[..k])
    })
}

pub fn conv2d_all_operands() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(100 + t);
        let g = r.random_range(1..=2);
        let spec = ConvSpec::new(
            g * r.random_range(1..=2),
            g * r.random_range(1..=2),
            (r.random_range(1..=3), r.random_range(1..=3)),
        )
        .stride(r.random_range(1..=2), r.random_range(1..=2))
        .dilation(r.random_range(1..=2), r.random_range(1..=2))
        .padding(r.random_range(0..=1), r.random_range(0..=1))
        .groups(g);
        let x = uniform(Shape::new(r.random_range(1..=2), spec.in_channels, 5, 6), &mut r);
        let w = uniform(spec.kernel_shape(), &mut r);
        let b = uniform(Shape::new(spec.out_channels, 1, 1, 1), &mut r);
        check(&mut worst, "conv2d", t, &[x, w, b], |tape, v| {
            tape.conv2d(v[0], v[1], Some(v[2]), &spec)
        });
    }
    worst
}

pub fn conv2d_im2col_path() -> Worst {
    let mut worst = Worst::new(TOL);
    // wide enough (in_per_group · kh · kw > 4) to take the GEMM route
    for t in 0..TRIALS {
        let mut r = rng(200 + t);
        let spec = ConvSpec::new(3, r.random_range(1..=4), (3, 3))
            .stride(r.random_range(1..=2), 1)
            .padding(1, 1)
            .dilation(1, r.random_range(1..=2));
        let x = uniform(Shape::new(2, 3, 6, 6), &mut r);
        let w = uniform(spec.kernel_shape(), &mut r);
        check(&mut worst, "conv2d gemm", t, &[x, w], |tape, v| {
            tape.conv2d(v[0], v[1], None, &spec)
        });
        let pw = ConvSpec::new(r.random_range(2..=6), 3, (1, 1));
        let x = uniform(Shape::new(1, pw.in_channels, 4, 3), &mut r);
        let w = uniform(pw.kernel_shape(), &mut r);
        check(&mut worst, "conv2d 1x1", t, &[x, w], |tape, v| {
            tape.conv2d(v[0], v[1], None, &pw)
        });
    }
    worst
}

pub fn pointwise_ops() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(300 + t);
        let s = Shape::new(
            r.random_range(1..=2),
            r.random_range(1..=3),
            r.random_range(1..=4),
            r.random_range(1..=4),
        );
        let x = away_from_zero(s, 1e-3, &mut r);
        let y = uniform(s, &mut r);
        let bias = uniform(Shape::new(s.c, 1, 1, 1), &mut r);
        let slope = Tensor::scalar(r.random_range(0.0..0.5));
        check(&mut worst, "relu", t, std::slice::from_ref(&x), |tape, v| {
            Ok(tape.relu(v[0]))
        });
        check(&mut worst, "prelu", t, &[x.clone(), slope], |tape, v| {
            tape.activation(v[0], Act::Prelu(v[1]))
        });
        check(&mut worst, "sigmoid", t, std::slice::from_ref(&y), |tape, v| {
            Ok(tape.sigmoid(v[0]))
        });
        check(&mut worst, "add", t, &[x.clone(), y.clone()], |tape, v| {
            tape.add(v[0], v[1])
        });
        check(&mut worst, "bias_add", t, &[y.clone(), bias], |tape, v| {
            tape.bias_add(v[0], v[1])
        });
        check(&mut worst, "sum", t, std::slice::from_ref(&y), |tape, v| {
            Ok(tape.sum(v[0]))
        });
        let w = uniform(s, &mut r);
        check(&mut worst, "weighted_sum", t, &[y], |tape, v| {
            tape.weighted_sum(v[0], &w)
        });
    }
    worst
}

pub fn relu_away_from_kink() -> Worst {
    let mut worst = Worst::new(1e-6);
    for t in 0..TRIALS {
        let mut r = rng(350 + t);
        let x = away_from_zero(Shape::new(1, 2, 3, 3), 0.1, &mut r);
        check_with(&mut worst, "relu", t, &[x], GradCheckConfig::default(), |tape, v| {
            Ok(tape.relu(v[0]))
        });
    }
    worst
}

pub fn shape_ops() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(400 + t);
        let (n, h, w) = (
            r.random_range(1..=2),
            2 * r.random_range(1..=3),
            2 * r.random_range(1..=3),
        );
        let x = uniform(Shape::new(n, 2, h, w), &mut r);
        check(&mut worst, "maxpool", t, std::slice::from_ref(&x), |tape, v| {
            tape.maxpool2d_2x2(v[0])
        });
        let (oh, ow) = (r.random_range(1..=9), r.random_range(1..=9));
        check(&mut worst, "resize", t, std::slice::from_ref(&x), |tape, v| {
            tape.resize_bilinear(v[0], oh, ow)
        });
        let scale = [2, 4, 8][(t % 3) as usize];
        check(&mut worst, "upsample", t, std::slice::from_ref(&x), |tape, v| {
            tape.upsample_bilinear(v[0], scale)
        });
        let a = uniform(Shape::new(n, r.random_range(1..=3), h, w), &mut r);
        let b = uniform(Shape::new(n, r.random_range(1..=3), h, w), &mut r);
        check(&mut worst, "concat", t, &[x, a, b], |tape, v| tape.concat_channels(v));
    }
    worst
}

pub fn losses() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(500 + t);
        let s = Shape::new(r.random_range(1..=2), 1, r.random_range(2..=5), r.random_range(2..=5));
        let p = Tensor::from_fn(s, |_, _, _, _| r.random_range(0.05..0.95));
        let target = binary(s, &mut r);
        check(&mut worst, "bce", t, std::slice::from_ref(&p), |tape, v| {
            tape.bce_loss(v[0], &target)
        });
        check(&mut worst, "dice", t, &[p], |tape, v| tape.dice_loss(v[0], &target));
        let logits = uniform(s, &mut r).map(|v| 3.0 * v);
        check(&mut worst, "sigmoid+bce+dice", t, &[logits], |tape, v| {
            let p = tape.sigmoid(v[0]);
            let a = tape.bce_loss(p, &target)?;
            let b = tape.dice_loss(p, &target)?;
            tape.add(a, b)
        });
    }
    worst
}

pub fn snp_neurons() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(600 + t);
        let mut init = Init::new(t);
        let mut store = ParamStore::<f64>::new();
        let cin = r.random_range(1..=3);
        let spec = ConvSpec::new(cin, r.random_range(1..=3), (3, 3)).same_padding();
        let act = if t % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let snp = ConvSnp::new(&mut store, "snp", spec, act, &mut init).unwrap();
        let branches = (0..r.random_range(1..=3))
            .map(|i| {
                let d = i + 1;
                let v = ConvSpec::new(cin, cin, (3, 1)).dilation(d, 1).same_padding();
                let h = ConvSpec::new(cin, 2, (1, 3)).dilation(1, d).same_padding();
                Branch::new(
                    &mut store,
                    &format!("ms.branch{i}"),
                    &[("k31", v), ("k13", h)],
                    &mut init,
                )
                .unwrap()
            })
            .collect();
        let ms = MsConvSnp::new(&mut store, "ms", branches, 2, Activation::Relu).unwrap();
        randomize(&mut store, &mut r);
        let x = away_from_zero(Shape::new(1, cin, 5, 5), 1e-3, &mut r);
        check_block(&mut worst, "convsnp", t, &store, vec![x.clone()], |tape, p, v| {
            snp.forward(tape, p, v[0])
        });
        check_block(&mut worst, "msconvsnp", t, &store, vec![x], |tape, p, v| {
            ms.forward(tape, p, v[0])
        });
    }
    worst
}

pub fn init_and_sds_blocks() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(700 + t);
        let mut init = Init::new(t);
        let mut store = ParamStore::<f64>::new();
        let c = r.random_range(2..=3);
        let ib = InitBlock::new(&mut store, "init", c, &mut init).unwrap();
        randomize(&mut store, &mut r);
        let img = uniform(Shape::new(1, 3, 4, 4), &mut r);
        check_block(&mut worst, "initblock", t, &store, vec![img], |tape, p, v| {
            ib.forward(tape, p, v[0])
        });

        let mut store = ParamStore::<f64>::new();
        let sds = SdsBlock::new(&mut store, "sds", c, c + 3 + r.random_range(1..=3), &mut init).unwrap();
        randomize(&mut store, &mut r);
        let x = uniform(Shape::new(1, c, 4, 6), &mut r);
        let image = uniform(Shape::new(1, 3, 2, 3), &mut r);
        check_block(&mut worst, "sds", t, &store, vec![x, image], |tape, p, v| {
            sds.forward(tape, p, v[0], v[1])
        });
    }
    worst
}

pub fn slp_and_sfa_blocks() -> Worst {
    let mut worst = Worst::new(TOL);
    for t in 0..TRIALS {
        let mut r = rng(800 + t);
        let mut init = Init::new(t);
        let mut store = ParamStore::<f64>::new();
        let c = 2 * r.random_range(1..=2);
        let slp = SlpBlock::new(&mut store, "slp", c, &[0, 1, 2, 4], &mut init).unwrap();
        randomize(&mut store, &mut r);
        let x = away_from_zero(Shape::new(1, c, 5, 5), 1e-3, &mut r);
        check_block(&mut worst, "slp", t, &store, vec![x.clone()], |tape, p, v| {
            slp.forward(tape, p, v[0])
        });

        let mut store = ParamStore::<f64>::new();
        let up = [1, 2, 4][(t % 3) as usize];
        let sfa = SfaBlock::new(&mut store, "sfa", c, up, &mut init).unwrap();
        randomize(&mut store, &mut r);
        check_block(&mut worst, "sfa", t, &store, vec![x], |tape, p, v| {
            sfa.forward(tape, p, v[0])
        });
    }
    worst
}

pub type Case = (&'static str, fn() -> Worst);

/// Every op and block case, as run by the gradient-check tests.
pub const CASES: &[Case] = &[
    ("conv2d_all_operands", conv2d_all_operands),
    ("conv2d_im2col_path", conv2d_im2col_path),
    ("pointwise_ops", pointwise_ops),
    ("relu_away_from_kink", relu_away_from_kink),
    ("shape_ops", shape_ops),
    ("losses", losses),
    ("snp_neurons", snp_neurons),
    ("init_and_sds_blocks", init_and_sds_blocks),
    ("slp_and_sfa_blocks", slp_and_sfa_blocks),
];
