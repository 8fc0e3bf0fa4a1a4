//! Central finite-difference verification of tape gradients, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Seed for the projection that reduces a non-scalar output to a scalar.
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Gradients below it are
    /// compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            seed: 0,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over all checked elements of `|a − n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, DEFAULT_FLOOR)
}

pub fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` with respect to every tensor in
/// `inputs` against central differences.
///
/// `f` receives the tape and one variable per input. Its output is reduced to
/// a scalar: one-element outputs are used directly, larger outputs are
/// contracted with a fixed random weight tensor so every output position
/// contributes a distinct coefficient.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut projection = None;
    let mut evaluate = |tape: &mut Tape<f64>, values: &[Tensor<f64>]| -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(tape, &vars)?;
        let shape = tape.shape(out);
        if shape.numel() == 1 {
            return Ok((out, vars));
        }
        let weights = projection.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
        });
        Ok((tape.weighted_sum(out, weights)?, vars))
    };

    let mut tape = Tape::new();
    let (loss, vars) = evaluate(&mut tape, inputs)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let mut scalar_at = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::inference();
        let (out, _) = evaluate(&mut t, values)?;
        Ok(t.value(out).item())
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut elements = 0;
    let mut values = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..values[i].numel() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + config.step;
            let plus = scalar_at(&values)?;
            values[i].data_mut()[j] = orig - config.step;
            let minus = scalar_at(&values)?;
            values[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            worst = worst.max(rel_err_floor(grad.data()[j], numeric, config.floor));
            elements += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_err: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        elements,
    })
}
