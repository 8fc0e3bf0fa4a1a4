//! Finite-difference check of an SFA block with respect to its input and
//! every parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slpnet::blocks::SfaBlock;
use slpnet::gradcheck::{grad_check, GradCheckConfig};
use slpnet::params::Init;
use slpnet::{Bound, ParamStore, Result, Shape, Tensor};

fn main() -> Result<()> {
    let mut store = ParamStore::<f64>::new();
    let sfa = SfaBlock::new(&mut store, "sfa", 4, 2, &mut Init::new(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(Shape::new(1, 4, 3, 3), |_, _, _, _| rng.random_range(-1.0..1.0));

    let mut inputs = vec![x];
    inputs.extend(store.entries().iter().map(|e| e.value.clone()));
    let report = grad_check(
        |tape, v| sfa.forward(tape, &Bound::from_vars(v[1..].to_vec()), v[0]),
        &inputs,
        GradCheckConfig::default(),
    )?;
    println!(
        "{} elements checked, max rel err {:.2e}",
        report.elements, report.max_rel_err
    );
    for (e, err) in std::iter::once("input")
        .chain(store.entries().iter().map(|e| e.name.as_str()))
        .zip(&report.per_input)
    {
        println!("  {e:<16} {err:.2e}");
    }
    Ok(())
}
