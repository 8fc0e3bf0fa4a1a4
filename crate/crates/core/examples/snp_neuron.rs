//! Activation-before-weighting versus the conventional order on a two-pixel
//! input, then a two-branch neuron sharing one bias.

use slpnet::params::Init;
use slpnet::snp::{Activation, Branch, ConvSnp, MsConvSnp};
use slpnet::{ConvSpec, ParamStore, Result, Shape, Tape, Tensor};

fn main() -> Result<()> {
    let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![-1.0, 3.0])?;
    let spec = ConvSpec::new(2, 1, (1, 1));

    let mut store = ParamStore::<f64>::new();
    let snp = ConvSnp::new(&mut store, "snp", spec, Activation::Relu, &mut Init::new(0))?;
    *store.get_mut(snp.conv.weight) = Tensor::from_vec(spec.kernel_shape(), vec![1.0, 2.0])?;
    *store.get_mut(snp.conv.bias) = Tensor::scalar(0.5);

    let mut tape = Tape::inference();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = snp.forward(&mut tape, &p, xv)?;
    println!("W·relu(X) + b   = {}", tape.value(y).item());
    println!("relu(W·X + b)   = {}", (-1.0f64 + 2.0 * 3.0 + 0.5).max(0.0));

    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(0);
    let b1 = Branch::new(&mut store, "ms.b1", &[("w", spec)], &mut init)?;
    let b2 = Branch::new(&mut store, "ms.b2", &[("w", spec)], &mut init)?;
    *store.get_mut(b1.stages[0].1) = Tensor::from_vec(spec.kernel_shape(), vec![1.0, 1.0])?;
    *store.get_mut(b2.stages[0].1) = Tensor::from_vec(spec.kernel_shape(), vec![2.0, 0.0])?;
    let ms = MsConvSnp::new(&mut store, "ms", vec![b1, b2], 1, Activation::Relu)?;
    *store.get_mut(ms.bias) = Tensor::scalar(1.0);

    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x);
    let y = ms.forward(&mut tape, &p, xv)?;
    println!("two branches, one bias = {}", tape.value(y).item());
    tape.backward(y)?;
    store.collect_grads(&tape, &p);
    for e in store.entries() {
        println!("  d/d{:<8} = {:?}", e.name, e.grad.as_ref().map(|g| g.data().to_vec()));
    }
    Ok(())
}
