//! One SLP block at the deepest stage width: shape, parameter split and the
//! receptive field of each branch.

use slpnet::blocks::SlpBlock;
use slpnet::params::Init;
use slpnet::{ParamStore, Result, Shape, Tape, Tensor};

fn main() -> Result<()> {
    let mut store = ParamStore::<f32>::new();
    let slp = SlpBlock::new(&mut store, "slp3", 128, &[0, 4, 8, 16], &mut Init::new(0))?;

    for (i, b) in slp.dw.branches.iter().enumerate() {
        let (v, _) = b.stages[0].0.extent();
        println!("branch {i}: {} weights, vertical extent {v} px", b.param_count());
    }
    println!("pointwise: {} weights + bias", slp.pw.conv.param_count());
    println!("total: {} parameters", store.count());

    let x = Tensor::full(Shape::new(1, 128, 28, 28), 0.1);
    let mut tape = Tape::inference();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let y = slp.forward(&mut tape, &p, xv)?;
    println!("input (1,128,28,28) -> output {}", tape.shape(y));
    Ok(())
}
