//! A rank-1 3×3 kernel split into a vertical and a horizontal pass, at every
//! dilation the SLP branches use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slpnet::ops::conv2d;
use slpnet::{ConvSpec, Result, Shape, Tensor};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |s: Shape| Tensor::<f64>::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0));
    let x = random(Shape::new(1, 2, 48, 48));
    let u = random(Shape::new(1, 2, 3, 1));
    let v = random(Shape::new(1, 1, 1, 3));
    let k = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, a, b| u.at(0, c, a, 0) * v.at(0, 0, 0, b));

    println!("zeros  dilation  extent  max rel diff");
    for zeros in [0, 4, 8, 16] {
        let d = zeros + 1;
        let full = ConvSpec::new(2, 1, (3, 3)).dilation(d, d).same_padding();
        let vert = ConvSpec::new(2, 1, (3, 1)).dilation(d, 1).same_padding();
        let horz = ConvSpec::new(1, 1, (1, 3)).dilation(1, d).same_padding();
        let one = conv2d(&x, &k, None, &full)?;
        let two = conv2d(&conv2d(&x, &u, None, &vert)?, &v, None, &horz)?;
        println!(
            "{zeros:>5}  {d:>8}  {:>6}  {:.2e}",
            full.extent().0,
            one.max_rel_diff(&two, 1e-12)
        );
    }
    Ok(())
}
