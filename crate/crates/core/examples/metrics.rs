//! Confusion counts and the five overlap metrics, in both aggregation modes.

use slpnet::metrics::{binarize, confusion, Aggregation, MetricReport};
use slpnet::{Result, Shape, Tensor};

fn main() -> Result<()> {
    let shape = Shape::new(1, 1, 4, 4);
    let gt = Tensor::from_fn(shape, |_, _, y, x| f32::from(u8::from(y < 2 && x < 3)));
    let probs = Tensor::from_fn(shape, |_, _, y, x| {
        if y < 2 && x < 2 {
            0.9
        } else if y == 3 {
            0.6
        } else {
            0.5
        }
    });
    let pred = binarize(&probs);
    let a = confusion(&pred, &gt)?;
    // an image with no lesion that the model also leaves empty
    let empty = Tensor::<f32>::zeros(shape);
    let b = confusion(&empty, &empty)?;
    println!("image a: {a:?}");
    println!("image b: {b:?}");
    for agg in [Aggregation::PerImage, Aggregation::Global] {
        print!("{}", MetricReport::aggregate(&[a, b], agg).to_text());
    }
    Ok(())
}
