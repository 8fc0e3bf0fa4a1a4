//! Saves a model, reloads it, and confirms identical predictions.

use slpnet::checkpoint;
use slpnet::{ModelConfig, Shape, SlpNet, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = SlpNet::<f32>::build(ModelConfig::default().with_seed(3))?;
    let path = std::env::temp_dir().join("slpnet_example.ckpt");
    checkpoint::save(&net, &path)?;
    let back: SlpNet<f32> = checkpoint::load(&path, Some(net.config()))?;
    let x = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, c, y, x| ((c + y + x) % 7) as f32 / 7.0);
    let same = net.predict(&x)?.data() == back.predict(&x)?.data();
    let bytes = std::fs::metadata(&path)?.len();
    println!("{} ({bytes} bytes): predictions identical = {same}", path.display());
    std::fs::remove_file(&path)?;
    Ok(())
}
