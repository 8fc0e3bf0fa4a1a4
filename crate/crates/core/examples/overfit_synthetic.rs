//! Overfits a handful of synthetic disc images and reports train-set metrics.
//! Arguments: `[size] [epochs]`, default 64 px for 60 epochs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slpnet::data::{Dataset, SamplePair};
use slpnet::metrics::Aggregation;
use slpnet::synth;
use slpnet::train::{evaluate, train, TrainConfig};
use slpnet::{ModelConfig, Result, Shape, SlpNet, Tensor};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let size = args.next().flatten().unwrap_or(64);
    let epochs = args.next().flatten().unwrap_or(60);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = (0..8)
        .map(|i| {
            let s = synth::sample(size, &mut rng);
            let raw = s.image.as_raw();
            SamplePair {
                id: format!("disc{i}"),
                image: Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
                    raw[(y * size + x) * 3 + c] as f32 / 255.0
                }),
                mask: Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| {
                    f32::from(u8::from(s.mask.get_pixel(x as u32, y as u32).0[0] > 127))
                }),
            }
        })
        .collect();
    let data = Dataset::from_samples("train", samples)?;

    let mut model = SlpNet::<f32>::build(ModelConfig::default().with_input_size(size, size))?;
    let cfg = TrainConfig {
        epochs,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg, |e| {
        if e.epoch == 1 || e.epoch % 10 == 0 {
            println!("epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss);
        }
    })?;
    print!("{}", evaluate(&model, &data, Aggregation::PerImage, 8)?.to_text());
    Ok(())
}
