//! Batch-1 forward throughput at a few resolutions.

use slpnet::bench::{bench_fps, BenchConfig};
use slpnet::{ModelConfig, Result, SlpNet};

fn main() -> Result<()> {
    for size in [64, 112, 224] {
        let net = SlpNet::<f32>::build(ModelConfig::default().with_input_size(size, size))?;
        let cfg = BenchConfig {
            size: (size, size),
            warmup: 3,
            iters: 20,
            ..BenchConfig::default()
        };
        print!("{}", bench_fps(&net, cfg)?.to_text());
    }
    Ok(())
}
