//! Parameter and FLOP tables of the default network, optionally at another
//! resolution: `cargo run --example complexity -- 112`.

use slpnet::bench::analyze;
use slpnet::{ModelConfig, Result, SlpNet};

fn main() -> Result<()> {
    let size = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(224);
    let net = SlpNet::<f32>::build(ModelConfig::default().with_input_size(size, size))?;
    print!("{}", analyze(&net, (size, size))?.to_text());
    Ok(())
}
