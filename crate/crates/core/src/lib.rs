//! SLP-Net: an ultra-lightweight multi-scale skin lesion segmentation network
//! built from activation-before-weighting ("SNP-type") convolution neurons,
//! together with the small tensor engine, training loop, metrics and
//! complexity tooling needed to run it on a CPU.

pub mod bench;
pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod snp;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, SlpNet};
pub use ops::ConvSpec;
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Element, Shape, Tensor};
