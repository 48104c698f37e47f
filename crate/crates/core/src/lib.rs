pub mod analysis;
pub mod codec;
pub mod coder;
pub mod dataio;
pub mod error;
pub mod flow;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod prior;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};

pub use codec::{ColorSpace, ContainerHeader};
pub use coder::FrequencyTable;
pub use dataio::ImageU8;
pub use flow::{FlowConfig, Init, LatentPyramid, Mode, Scheme, WaveletFlow};
pub use model::Model;
pub use numerics::Tensor;
pub use training::TrainConfig;
