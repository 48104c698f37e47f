//! Shared fixtures for the codec benchmarks.

use nwf_core::dataio::synth::smooth_images;
use nwf_core::prior::{HighpassKind, Priors};
use nwf_core::{FlowConfig, ImageU8, Init, Model, Scheme, WaveletFlow};

/// A LeGall-initialized quadrant model at desk-scale width.
pub fn legall_model(channels: usize, hidden: usize) -> Model {
    let cfg = FlowConfig {
        hidden,
        n_hidden: 1,
        ..FlowConfig::new(Scheme::Quadrant, channels)
    };
    let flow = WaveletFlow::new(cfg, Init::LeGall { seed: 0 }).expect("valid flow");
    let priors = Priors::learnable(
        HighpassKind::Logistic,
        Scheme::Quadrant,
        channels,
        5,
        hidden,
        1,
    )
    .expect("valid priors");
    Model::new(flow, priors).expect("consistent model")
}

pub fn test_image(size: usize, channels: usize) -> ImageU8 {
    smooth_images(1, size, size, channels, 42).remove(0)
}
