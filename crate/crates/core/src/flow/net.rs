//! Update networks `t(·)` used inside the coupling steps.

use crate::error::{Error, Result};
use crate::numerics::{Axis, ConvLayerSpec, Graph, Padding, Var};

/// A stack of conv layers with ReLU between them and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayerSpec>,
}

impl ConvNet {
    /// 3×3 → `n_hidden` × 1×1 → 3×3, all zero.
    pub fn glow(in_channels: usize, out_channels: usize, hidden: usize, n_hidden: usize) -> Self {
        let mut layers = vec![ConvLayerSpec::zeros(
            2,
            in_channels,
            hidden,
            3,
            Padding::ReplicateBoth,
        )];
        for _ in 0..n_hidden {
            layers.push(ConvLayerSpec::zeros(2, hidden, hidden, 1, Padding::None));
        }
        layers.push(ConvLayerSpec::zeros(
            2,
            hidden,
            out_channels,
            3,
            Padding::ReplicateBoth,
        ));
        Self { layers }
    }

    /// One-dimensional stack: a kernel-3 layer with one-sided padding
    /// `first`, then `n_hidden + 1` kernel-3 layers padded on both sides.
    pub fn lifting(channels: usize, hidden: usize, n_hidden: usize, first: Padding) -> Self {
        let mut layers = vec![ConvLayerSpec::zeros(1, channels, hidden, 3, first)];
        for _ in 0..n_hidden {
            layers.push(ConvLayerSpec::zeros(
                1,
                hidden,
                hidden,
                3,
                Padding::ReplicateBoth,
            ));
        }
        layers.push(ConvLayerSpec::zeros(
            1,
            hidden,
            channels,
            3,
            Padding::ReplicateBoth,
        ));
        Self { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("network without layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && self.layers[i - 1].out_channels != l.in_channels {
                return Err(Error::contract(format!(
                    "layer {i} expects {} channels, previous layer yields {}",
                    l.in_channels,
                    self.layers[i - 1].out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: Var, axis: Axis) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = g.conv(h, layer, axis)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}
