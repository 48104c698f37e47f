//! Network initializers: zero, random, and the Haar / LeGall lifting wavelets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ConvLayerSpec, Padding, Tensor};

use super::coupling::CouplingBlock;
use super::net::ConvNet;
use super::{FlowConfig, Normalization, Scheme};

/// Scale of the random weights given to hidden units a wavelet initializer
/// does not use.
pub const SPARE_UNIT_SCALE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Every weight and bias zero: the flow is a pure reshuffle.
    Zero,
    /// Every weight and bias uniform in `(−scale, scale)`.
    Random {
        seed: u64,
        scale: f32,
    },
    Haar {
        seed: u64,
    },
    LeGall {
        seed: u64,
    },
}

impl Init {
    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "zero" => Init::Zero,
            "random" => Init::Random { seed, scale: 0.1 },
            "haar" => Init::Haar { seed },
            "legall" => Init::LeGall { seed },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown initializer {other:?} (expected zero, random, haar or legall)"
                )))
            }
        })
    }
}

#[derive(Clone, Copy)]
enum Wavelet {
    Haar,
    LeGall,
}

impl Wavelet {
    /// Predict and update kernels over taps at offsets −1, 0, +1.
    fn kernels(self) -> ([f32; 3], [f32; 3]) {
        match self {
            Wavelet::Haar => ([0.0, 1.0, 0.0], [0.0, 0.5, 0.0]),
            Wavelet::LeGall => ([0.0, 0.5, 0.5], [0.25, 0.25, 0.0]),
        }
    }

    /// First-layer taps for the one-sided padded 1D layers: predict reads
    /// `o_k, o_{k+1}, o_{k+2}`, update reads `d_{k−2}, d_{k−1}, d_k`.
    fn one_sided(self) -> ([f32; 3], [f32; 3]) {
        match self {
            Wavelet::Haar => ([1.0, 0.0, 0.0], [0.0, 0.0, 0.5]),
            Wavelet::LeGall => ([0.5, 0.5, 0.0], [0.0, 0.25, 0.25]),
        }
    }
}

pub(crate) fn build_block(cfg: &FlowConfig, init: Init) -> Result<CouplingBlock> {
    let c = cfg.channels;
    let mut nets: Vec<ConvNet> = match cfg.scheme {
        Scheme::Quadrant => (0..4 * cfg.repeat)
            .map(|_| ConvNet::glow(3 * c, c, cfg.hidden, cfg.n_hidden))
            .collect(),
        Scheme::Lifting1d | Scheme::Separable => (0..2 * cfg.repeat)
            .map(|i| {
                let first = if i % 2 == 0 {
                    Padding::ReplicateRight
                } else {
                    Padding::ReplicateLeft
                };
                ConvNet::lifting(c, cfg.hidden, cfg.n_hidden, first)
            })
            .collect(),
    };
    match init {
        Init::Zero => {}
        Init::Random { seed, scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for net in &mut nets {
                for layer in &mut net.layers {
                    fill_uniform(&mut layer.weight, &mut rng, scale);
                    fill_uniform(&mut layer.bias, &mut rng, scale);
                }
            }
        }
        Init::Haar { seed } => init_wavelet(cfg, &mut nets, Wavelet::Haar, seed)?,
        Init::LeGall { seed } => init_wavelet(cfg, &mut nets, Wavelet::LeGall, seed)?,
    }
    Ok(CouplingBlock { nets })
}

fn fill_uniform(t: &mut Tensor, rng: &mut ChaCha8Rng, scale: f32) {
    for v in t.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
}

fn init_wavelet(cfg: &FlowConfig, nets: &mut [ConvNet], wavelet: Wavelet, seed: u64) -> Result<()> {
    let c = cfg.channels;
    if cfg.hidden < 2 * c {
        return Err(Error::Config(format!(
            "wavelet initialization needs hidden_channel ≥ {} for {c} channels",
            2 * c
        )));
    }
    match cfg.scheme {
        Scheme::Lifting1d | Scheme::Separable => {
            let (predict, update) = wavelet.one_sided();
            let stencil = |taps: [f32; 3]| vec![(0usize, Stencil::Row(taps))];
            // The lifting step subtracts the predict output, so both nets are positive.
            sign_split(&mut nets[0], c, &stencil(predict), 1.0, cfg.normalization);
            sign_split(&mut nets[1], c, &stencil(update), 1.0, cfg.normalization);
            Ok(())
        }
        Scheme::Quadrant => {
            if cfg.repeat < 2 {
                return Err(Error::Config(
                    "2D wavelet initialization needs repeat ≥ 2".into(),
                ));
            }
            let (p, u) = wavelet.kernels();
            let id = [0.0, 1.0, 0.0];
            let ph = outer(id, p);
            let pv = outer(p, id);
            let uh = outer(id, u);
            let uv = outer(u, id);
            // Slot indices refer to the concatenated inputs, which list the
            // other three quadrants in A, B, C, D order.
            let plans: [(f32, Vec<(usize, Kernel)>); 8] = [
                (1.0, vec![]),
                (-1.0, vec![(0, ph)]),
                (-1.0, vec![(0, pv)]),
                (-1.0, vec![(0, outer(p, p)), (1, pv), (2, ph)]),
                (1.0, vec![(0, uh), (1, uv), (2, outer(u, u))]),
                (1.0, vec![(2, uv)]),
                (1.0, vec![(2, uh)]),
                (1.0, vec![]),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (i, net) in nets.iter_mut().enumerate() {
                if let Some((sign, plan)) = plans.get(i) {
                    let plan: Vec<(usize, Stencil)> =
                        plan.iter().map(|&(s, k)| (s, Stencil::Square(k))).collect();
                    sign_split(net, c, &plan, *sign, cfg.normalization);
                }
                randomize_spare_units(net, 2 * c, &mut rng);
            }
            Ok(())
        }
    }
}

type Kernel = [[f32; 3]; 3];

enum Stencil {
    Row([f32; 3]),
    Square(Kernel),
}

impl Stencil {
    fn taps(&self) -> Vec<f32> {
        match self {
            Stencil::Row(r) => r.to_vec(),
            Stencil::Square(s) => s.iter().flatten().copied().collect(),
        }
    }
}

fn outer(v: [f32; 3], h: [f32; 3]) -> [[f32; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for (ky, row) in k.iter_mut().enumerate() {
        for (kx, w) in row.iter_mut().enumerate() {
            *w = v[ky] * h[kx];
        }
    }
    k
}

/// Makes `net` compute `sign · Σ_slots stencil ⋆ input_slot` per channel in
/// pixel units. Hidden unit `ch` carries the positive part, unit `c + ch` the
/// negative part; later layers copy them through and the last layer joins
/// them. The first-layer bias undoes the input normalization offset.
fn sign_split(
    net: &mut ConvNet,
    c: usize,
    plan: &[(usize, Stencil)],
    sign: f32,
    norm: Normalization,
) {
    let n = net.layers.len();
    let first = &mut net.layers[0];
    let taps_per = first.kernel_size.pow(first.rank as u32);
    let in_ch = first.in_channels;
    for ch in 0..c {
        let mut total = 0.0f32;
        for (slot, stencil) in plan {
            for (t, w) in stencil.taps().into_iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let ic = slot * c + ch;
                let wv = sign * w;
                first.weight.data_mut()[(ch * in_ch + ic) * taps_per + t] = wv;
                first.weight.data_mut()[((c + ch) * in_ch + ic) * taps_per + t] = -wv;
                total += wv;
            }
        }
        let b = norm.offset * total / norm.scale;
        first.bias.data_mut()[ch] = b;
        first.bias.data_mut()[c + ch] = -b;
    }
    for layer in &mut net.layers[1..n - 1] {
        copy_through(layer, 2 * c);
    }
    let last = &mut net.layers[n - 1];
    let taps = last.kernel_size.pow(last.rank as u32);
    let centre = taps / 2;
    let hidden = last.in_channels;
    for ch in 0..c {
        last.weight.data_mut()[(ch * hidden + ch) * taps + centre] = 1.0;
        last.weight.data_mut()[(ch * hidden + c + ch) * taps + centre] = -1.0;
    }
}

fn copy_through(layer: &mut ConvLayerSpec, units: usize) {
    let taps = layer.kernel_size.pow(layer.rank as u32);
    let centre = taps / 2;
    let cin = layer.in_channels;
    for u in 0..units {
        layer.weight.data_mut()[(u * cin + u) * taps + centre] = 1.0;
    }
}

/// Random weights into hidden units `used..`; the last layer never reads
/// them, so the network output is unchanged while gradients still reach them.
fn randomize_spare_units(net: &mut ConvNet, used: usize, rng: &mut ChaCha8Rng) {
    let n = net.layers.len();
    for layer in &mut net.layers[..n - 1] {
        let per_out = layer.in_channels * layer.kernel_size.pow(layer.rank as u32);
        for u in used..layer.out_channels {
            for w in &mut layer.weight.data_mut()[u * per_out..(u + 1) * per_out] {
                *w = rng.gen_range(-SPARE_UNIT_SCALE..SPARE_UNIT_SCALE);
            }
        }
    }
}
