//! The invertible wavelet flow: partitions, coupling sweeps and the
//! factor-out pyramid.
//!
//! One [`CouplingBlock`] is reused at every pyramid level, so a flow accepts
//! any power-of-two image size. In integer mode every network output is
//! rounded before it is added, which makes forward and inverse bit-exact.

mod coupling;
mod init;
mod net;

pub use coupling::{CouplingBlock, LATENT_MAX, LATENT_MIN};
pub use init::{Init, SPARE_UNIT_SCALE};
pub use net::ConvNet;

use crate::error::{Error, Result};
use crate::numerics::{Axis, Graph, Lattice, Tensor, Var};

use coupling::Stepper;

/// How each level splits its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// 1D signals stored as `[C,1,N]`: even samples are low-pass, odd are
    /// high-pass.
    Lifting1d,
    /// 1D lifting along rows, then along columns.
    Separable,
    /// Joint update of the four 2×2 cell quadrants A, B, C, D.
    Quadrant,
}

impl Scheme {
    pub fn code(self) -> u8 {
        match self {
            Scheme::Lifting1d => 0,
            Scheme::Separable => 1,
            Scheme::Quadrant => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Scheme::Lifting1d,
            1 => Scheme::Separable,
            2 => Scheme::Quadrant,
            _ => return Err(Error::Unsupported(format!("scheme id {code}"))),
        })
    }

    /// High-pass planes emitted per level.
    pub fn highpass_planes(self) -> usize {
        match self {
            Scheme::Lifting1d => 1,
            Scheme::Separable | Scheme::Quadrant => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Network outputs rounded to integers; exact inverse.
    Integer,
    /// No rounding; used for filter analysis.
    Continuous,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Integer => 0,
            Mode::Continuous => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Mode::Integer),
            1 => Ok(Mode::Continuous),
            _ => Err(Error::Unsupported(format!("mode id {code}"))),
        }
    }
}

/// Networks see `(v − offset) / scale`; their output is multiplied by
/// `scale` to return to pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub offset: f32,
    pub scale: f32,
}

impl Normalization {
    pub const PIXEL: Normalization = Normalization {
        offset: 128.0,
        scale: 255.0,
    };
    pub const IDENTITY: Normalization = Normalization {
        offset: 0.0,
        scale: 1.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub scheme: Scheme,
    pub mode: Mode,
    pub channels: usize,
    /// Coupling sweeps (quadrant) or predict/update pairs (lifting) per level.
    pub repeat: usize,
    pub hidden: usize,
    /// Layers between the first and last conv of each network.
    pub n_hidden: usize,
    pub normalization: Normalization,
}

impl FlowConfig {
    pub fn new(scheme: Scheme, channels: usize) -> Self {
        let normalization = match scheme {
            Scheme::Quadrant => Normalization::PIXEL,
            Scheme::Lifting1d | Scheme::Separable => Normalization::IDENTITY,
        };
        Self {
            scheme,
            mode: Mode::Integer,
            channels,
            repeat: 2,
            hidden: 64,
            n_hidden: 2,
            normalization,
        }
    }

    /// The 1D layout with `3 → 10 → 10 → 3` networks for three channels.
    pub fn appendix_a(channels: usize) -> Self {
        Self {
            repeat: 1,
            hidden: (2 * channels).max(10),
            n_hidden: 1,
            ..Self::new(Scheme::Lifting1d, channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.repeat == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "channels, repeat and hidden_channel must be positive".into(),
            ));
        }
        if !(self.normalization.scale.is_finite() && self.normalization.scale > 0.0)
            || !self.normalization.offset.is_finite()
        {
            return Err(Error::Config("normalization scale must be positive".into()));
        }
        Ok(())
    }
}

/// Factor-out results of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPyramid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Per level, finest first: `[B, C, D]` planes, or `[d]` for 1D flows.
    pub highpass: Vec<Vec<Tensor>>,
    /// The deepest low-pass block.
    pub final_block: Tensor,
}

impl LatentPyramid {
    pub fn levels(&self) -> usize {
        self.highpass.len()
    }

    pub fn element_count(&self) -> usize {
        self.final_block.len()
            + self
                .highpass
                .iter()
                .flatten()
                .map(Tensor::len)
                .sum::<usize>()
    }
}

/// Graph handles for a forward pass, used by training and analysis.
pub struct GraphPyramid {
    pub highpass: Vec<Vec<Var>>,
    /// Low-pass output of each level; the last entry is the final block.
    pub lowpass: Vec<Var>,
    pub final_block: Var,
}

const EVEN_COLS: Lattice = Lattice::new(0, 0, 1, 2);
const ODD_COLS: Lattice = Lattice::new(0, 1, 1, 2);
const EVEN_ROWS: Lattice = Lattice::new(0, 0, 2, 1);
const ODD_ROWS: Lattice = Lattice::new(1, 0, 2, 1);
/// Upper-left, upper-right, lower-left, lower-right of each 2×2 cell.
pub const QUADRANT_LATTICES: [Lattice; 4] = [
    Lattice::new(0, 0, 2, 2),
    Lattice::new(0, 1, 2, 2),
    Lattice::new(1, 0, 2, 2),
    Lattice::new(1, 1, 2, 2),
];

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFlow {
    pub config: FlowConfig,
    pub block: CouplingBlock,
}

/// `⌊x + ½⌋`.
pub fn round_nearest(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

impl WaveletFlow {
    pub fn new(config: FlowConfig, init: Init) -> Result<Self> {
        config.validate()?;
        let block = init::build_block(&config, init)?;
        Ok(Self { config, block })
    }

    /// Assembles a flow from stored networks, checking their layout.
    pub fn from_parts(config: FlowConfig, block: CouplingBlock) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let (count, cin) = match config.scheme {
            Scheme::Quadrant => (4 * config.repeat, 3 * c),
            Scheme::Lifting1d | Scheme::Separable => (2 * config.repeat, c),
        };
        if block.nets.len() != count {
            return Err(Error::contract(format!(
                "scheme needs {count} networks, block has {}",
                block.nets.len()
            )));
        }
        for net in &block.nets {
            net.validate()?;
            if net.in_channels() != cin || net.out_channels() != c {
                return Err(Error::contract(format!(
                    "network maps {} → {} channels, expected {cin} → {c}",
                    net.in_channels(),
                    net.out_channels()
                )));
            }
            let rank = if config.scheme == Scheme::Quadrant {
                2
            } else {
                1
            };
            if net.layers.iter().any(|l| l.rank != rank) {
                return Err(Error::contract("network rank does not match the scheme"));
            }
        }
        Ok(Self { config, block })
    }

    pub fn scheme(&self) -> Scheme {
        self.config.scheme
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    /// Copy of this flow with a different rounding mode.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut f = self.clone();
        f.config.mode = mode;
        f
    }

    /// Number of factor-out levels for an `h × w` input.
    pub fn iterations(&self, h: usize, w: usize) -> Result<usize> {
        let pow2 = |n: usize| n >= 2 && n.is_power_of_two();
        match self.config.scheme {
            Scheme::Lifting1d => {
                if h != 1 || !pow2(w) {
                    return Err(Error::Geometry(format!(
                        "1D flows need a [C,1,N] signal with N a power of two ≥ 2, got {h}x{w}"
                    )));
                }
                Ok(w.trailing_zeros() as usize - 1)
            }
            Scheme::Separable | Scheme::Quadrant => {
                if !pow2(h) || !pow2(w) {
                    return Err(Error::Geometry(format!(
                        "extents must be powers of two ≥ 2, got {h}x{w}"
                    )));
                }
                Ok(h.min(w).trailing_zeros() as usize - 1)
            }
        }
    }

    fn stepper(&self) -> Stepper<'_> {
        Stepper {
            cfg: &self.config,
            block: &self.block,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = x.chw()?;
        if c != self.config.channels {
            return Err(Error::contract(format!(
                "flow has {} channels, input has {c}",
                self.config.channels
            )));
        }
        if self.config.mode == Mode::Integer
            && x.data()
                .iter()
                .any(|&v| v.fract() != 0.0 || !(LATENT_MIN..=LATENT_MAX).contains(&v))
        {
            return Err(Error::contract(
                "integer-mode input must hold signed 16-bit integers",
            ));
        }
        Ok((c, h, w))
    }

    /// One level on the graph: returns the low-pass output and the high-pass
    /// planes.
    pub fn level_forward_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>)> {
        let st = self.stepper();
        match self.config.scheme {
            Scheme::Quadrant => {
                let mut q = [x; 4];
                for (slot, lat) in q.iter_mut().zip(QUADRANT_LATTICES) {
                    *slot = g.gather(x, lat)?;
                }
                let [a, b, c, d] = st.quadrant_forward(g, q)?;
                Ok((a, vec![b, c, d]))
            }
            Scheme::Lifting1d => {
                let lo = g.gather(x, EVEN_COLS)?;
                let hi = g.gather(x, ODD_COLS)?;
                let (s, d) = st.lift_forward(g, lo, hi, Axis::Width)?;
                Ok((s, vec![d]))
            }
            Scheme::Separable => {
                let lo = g.gather(x, EVEN_COLS)?;
                let hi = g.gather(x, ODD_COLS)?;
                let (l, h) = st.lift_forward(g, lo, hi, Axis::Width)?;
                let (le, lo_) = (g.gather(l, EVEN_ROWS)?, g.gather(l, ODD_ROWS)?);
                let (ll, lh) = st.lift_forward(g, le, lo_, Axis::Height)?;
                let (he, ho) = (g.gather(h, EVEN_ROWS)?, g.gather(h, ODD_ROWS)?);
                let (hl, hh) = st.lift_forward(g, he, ho, Axis::Height)?;
                Ok((ll, vec![hl, lh, hh]))
            }
        }
    }

    /// One level laid out on the input grid so that every output row
    /// interleaves low-pass (even columns) and high-pass (odd columns)
    /// results. Separable flows stop after the row pass; quadrant flows put
    /// A, B, C, D back at their cell positions.
    pub fn filter_stage_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, h, w) = self.check_input(g.value(x))?;
        match self.config.scheme {
            Scheme::Quadrant => {
                let (a, high) = self.level_forward_graph(g, x)?;
                let parts: Vec<(Var, Lattice)> = [a, high[0], high[1], high[2]]
                    .into_iter()
                    .zip(QUADRANT_LATTICES)
                    .collect();
                g.scatter(&parts, h, w)
            }
            Scheme::Lifting1d | Scheme::Separable => {
                let lo = g.gather(x, EVEN_COLS)?;
                let hi = g.gather(x, ODD_COLS)?;
                let (s, d) = self.stepper().lift_forward(g, lo, hi, Axis::Width)?;
                g.scatter(&[(s, EVEN_COLS), (d, ODD_COLS)], h, w)
            }
        }
    }

    /// Inverse of [`level_forward_graph`](Self::level_forward_graph).
    pub fn level_inverse_graph(&self, g: &mut Graph, low: Var, high: &[Var]) -> Result<Var> {
        let st = self.stepper();
        let want = self.config.scheme.highpass_planes();
        if high.len() != want {
            return Err(Error::contract(format!(
                "level needs {want} high-pass planes, got {}",
                high.len()
            )));
        }
        for &p in high {
            if g.shape(p) != g.shape(low) {
                return Err(Error::contract(format!(
                    "high-pass plane {:?} does not match low-pass {:?}",
                    g.shape(p),
                    g.shape(low)
                )));
            }
        }
        let (_, h, w) = g.value(low).chw()?;
        match self.config.scheme {
            Scheme::Quadrant => {
                let q = st.quadrant_inverse(g, [low, high[0], high[1], high[2]])?;
                let parts: Vec<(Var, Lattice)> = q.into_iter().zip(QUADRANT_LATTICES).collect();
                g.scatter(&parts, 2 * h, 2 * w)
            }
            Scheme::Lifting1d => {
                let (lo, hi) = st.lift_inverse(g, low, high[0], Axis::Width)?;
                g.scatter(&[(lo, EVEN_COLS), (hi, ODD_COLS)], h, 2 * w)
            }
            Scheme::Separable => {
                let (le, lo_) = st.lift_inverse(g, low, high[1], Axis::Height)?;
                let l = g.scatter(&[(le, EVEN_ROWS), (lo_, ODD_ROWS)], 2 * h, w)?;
                let (he, ho) = st.lift_inverse(g, high[0], high[2], Axis::Height)?;
                let hpass = g.scatter(&[(he, EVEN_ROWS), (ho, ODD_ROWS)], 2 * h, w)?;
                let (lo, hi) = st.lift_inverse(g, l, hpass, Axis::Width)?;
                g.scatter(&[(lo, EVEN_COLS), (hi, ODD_COLS)], 2 * h, 2 * w)
            }
        }
    }

    /// Full forward pass on the graph.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<GraphPyramid> {
        let (_, h, w) = self.check_input(g.value(x))?;
        let levels = self.iterations(h, w)?;
        let mut cur = x;
        let mut highpass = Vec::with_capacity(levels);
        let mut lowpass = Vec::with_capacity(levels);
        for _ in 0..levels {
            let (low, high) = self.level_forward_graph(g, cur)?;
            highpass.push(high);
            lowpass.push(low);
            cur = low;
        }
        Ok(GraphPyramid {
            highpass,
            lowpass,
            final_block: cur,
        })
    }

    /// Forward transform of a `[C,H,W]` image (1D flows: `[C,1,N]`).
    pub fn forward(&self, x: &Tensor) -> Result<LatentPyramid> {
        Ok(self.forward_trace(x)?.0)
    }

    /// Forward transform that also returns each level's low-pass output.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(LatentPyramid, Vec<Tensor>)> {
        let (c, h, w) = self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gp = self.forward_graph(&mut g, xv)?;
        g.check_finite()?;
        let highpass = gp
            .highpass
            .iter()
            .map(|lv| lv.iter().map(|&v| g.value(v).clone()).collect())
            .collect();
        let lowpass = gp.lowpass.iter().map(|&v| g.value(v).clone()).collect();
        Ok((
            LatentPyramid {
                channels: c,
                height: h,
                width: w,
                highpass,
                final_block: g.value(gp.final_block).clone(),
            },
            lowpass,
        ))
    }

    /// Inverts the levels in `highpass` (finest first) starting from the
    /// low-pass block of the deepest one.
    pub fn inverse_from(&self, low: &Tensor, highpass: &[Vec<Tensor>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut cur = g.constant(low.clone());
        for level in highpass.iter().rev() {
            let hv: Vec<Var> = level.iter().map(|t| g.constant(t.clone())).collect();
            cur = self.level_inverse_graph(&mut g, cur, &hv)?;
        }
        g.check_finite()?;
        Ok(g.value(cur).clone())
    }

    pub fn inverse(&self, p: &LatentPyramid) -> Result<Tensor> {
        if p.channels != self.config.channels {
            return Err(Error::contract(format!(
                "pyramid has {} channels, flow has {}",
                p.channels, self.config.channels
            )));
        }
        let levels = self.iterations(p.height, p.width)?;
        if p.highpass.len() != levels {
            return Err(Error::contract(format!(
                "{}x{} needs {levels} levels, pyramid has {}",
                p.height,
                p.width,
                p.highpass.len()
            )));
        }
        let x = self.inverse_from(&p.final_block, &p.highpass)?;
        if x.shape() != [p.channels, p.height, p.width] {
            return Err(Error::contract("pyramid planes do not match its geometry"));
        }
        Ok(x)
    }

    /// One level on plain tensors.
    pub fn forward_level(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (low, high) = self.level_forward_graph(&mut g, xv)?;
        g.check_finite()?;
        Ok((
            g.value(low).clone(),
            high.iter().map(|&v| g.value(v).clone()).collect(),
        ))
    }

    /// The four-quadrant coupling sweeps on plain tensors.
    pub fn coupling_forward_2d(&self, planes: [&Tensor; 4]) -> Result<[Tensor; 4]> {
        self.coupling_2d(planes, true)
    }

    pub fn coupling_inverse_2d(&self, planes: [&Tensor; 4]) -> Result<[Tensor; 4]> {
        self.coupling_2d(planes, false)
    }

    fn coupling_2d(&self, planes: [&Tensor; 4], forward: bool) -> Result<[Tensor; 4]> {
        if self.config.scheme != Scheme::Quadrant {
            return Err(Error::contract(
                "quadrant coupling needs the quadrant scheme",
            ));
        }
        for p in &planes[1..] {
            if p.shape() != planes[0].shape() {
                return Err(Error::contract("quadrant planes must share one shape"));
            }
        }
        let mut g = Graph::new();
        let q = planes.map(|p| g.constant(p.clone()));
        let st = self.stepper();
        let out = if forward {
            st.quadrant_forward(&mut g, q)?
        } else {
            st.quadrant_inverse(&mut g, q)?
        };
        g.check_finite()?;
        Ok(out.map(|v| g.value(v).clone()))
    }
}

#[cfg(test)]
mod tests;
