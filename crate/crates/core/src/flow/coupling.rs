//! Additive coupling steps: quadrant sweeps and 1D predict/update pairs.

use crate::error::{Error, Result};
use crate::numerics::{Axis, Graph, Var};

use super::net::ConvNet;
use super::{FlowConfig, Mode};

/// The update networks shared by every pyramid level.
///
/// Quadrant flows hold four networks per sweep (one per updated quadrant);
/// lifting flows hold a predict and an update network per step.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub nets: Vec<ConvNet>,
}

impl CouplingBlock {
    pub fn parameter_count(&self) -> usize {
        self.nets.iter().map(ConvNet::parameter_count).sum()
    }
}

/// Inclusive range of an integer-mode latent.
pub const LATENT_MIN: f32 = i16::MIN as f32;
pub const LATENT_MAX: f32 = i16::MAX as f32;

pub(crate) struct Stepper<'a> {
    pub cfg: &'a FlowConfig,
    pub block: &'a CouplingBlock,
}

impl Stepper<'_> {
    /// `t(x)` in pixel units, rounded in integer mode.
    fn update(&self, g: &mut Graph, net: &ConvNet, input: Var, axis: Axis) -> Result<Var> {
        let norm = self.cfg.normalization;
        let x = g.normalize(input, norm.offset, norm.scale);
        let y = net.forward(g, x, axis)?;
        let y = g.scale(y, norm.scale);
        Ok(match self.cfg.mode {
            Mode::Integer => g.round_ste(y),
            Mode::Continuous => y,
        })
    }

    fn check_range(&self, g: &Graph, v: Var, site: impl FnOnce() -> String) -> Result<()> {
        if self.cfg.mode != Mode::Integer {
            return Ok(());
        }
        if let Some(&bad) = g
            .value(v)
            .data()
            .iter()
            .find(|&&x| !(LATENT_MIN..=LATENT_MAX).contains(&x))
        {
            return Err(Error::Overflow {
                value: bad,
                site: site(),
            });
        }
        Ok(())
    }

    /// One full set of quadrant sweeps, updating A, B, C, D in turn.
    pub fn quadrant_forward(&self, g: &mut Graph, mut q: [Var; 4]) -> Result<[Var; 4]> {
        for n in 0..self.cfg.repeat {
            for k in 0..4 {
                let others = others(&q, k);
                let input = g.concat(&others)?;
                let t = self.update(g, &self.block.nets[4 * n + k], input, Axis::Width)?;
                q[k] = g.add(q[k], t)?;
                self.check_range(g, q[k], || format!("sweep {n}, quadrant {}", QUADRANTS[k]))?;
            }
        }
        Ok(q)
    }

    pub fn quadrant_inverse(&self, g: &mut Graph, mut q: [Var; 4]) -> Result<[Var; 4]> {
        for n in (0..self.cfg.repeat).rev() {
            for k in (0..4).rev() {
                let others = others(&q, k);
                let input = g.concat(&others)?;
                let t = self.update(g, &self.block.nets[4 * n + k], input, Axis::Width)?;
                q[k] = g.sub(q[k], t)?;
                self.check_range(g, q[k], || {
                    format!("inverse sweep {n}, quadrant {}", QUADRANTS[k])
                })?;
            }
        }
        Ok(q)
    }

    /// Predict/update pairs along `axis`: `hi −= t(lo)`, then `lo += t(hi)`.
    /// Returns `(low, high)`.
    pub fn lift_forward(
        &self,
        g: &mut Graph,
        mut lo: Var,
        mut hi: Var,
        axis: Axis,
    ) -> Result<(Var, Var)> {
        for n in 0..self.cfg.repeat {
            let p = self.update(g, &self.block.nets[2 * n], lo, axis)?;
            hi = g.sub(hi, p)?;
            self.check_range(g, hi, || format!("lifting step {n}, predict"))?;
            let u = self.update(g, &self.block.nets[2 * n + 1], hi, axis)?;
            lo = g.add(lo, u)?;
            self.check_range(g, lo, || format!("lifting step {n}, update"))?;
        }
        Ok((lo, hi))
    }

    pub fn lift_inverse(
        &self,
        g: &mut Graph,
        mut lo: Var,
        mut hi: Var,
        axis: Axis,
    ) -> Result<(Var, Var)> {
        for n in (0..self.cfg.repeat).rev() {
            let u = self.update(g, &self.block.nets[2 * n + 1], hi, axis)?;
            lo = g.sub(lo, u)?;
            self.check_range(g, lo, || format!("inverse lifting step {n}, update"))?;
            let p = self.update(g, &self.block.nets[2 * n], lo, axis)?;
            hi = g.add(hi, p)?;
            self.check_range(g, hi, || format!("inverse lifting step {n}, predict"))?;
        }
        Ok((lo, hi))
    }
}

const QUADRANTS: [char; 4] = ['A', 'B', 'C', 'D'];

fn others(q: &[Var; 4], k: usize) -> [Var; 3] {
    let mut out = [q[0]; 3];
    let mut i = 0;
    for (j, &v) in q.iter().enumerate() {
        if j != k {
            out[i] = v;
            i += 1;
        }
    }
    out
}
