//! Priors over latent coefficients.
//!
//! High-pass planes use a uniform, a per-plane logistic, or a logistic whose
//! parameters come from a network applied to the same level's low-pass
//! block. The final block uses a uniform or a per-channel logistic mixture.
//! Everything the coder sees is first snapped to a fixed grid so encoder and
//! decoder build identical frequency tables.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{ConvNet, GraphPyramid, LatentPyramid, Normalization, Scheme};
use crate::numerics::logistic::{
    clamp_log_scale, discrete_logistic, discrete_logistic_mixture, log_softmax, LOG_SCALE_MAX,
    LOG_SCALE_MIN,
};
use crate::numerics::{Axis, Graph, Tensor, Var};

/// `mu` grid step is `1/MU_STEPS` pixel.
pub const MU_STEPS: f64 = 64.0;
pub const LOG_SCALE_STEPS: f64 = 32.0;
pub const LOGIT_STEPS: f64 = 64.0;
/// Location parameters are clamped to this magnitude before quantization.
pub const MU_LIMIT: f64 = 1_048_576.0;
/// Support of the uniform prior.
pub const UNIFORM_LO: i64 = 0;
pub const UNIFORM_HI: i64 = 255;

pub const DEFAULT_HIGHPASS_LOG_SCALE: f32 = 1.0;

fn snap(x: f64, steps: f64) -> i32 {
    ((x * steps) + 0.5).floor() as i32
}

/// A logistic with parameters on the coding grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QLogistic {
    /// Location in units of `1/MU_STEPS`.
    pub mu_q: i32,
    /// Log-scale in units of `1/LOG_SCALE_STEPS`.
    pub log_s_q: i32,
}

impl QLogistic {
    pub fn new(mu: f64, log_s: f64) -> Self {
        let mu = if mu.is_finite() {
            mu.clamp(-MU_LIMIT, MU_LIMIT)
        } else {
            0.0
        };
        let log_s = if log_s.is_finite() {
            clamp_log_scale(log_s)
        } else {
            LOG_SCALE_MAX
        };
        Self {
            mu_q: snap(mu, MU_STEPS),
            log_s_q: snap(log_s, LOG_SCALE_STEPS),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu_q as f64 / MU_STEPS
    }

    pub fn log_s(&self) -> f64 {
        self.log_s_q as f64 / LOG_SCALE_STEPS
    }
}

/// Quantizes a location to the coding grid.
pub fn quantize_mu(mu: f64) -> f64 {
    QLogistic::new(mu, 0.0).mu()
}

/// Clamps and quantizes a log-scale to the coding grid.
pub fn quantize_log_s(log_s: f64) -> f64 {
    QLogistic::new(0.0, log_s).log_s()
}

pub fn quantize_logit(logit: f64) -> f64 {
    snap(logit, LOGIT_STEPS) as f64 / LOGIT_STEPS
}

/// Distribution of one coded symbol.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SymbolModel {
    /// Uniform over `UNIFORM_LO..=UNIFORM_HI`.
    Uniform,
    Logistic(QLogistic),
    /// Components with logits in units of `1/LOGIT_STEPS`.
    Mixture(Vec<(QLogistic, i32)>),
}

impl SymbolModel {
    pub fn mixture(mu: &[f64], log_s: &[f64], logits: &[f64]) -> Self {
        SymbolModel::Mixture(
            (0..mu.len())
                .map(|k| {
                    (
                        QLogistic::new(mu[k], log_s[k]),
                        snap(logits[k], LOGIT_STEPS),
                    )
                })
                .collect(),
        )
    }

    fn unpack(parts: &[(QLogistic, i32)]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            parts.iter().map(|(q, _)| q.mu()).collect(),
            parts.iter().map(|(q, _)| q.log_s()).collect(),
            parts.iter().map(|&(_, l)| l as f64 / LOGIT_STEPS).collect(),
        )
    }

    /// Natural-log probability of `z`; tails fold into `support` endpoints
    /// when given, otherwise the support is unbounded.
    pub fn log_prob(&self, z: i64, support: Option<(i64, i64)>) -> f64 {
        let (lo, hi) = match support {
            Some((lo, hi)) => (Some(lo as f64), Some(hi as f64)),
            None => (None, None),
        };
        match self {
            SymbolModel::Uniform => {
                if (UNIFORM_LO..=UNIFORM_HI).contains(&z) {
                    -((UNIFORM_HI - UNIFORM_LO + 1) as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            SymbolModel::Logistic(q) => {
                discrete_logistic(z as f64, q.mu(), q.log_s(), lo, hi).log_p
            }
            SymbolModel::Mixture(parts) => {
                let (m, l, g) = Self::unpack(parts);
                discrete_logistic_mixture(z as f64, &m, &l, &g, lo, hi).log_p
            }
        }
    }

    /// Probabilities over `lo..=hi` with tails folded into the endpoints.
    pub fn pmf(&self, lo: i64, hi: i64) -> Vec<f64> {
        (lo..=hi)
            .map(|z| self.log_prob(z, Some((lo, hi))).exp())
            .collect()
    }

    /// Inverse-CDF draw, clamped to `lo..=hi`. `temperature` scales the
    /// logistic scale; zero returns the rounded location.
    pub fn sample(&self, rng: &mut impl Rng, temperature: f64, lo: i64, hi: i64) -> i64 {
        match self {
            SymbolModel::Uniform => {
                let a = lo.max(UNIFORM_LO);
                rng.gen_range(a..=hi.min(UNIFORM_HI).max(a))
            }
            SymbolModel::Logistic(q) => {
                dl_sample(q.mu(), q.log_s() + temperature.ln(), lo, hi, rng)
            }
            SymbolModel::Mixture(parts) => {
                let (m, l, g) = Self::unpack(parts);
                let logp = log_softmax(&g);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut k = parts.len() - 1;
                for (j, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        k = j;
                        break;
                    }
                }
                dl_sample(m[k], l[k] + temperature.ln(), lo, hi, rng)
            }
        }
    }
}

/// Log-pmf of a discrete logistic on `lo..=hi` with folded tails.
pub fn dl_log_pmf(z: i64, mu: f64, log_s: f64, lo: i64, hi: i64) -> Result<f64> {
    if !(lo..=hi).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "symbol {z} outside support {lo}..={hi}"
        )));
    }
    Ok(discrete_logistic(z as f64, mu, log_s, Some(lo as f64), Some(hi as f64)).log_p)
}

/// Log-pmf of a logistic mixture on `lo..=hi` with folded tails.
pub fn mixture_log_pmf(
    z: i64,
    mu: &[f64],
    log_s: &[f64],
    logits: &[f64],
    lo: i64,
    hi: i64,
) -> Result<f64> {
    if !(lo..=hi).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "symbol {z} outside support {lo}..={hi}"
        )));
    }
    if mu.is_empty() || mu.len() != log_s.len() || mu.len() != logits.len() {
        return Err(Error::contract(
            "mixture parameter lengths differ or are empty",
        ));
    }
    Ok(discrete_logistic_mixture(
        z as f64,
        mu,
        log_s,
        logits,
        Some(lo as f64),
        Some(hi as f64),
    )
    .log_p)
}

/// Inverse-CDF sample of a discrete logistic, clamped to `lo..=hi`.
/// A log-scale of −∞ (zero temperature) returns `⌊mu⌉`.
pub fn dl_sample(mu: f64, log_s: f64, lo: i64, hi: i64, rng: &mut impl Rng) -> i64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let x = if log_s == f64::NEG_INFINITY {
        mu
    } else {
        mu + log_s.exp() * (u.ln() - (1.0 - u).ln())
    };
    let z = (x + 0.5).floor();
    (z.clamp(lo as f64, hi as f64)) as i64
}

/// Network from a low-pass block to per-coefficient `(mu, log_s)` for the
/// high-pass planes of the same level.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorNet {
    pub net: ConvNet,
    pub channels: usize,
    pub planes: usize,
}

/// Per-coefficient parameters for one level: `[planes·C, h, w]` each.
pub struct PlaneParams {
    pub mu: Tensor,
    pub log_s: Tensor,
}

impl PriorNet {
    pub fn new(channels: usize, planes: usize, hidden: usize, n_hidden: usize) -> Self {
        let mut net = ConvNet::glow(channels, 2 * planes * channels, hidden, n_hidden);
        let last = net.layers.last_mut().expect("glow nets have layers");
        for b in &mut last.bias.data_mut()[planes * channels..] {
            *b = DEFAULT_HIGHPASS_LOG_SCALE;
        }
        Self {
            net,
            channels,
            planes,
        }
    }

    /// `(mu, log_s)` nodes, each `[planes·C, h, w]`.
    pub fn forward_graph(&self, g: &mut Graph, low: Var) -> Result<(Var, Var)> {
        let n = Normalization::PIXEL;
        let x = g.normalize(low, n.offset, n.scale);
        let raw = self.net.forward(g, x, Axis::Width)?;
        let half = self.planes * self.channels;
        let mu = g.channels(raw, 0, half)?;
        let mu = g.scale(mu, n.scale);
        let log_s = g.channels(raw, half, half)?;
        Ok((mu, log_s))
    }

    pub fn eval(&self, low: &Tensor) -> Result<PlaneParams> {
        let mut g = Graph::new();
        let a = g.constant(low.clone());
        let (mu, log_s) = self.forward_graph(&mut g, a)?;
        g.check_finite()?;
        Ok(PlaneParams {
            mu: g.value(mu).clone(),
            log_s: g.value(log_s).clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HighpassPrior {
    Uniform,
    /// One logistic per (plane, channel), shared across levels; each tensor
    /// is `[planes·C]`.
    Logistic {
        mu: Tensor,
        log_s: Tensor,
    },
    Conditional(PriorNet),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FinalPrior {
    Uniform,
    /// Per-channel mixture; each tensor is `[C, K]`.
    Mixture {
        mu: Tensor,
        log_s: Tensor,
        logits: Tensor,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HighpassKind {
    Uniform,
    Logistic,
    Conditional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Priors {
    pub highpass: HighpassPrior,
    pub final_block: FinalPrior,
}

impl Priors {
    pub fn uniform() -> Self {
        Self {
            highpass: HighpassPrior::Uniform,
            final_block: FinalPrior::Uniform,
        }
    }

    /// Learnable priors with initial parameters: zero-mean high-pass
    /// logistics and a mixture whose components spread over `0..255`.
    pub fn learnable(
        kind: HighpassKind,
        scheme: Scheme,
        channels: usize,
        k: usize,
        hidden: usize,
        n_hidden: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("mixture needs K ≥ 1".into()));
        }
        let planes = scheme.highpass_planes();
        let highpass = match kind {
            HighpassKind::Uniform => HighpassPrior::Uniform,
            HighpassKind::Logistic => HighpassPrior::Logistic {
                mu: Tensor::zeros(&[planes * channels]),
                log_s: Tensor::full(&[planes * channels], DEFAULT_HIGHPASS_LOG_SCALE),
            },
            HighpassKind::Conditional => {
                if scheme == Scheme::Lifting1d {
                    return Err(Error::Config("conditional priors need a 2D scheme".into()));
                }
                HighpassPrior::Conditional(PriorNet::new(channels, planes, hidden, n_hidden))
            }
        };
        let mut mu = Vec::with_capacity(channels * k);
        for _ in 0..channels {
            mu.extend((0..k).map(|j| 255.0 * (j as f32 + 0.5) / k as f32));
        }
        let final_block = FinalPrior::Mixture {
            mu: Tensor::new(vec![channels, k], mu)?,
            log_s: Tensor::full(&[channels, k], (255.0 / (2.0 * k as f32)).ln()),
            logits: Tensor::zeros(&[channels, k]),
        };
        Ok(Self {
            highpass,
            final_block,
        })
    }

    pub fn highpass_kind(&self) -> HighpassKind {
        match self.highpass {
            HighpassPrior::Uniform => HighpassKind::Uniform,
            HighpassPrior::Logistic { .. } => HighpassKind::Logistic,
            HighpassPrior::Conditional(_) => HighpassKind::Conditional,
        }
    }

    /// Checks parameter shapes against a flow's scheme and channel count.
    pub fn validate(&self, scheme: Scheme, channels: usize) -> Result<()> {
        let planes = scheme.highpass_planes();
        match &self.highpass {
            HighpassPrior::Uniform => {}
            HighpassPrior::Logistic { mu, log_s } => {
                if mu.shape() != [planes * channels] || log_s.shape() != mu.shape() {
                    return Err(Error::contract(
                        "high-pass logistic parameters have the wrong shape",
                    ));
                }
            }
            HighpassPrior::Conditional(p) => {
                p.net.validate()?;
                if scheme == Scheme::Lifting1d
                    || p.channels != channels
                    || p.planes != planes
                    || p.net.in_channels() != channels
                    || p.net.out_channels() != 2 * planes * channels
                {
                    return Err(Error::contract("prior network does not fit the flow"));
                }
            }
        }
        if let FinalPrior::Mixture { mu, log_s, logits } = &self.final_block {
            if mu.shape().len() != 2 || mu.shape()[0] != channels || mu.shape()[1] == 0 {
                return Err(Error::contract("mixture parameters must be [C, K]"));
            }
            if log_s.shape() != mu.shape() || logits.shape() != mu.shape() {
                return Err(Error::contract("mixture parameter shapes differ"));
            }
        }
        Ok(())
    }

    /// Quantized symbol models for every coefficient of one level's high-pass
    /// planes, in plane-major, channel-major, raster order. `low` is the
    /// level's low-pass output.
    pub fn highpass_models(&self, low: &Tensor, planes: usize) -> Result<Vec<SymbolModel>> {
        let (c, h, w) = low.chw()?;
        let n = planes * c * h * w;
        Ok(match &self.highpass {
            HighpassPrior::Uniform => vec![SymbolModel::Uniform; n],
            HighpassPrior::Logistic { mu, log_s } => {
                let mut out = Vec::with_capacity(n);
                for p in 0..planes * c {
                    let q = QLogistic::new(mu.data()[p] as f64, log_s.data()[p] as f64);
                    out.extend(std::iter::repeat_n(SymbolModel::Logistic(q), h * w));
                }
                out
            }
            HighpassPrior::Conditional(net) => {
                let pp = net.eval(low)?;
                pp.mu
                    .data()
                    .iter()
                    .zip(pp.log_s.data())
                    .map(|(&m, &l)| SymbolModel::Logistic(QLogistic::new(m as f64, l as f64)))
                    .collect()
            }
        })
    }

    /// Quantized models for the final block, channel-major raster order.
    pub fn final_models(&self, block: &Tensor) -> Result<Vec<SymbolModel>> {
        let (c, h, w) = block.chw()?;
        Ok(match &self.final_block {
            FinalPrior::Uniform => vec![SymbolModel::Uniform; c * h * w],
            FinalPrior::Mixture { mu, log_s, logits } => {
                let k = mu.shape()[1];
                let mut out = Vec::with_capacity(c * h * w);
                for ch in 0..c {
                    let r = ch * k..(ch + 1) * k;
                    let widen = |t: &Tensor| -> Vec<f64> {
                        t.data()[r.clone()].iter().map(|&v| v as f64).collect()
                    };
                    let m = SymbolModel::mixture(&widen(mu), &widen(log_s), &widen(logits));
                    out.extend(std::iter::repeat_n(m, h * w));
                }
                out
            }
        })
    }

    /// Log-probability (nats) of a pyramid under quantized parameters and
    /// unbounded support. `lowpass` holds each level's low-pass output.
    pub fn pyramid_log_prob(&self, pyr: &LatentPyramid, lowpass: &[Tensor]) -> Result<f64> {
        if lowpass.len() != pyr.levels() {
            return Err(Error::contract("one low-pass block per level required"));
        }
        let mut total = 0.0;
        for (level, low) in pyr.highpass.iter().zip(lowpass) {
            let models = self.highpass_models(low, level.len())?;
            let values = level.iter().flat_map(|t| t.data().iter());
            for (m, &z) in models.iter().zip(values) {
                total += m.log_prob(z as i64, None);
            }
        }
        let models = self.final_models(&pyr.final_block)?;
        for (m, &z) in models.iter().zip(pyr.final_block.data()) {
            total += m.log_prob(z as i64, None);
        }
        Ok(total)
    }

    /// Differentiable log-probability (nats) of a graph pyramid with
    /// unquantized parameters.
    pub fn log_prob_graph(&self, g: &mut Graph, gp: &GraphPyramid) -> Result<Var> {
        let mut terms = Vec::new();
        let mut uniform_count = 0usize;
        let mut uniform_vars = Vec::new();
        for (level, &low) in gp.highpass.iter().zip(&gp.lowpass) {
            match &self.highpass {
                HighpassPrior::Uniform => {
                    for &p in level {
                        uniform_count += g.value(p).len();
                        uniform_vars.push(p);
                    }
                }
                HighpassPrior::Logistic { mu, log_s } => {
                    let c = g.value(level[0]).chw()?.0;
                    let mu_v = g.param(mu);
                    let ls_v = g.param(log_s);
                    let mu3 = reshape_params(g, mu_v, mu)?;
                    let ls3 = reshape_params(g, ls_v, log_s)?;
                    for (q, &p) in level.iter().enumerate() {
                        let m = g.channels(mu3, q * c, c)?;
                        let l = g.channels(ls3, q * c, c)?;
                        terms.push(g.logistic_log_prob(p, m, l)?);
                    }
                }
                HighpassPrior::Conditional(net) => {
                    let c = net.channels;
                    let (mu, log_s) = net.forward_graph(g, low)?;
                    for (q, &p) in level.iter().enumerate() {
                        let m = g.channels(mu, q * c, c)?;
                        let l = g.channels(log_s, q * c, c)?;
                        terms.push(g.logistic_log_prob(p, m, l)?);
                    }
                }
            }
        }
        match &self.final_block {
            FinalPrior::Uniform => {
                uniform_count += g.value(gp.final_block).len();
                uniform_vars.push(gp.final_block);
            }
            FinalPrior::Mixture { mu, log_s, logits } => {
                let (m, l, w) = (g.param(mu), g.param(log_s), g.param(logits));
                terms.push(g.mixture_log_prob(gp.final_block, m, l, w)?);
            }
        }
        for v in uniform_vars {
            if g.value(v)
                .data()
                .iter()
                .any(|&z| !(0.0..=255.0).contains(&z))
            {
                return Err(Error::NonFinite("uniform prior on a value outside 0..=255"));
            }
        }
        let uniform = -(uniform_count as f64) * 256f64.ln();
        let mut total = g.constant(Tensor::scalar(uniform as f32));
        for t in terms {
            total = g.add(total, t)?;
        }
        Ok(total)
    }

    /// Every learnable tensor, in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        match &self.highpass {
            HighpassPrior::Uniform => {}
            HighpassPrior::Logistic { mu, log_s } => out.extend([mu, log_s]),
            HighpassPrior::Conditional(p) => {
                for l in &p.net.layers {
                    out.extend([&l.weight, &l.bias]);
                }
            }
        }
        if let FinalPrior::Mixture { mu, log_s, logits } = &self.final_block {
            out.extend([mu, log_s, logits]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        match &mut self.highpass {
            HighpassPrior::Uniform => {}
            HighpassPrior::Logistic { mu, log_s } => out.extend([mu, log_s]),
            HighpassPrior::Conditional(p) => {
                for l in &mut p.net.layers {
                    out.extend([&mut l.weight, &mut l.bias]);
                }
            }
        }
        if let FinalPrior::Mixture { mu, log_s, logits } = &mut self.final_block {
            out.extend([mu, log_s, logits]);
        }
        out
    }
}

/// Views a `[n]` parameter node as `[n, 1, 1]` so channel slices apply.
fn reshape_params(g: &mut Graph, v: Var, t: &Tensor) -> Result<Var> {
    g.reshape(v, vec![t.len(), 1, 1])
}

/// Bits per dimension from a natural-log probability.
pub fn bits_per_dim(log_prob_nats: f64, dims: usize) -> f64 {
    -log_prob_nats / LN_2 / dims as f64
}

/// Clamp bounds of the log-scale, re-exported for callers that validate
/// user-provided parameters.
pub const LOG_SCALE_RANGE: (f64, f64) = (LOG_SCALE_MIN, LOG_SCALE_MAX);
