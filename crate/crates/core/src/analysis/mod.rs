//! Filter extraction from one transform level, frequency responses and
//! latent mosaics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::dataio::ImageU8;
use crate::error::{Error, Result};
use crate::flow::{LatentPyramid, Mode, Scheme, WaveletFlow};
use crate::numerics::logistic::log_softmax;
use crate::numerics::{Graph, Tensor};
use crate::prior::{FinalPrior, HighpassPrior, Priors};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::LowPass => "low",
            FilterKind::HighPass => "high",
        }
    }
}

/// Rows of `∂ output_row / ∂ input_row` for one transform level.
#[derive(Clone, Debug)]
pub struct FilterBank {
    /// One row per output column; entry `j` is the weight of input column `j`.
    pub rows: Vec<Vec<f64>>,
    /// Even rows are low-pass, odd rows high-pass.
    pub kinds: Vec<FilterKind>,
    pub row_index: usize,
    pub channel: usize,
    /// Largest autodiff vs central-difference discrepancy, relative to the
    /// largest Jacobian entry.
    pub fd_rel_error: f64,
}

impl FilterBank {
    pub fn low_pass(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().step_by(2).map(Vec::as_slice)
    }

    pub fn high_pass(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().skip(1).step_by(2).map(Vec::as_slice)
    }
}

/// Step used for the central-difference cross-check.
const FD_STEP: f32 = 0.5;

/// Jacobian rows of one level at `image` (`[C,H,W]`, or `[C,1,N]` for 1D
/// flows). For output row `row_index` of channel `channel`, each row lists
/// the weights of the input columns of the same channel, summed over input
/// rows. Quadrant flows need an even `row_index`, where A and B alternate.
pub fn extract_filters(
    flow: &WaveletFlow,
    image: &Tensor,
    row_index: usize,
    channel: usize,
) -> Result<FilterBank> {
    if flow.config.mode != Mode::Continuous {
        return Err(Error::InvalidArgument(
            "filter extraction needs a continuous-mode flow; rounding has no derivative".into(),
        ));
    }
    let (c, h, w) = image.chw()?;
    if channel >= c || row_index >= h {
        return Err(Error::InvalidArgument(format!(
            "row {row_index}, channel {channel} outside a {c}x{h}x{w} input"
        )));
    }
    if flow.scheme() == Scheme::Quadrant && row_index % 2 == 1 {
        return Err(Error::InvalidArgument(
            "quadrant flows interleave low- and high-pass outputs on even rows".into(),
        ));
    }
    let mut g = Graph::new();
    let x = g.variable(image.clone());
    let out = flow.filter_stage_graph(&mut g, x)?;
    let mut rows = Vec::with_capacity(w);
    for j in 0..w {
        let mut mask = Tensor::zeros(&[c, h, w]);
        mask.data_mut()[(channel * h + row_index) * w + j] = 1.0;
        let m = g.constant(mask);
        let picked = g.mul(out, m)?;
        let loss = g.sum(picked);
        g.reset_backward();
        let grads = g.backward(loss)?;
        let dx = grads.wrt(x).unwrap_or_else(|| Tensor::zeros(&[c, h, w]));
        rows.push(column_sums(&dx, channel));
    }

    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..w {
        let fd = central_difference(flow, image, channel, i, row_index)?;
        for (row, fd_j) in rows.iter().zip(fd) {
            worst = worst.max((fd_j - row[i]).abs());
            scale = scale.max(row[i].abs());
        }
    }
    let kinds = (0..w)
        .map(|j| {
            if j % 2 == 0 {
                FilterKind::LowPass
            } else {
                FilterKind::HighPass
            }
        })
        .collect();
    Ok(FilterBank {
        rows,
        kinds,
        row_index,
        channel,
        fd_rel_error: if scale > 0.0 { worst / scale } else { worst },
    })
}

/// Per input column, the sum over rows of channel `channel`.
fn column_sums(t: &Tensor, channel: usize) -> Vec<f64> {
    let (_, h, w) = t.chw().expect("gradient has the input's shape");
    let mut out = vec![0.0; w];
    for r in 0..h {
        for (j, o) in out.iter_mut().enumerate() {
            *o += t.data()[(channel * h + r) * w + j] as f64;
        }
    }
    out
}

/// `∂ out[channel, row, ·] / ∂ Σ_r in[channel, r, input_col]` by central
/// differences on the plain forward pass.
fn central_difference(
    flow: &WaveletFlow,
    image: &Tensor,
    channel: usize,
    input_col: usize,
    row: usize,
) -> Result<Vec<f64>> {
    let (_, h, w) = image.chw()?;
    let eval = |delta: f32| -> Result<Vec<f32>> {
        let mut x = image.clone();
        for r in 0..h {
            x.data_mut()[(channel * h + r) * w + input_col] += delta;
        }
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = flow.filter_stage_graph(&mut g, xv)?;
        let start = (channel * h + row) * w;
        Ok(g.value(out).data()[start..start + w].to_vec())
    };
    let (plus, minus) = (eval(FD_STEP)?, eval(-FD_STEP)?);
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(&p, &m)| (p as f64 - m as f64) / (2.0 * FD_STEP as f64))
        .collect())
}

/// `|H(e^{iω})|` sampled at equispaced `ω` in `[0, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseCurve {
    pub omega: Vec<f64>,
    pub magnitude: Vec<f64>,
}

pub fn freq_response(h: &[f64], n_samples: usize) -> Result<ResponseCurve> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(
            "need at least two frequency samples".into(),
        ));
    }
    let omega: Vec<f64> = (0..n_samples)
        .map(|k| PI * k as f64 / (n_samples - 1) as f64)
        .collect();
    let magnitude = omega
        .iter()
        .map(|&om| {
            let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &v)| {
                let phase = om * n as f64;
                (re + v * phase.cos(), im - v * phase.sin())
            });
            re.hypot(im)
        })
        .collect();
    Ok(ResponseCurve { omega, magnitude })
}

/// `filter_index,kind,tap,weight` rows; taps are input column indices.
pub fn filters_csv(bank: &FilterBank) -> String {
    let mut s = String::from("filter_index,kind,tap,weight\n");
    for (i, (row, kind)) in bank.rows.iter().zip(&bank.kinds).enumerate() {
        for (tap, v) in row.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{tap},{v}", kind.name());
        }
    }
    s
}

/// `filter_index,kind,omega,magnitude` rows.
pub fn response_csv(bank: &FilterBank, n_samples: usize) -> Result<String> {
    let mut s = String::from("filter_index,kind,omega,magnitude\n");
    for (i, (row, kind)) in bank.rows.iter().zip(&bank.kinds).enumerate() {
        let curve = freq_response(row, n_samples)?;
        for (om, mag) in curve.omega.iter().zip(&curve.magnitude) {
            let _ = writeln!(s, "{i},{},{om},{mag}", kind.name());
        }
    }
    Ok(s)
}

/// Mosaic of the first `iterations` levels: the low-pass block of the last
/// shown level in the upper-left corner, each level's B, C, D planes in the
/// upper-right, lower-left and lower-right of its square. Prior means are
/// subtracted, then every tile is min–max scaled to `0..=255` per channel;
/// a constant tile shows as mid-gray.
pub fn visualize_latents(
    pyr: &LatentPyramid,
    lowpass: &[Tensor],
    priors: &Priors,
    iterations: usize,
) -> Result<ImageU8> {
    if iterations == 0 || iterations > pyr.levels() || lowpass.len() != pyr.levels() {
        return Err(Error::InvalidArgument(format!(
            "cannot show {iterations} of {} levels",
            pyr.levels()
        )));
    }
    if pyr.highpass[0].len() != 3 {
        return Err(Error::Unsupported("mosaics need a 2D scheme".into()));
    }
    let (c, h, w) = (pyr.channels, pyr.height, pyr.width);
    let mut canvas = vec![0u8; c * h * w];
    let mut paste = |tile: &Tensor, means: &[f32], y0: usize, x0: usize| -> Result<()> {
        let (tc, th, tw) = tile.chw()?;
        for ch in 0..tc {
            let plane = ch * th * tw..(ch + 1) * th * tw;
            let centered: Vec<f32> = tile.data()[plane.clone()]
                .iter()
                .zip(&means[plane])
                .map(|(&v, &m)| v - m)
                .collect();
            let (lo, hi) = centered
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            for (k, &v) in centered.iter().enumerate() {
                let px = if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    128
                };
                canvas[(ch * h + y0 + k / tw) * w + x0 + k % tw] = px;
            }
        }
        Ok(())
    };

    for (low, level) in lowpass.iter().zip(&pyr.highpass).take(iterations) {
        let (_, lh, lw) = low.chw()?;
        let means = highpass_means(priors, low)?;
        let n = c * lh * lw;
        let origins = [(0, lw), (lh, 0), (lh, lw)];
        for (q, (plane, &(y0, x0))) in level.iter().zip(&origins).enumerate() {
            paste(plane, &means[q * n..(q + 1) * n], y0, x0)?;
        }
    }
    let top = &lowpass[iterations - 1];
    let means = if iterations == pyr.levels() {
        final_means(priors, top)?
    } else {
        vec![0.0; top.len()]
    };
    paste(top, &means, 0, 0)?;
    ImageU8::new(w, h, c, canvas)
}

/// Prior mean of every high-pass coefficient of a level, plane-major.
fn highpass_means(priors: &Priors, low: &Tensor) -> Result<Vec<f32>> {
    let (c, h, w) = low.chw()?;
    let n = h * w;
    Ok(match &priors.highpass {
        HighpassPrior::Uniform => vec![0.0; 3 * c * n],
        HighpassPrior::Logistic { mu, .. } => mu
            .data()
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, n))
            .collect(),
        HighpassPrior::Conditional(net) => net.eval(low)?.mu.into_data(),
    })
}

fn final_means(priors: &Priors, block: &Tensor) -> Result<Vec<f32>> {
    let (c, h, w) = block.chw()?;
    Ok(match &priors.final_block {
        FinalPrior::Uniform => vec![127.5; c * h * w],
        FinalPrior::Mixture { mu, logits, .. } => {
            let k = mu.shape()[1];
            let mut out = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                let lg: Vec<f64> = logits.data()[ch * k..(ch + 1) * k]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let mean: f64 = log_softmax(&lg)
                    .iter()
                    .zip(&mu.data()[ch * k..(ch + 1) * k])
                    .map(|(lp, &m)| lp.exp() * m as f64)
                    .sum();
                out.extend(std::iter::repeat_n(mean as f32, h * w));
            }
            out
        }
    })
}
