//! Maximum-likelihood training of the flow and its priors.
//!
//! The loss is the bits-per-dimension of the latent pyramid. Training runs
//! the integer flow with straight-through rounding, so the forward pass is
//! exactly what the codec computes.

mod config;

pub use config::TrainConfig;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::dataio::{Corpus, ImageU8, MixedSampler};
use crate::error::{Error, Result};
use crate::flow::{Mode, WaveletFlow};
use crate::model::{Model, TrainState};
use crate::numerics::{Adamax, Graph, Tensor};
use crate::prior::{
    bits_per_dim, FinalPrior, HighpassKind, HighpassPrior, Priors, QLogistic, SymbolModel,
};

/// Every learnable tensor of a model: flow networks, then priors.
pub fn parameters(model: &Model) -> Vec<&Tensor> {
    let mut out: Vec<&Tensor> = Vec::new();
    for net in &model.flow.block.nets {
        for l in &net.layers {
            out.extend([&l.weight, &l.bias]);
        }
    }
    out.extend(model.priors.params());
    out
}

pub fn parameters_mut(model: &mut Model) -> Vec<&mut Tensor> {
    let mut out: Vec<&mut Tensor> = Vec::new();
    for net in &mut model.flow.block.nets {
        for l in &mut net.layers {
            out.extend([&mut l.weight, &mut l.bias]);
        }
    }
    out.extend(model.priors.params_mut());
    out
}

/// Mean bits per dimension over `batch` and its gradient, one tensor per
/// entry of [`parameters`]. Per-image gradients are summed in batch order.
pub fn loss_and_grads(batch: &[&ImageU8], model: &Model) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let params = parameters(model);
    let mut total = 0.0;
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let weight = 1.0 / batch.len() as f32;
    for img in batch {
        let x = img.to_tensor();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gp = model.flow.forward_graph(&mut g, xv)?;
        let lp = model.priors.log_prob_graph(&mut g, &gp)?;
        let bpd = g.scale(lp, -1.0 / (std::f32::consts::LN_2 * x.len() as f32));
        g.check_finite()?;
        total += g.value(bpd).item() as f64;
        let gr = g.backward(bpd)?;
        for (acc, p) in grads.iter_mut().zip(&params) {
            let d = gr.get(p);
            for (a, &v) in acc.data_mut().iter_mut().zip(d.data()) {
                *a += weight * v;
            }
        }
    }
    Ok((total / batch.len() as f64, grads))
}

/// Mean bits per dimension over `batch`, no gradient.
pub fn loss(batch: &[&ImageU8], model: &Model) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mut total = 0.0;
    for img in batch {
        let x = img.to_tensor();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gp = model.flow.forward_graph(&mut g, xv)?;
        let lp = model.priors.log_prob_graph(&mut g, &gp)?;
        g.check_finite()?;
        total += bits_per_dim(g.value(lp).item() as f64, x.len());
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss over a corpus.
pub fn corpus_bpd(corpus: &Corpus, model: &Model) -> Result<f64> {
    let refs: Vec<&ImageU8> = corpus.samples.iter().collect();
    loss(&refs, model)
}

/// A freshly initialized model for `channels`-channel data.
pub fn initial_model(cfg: &TrainConfig, channels: usize) -> Result<Model> {
    let flow = WaveletFlow::new(cfg.flow_config(channels), cfg.flow_init()?)?;
    let kind = if cfg.prior_net_enabled {
        HighpassKind::Conditional
    } else {
        HighpassKind::Logistic
    };
    let priors = Priors::learnable(
        kind,
        cfg.scheme,
        channels,
        cfg.k,
        cfg.hidden_channel,
        cfg.n_hidden,
    )?;
    Model::new(flow, priors)
}

/// `(mu, log_s)` of the discrete logistic that best fits `values`: the
/// median as location and the likelihood-maximizing scale on a grid.
fn fit_logistic(values: &mut [f32]) -> (f64, f64) {
    values.sort_by(f32::total_cmp);
    let mu = values[values.len() / 2] as f64;
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values.iter() {
        *hist.entry(v as i64).or_default() += 1;
    }
    let nll = |ls: f64| -> f64 {
        let m = SymbolModel::Logistic(QLogistic::new(mu, ls));
        hist.iter()
            .map(|(&z, &n)| -(n as f64) * m.log_prob(z, None))
            .sum()
    };
    let grid = (0..=160).map(|i| -2.0 + 0.05 * i as f64);
    let best = grid
        .min_by(|&a, &b| nll(a).total_cmp(&nll(b)))
        .expect("grid is non-empty");
    (mu, best)
}

/// Negative log-likelihood (nats) of `samples` under the quantized priors.
fn prior_nll(model: &Model, samples: &[ImageU8]) -> Result<f64> {
    let flow = model.flow.with_mode(Mode::Integer);
    let mut total = 0.0;
    for img in samples {
        let (pyr, low) = flow.forward_trace(&img.to_tensor())?;
        total -= model.priors.pyramid_log_prob(&pyr, &low)?;
    }
    Ok(total)
}

/// Data-dependent prior initialization: per high-pass plane and channel a
/// logistic fitted by maximum likelihood, and mixture components placed at
/// quantiles of the final-block values. Each part is kept only if it lowers
/// the likelihood cost of `samples`. Flow weights are left untouched.
pub fn fit_priors(model: &mut Model, samples: &[ImageU8]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Training("no samples to fit priors on".into()));
    }
    let c = model.flow.channels();
    let planes = model.flow.scheme().highpass_planes();
    let flow = model.flow.with_mode(Mode::Integer);
    let mut highpass: Vec<Vec<f32>> = vec![Vec::new(); planes * c];
    let mut finals: Vec<Vec<f32>> = vec![Vec::new(); c];
    for img in samples {
        let pyr = flow.forward(&img.to_tensor())?;
        for level in &pyr.highpass {
            for (q, plane) in level.iter().enumerate() {
                for (ch, chunk) in plane.data().chunks(plane.len() / c).enumerate() {
                    highpass[q * c + ch].extend_from_slice(chunk);
                }
            }
        }
        let n = pyr.final_block.len() / c;
        for (ch, chunk) in pyr.final_block.data().chunks(n).enumerate() {
            finals[ch].extend_from_slice(chunk);
        }
    }

    let mut candidate = model.priors.clone();
    let fits: Vec<(f64, f64)> = highpass
        .iter_mut()
        .map(|v| {
            if v.is_empty() {
                (0.0, 0.0)
            } else {
                fit_logistic(v)
            }
        })
        .collect();
    match &mut candidate.highpass {
        HighpassPrior::Uniform => {}
        HighpassPrior::Logistic { mu, log_s } => {
            for (i, &(m, ls)) in fits.iter().enumerate() {
                mu.data_mut()[i] = m as f32;
                log_s.data_mut()[i] = ls as f32;
            }
        }
        HighpassPrior::Conditional(net) => {
            let last = net.net.layers.last_mut().expect("prior nets have layers");
            let half = planes * c;
            for (i, &(m, ls)) in fits.iter().enumerate() {
                last.bias.data_mut()[i] = (m / 255.0) as f32;
                last.bias.data_mut()[half + i] = ls as f32;
            }
        }
    }
    let mut best = prior_nll(model, samples)?;
    let mut keep = |model: &mut Model, priors: &Priors| -> Result<()> {
        let trial = Model {
            priors: priors.clone(),
            ..model.clone()
        };
        let nll = prior_nll(&trial, samples)?;
        if nll < best {
            best = nll;
            model.priors = trial.priors;
        }
        Ok(())
    };
    keep(model, &candidate)?;

    let mut candidate = model.priors.clone();
    if let FinalPrior::Mixture { mu, log_s, .. } = &mut candidate.final_block {
        let k = mu.shape()[1];
        for (ch, vals) in finals.iter_mut().enumerate() {
            vals.sort_by(f32::total_cmp);
            for j in 0..k {
                let lo = (vals.len() * j / k).min(vals.len() - 1);
                let hi = (vals.len() * (j + 1) / k).clamp(lo + 1, vals.len());
                let (m, ls) = fit_logistic(&mut vals[lo..hi].to_vec());
                mu.data_mut()[ch * k + j] = m as f32;
                log_s.data_mut()[ch * k + j] = ls.max(0.0) as f32;
            }
        }
    }
    keep(model, &candidate)
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_bpd: f64,
    pub val_bpd: f64,
    pub lr: f32,
}

/// Where checkpoints and metrics go; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
}

/// Training data: one corpus per patch size, plus validation patches.
pub struct TrainData {
    pub train: Vec<Corpus>,
    pub val: Corpus,
}

impl TrainData {
    /// Splits one corpus into training and validation parts.
    pub fn split(corpus: Corpus, cfg: &TrainConfig) -> Self {
        let (train, val) = corpus.split(cfg.val_fraction, cfg.seed);
        Self {
            train: vec![train],
            val,
        }
    }

    fn channels(&self) -> Result<usize> {
        let first = self
            .train
            .iter()
            .flat_map(|c| c.samples.first())
            .next()
            .ok_or_else(|| Error::Training("corpus is empty".into()))?;
        let c = first.channels;
        let all = self
            .train
            .iter()
            .chain([&self.val])
            .flat_map(|k| &k.samples);
        for s in all {
            if s.channels != c {
                return Err(Error::Training("corpus mixes channel counts".into()));
            }
            if s.width != s.height || s.width < 2 || !s.width.is_power_of_two() {
                return Err(Error::Training(format!(
                    "training patches must be square powers of two, got {}x{}",
                    s.width, s.height
                )));
            }
        }
        Ok(c)
    }
}

/// Runs `cfg.epochs` epochs, starting from `resume` when given.
///
/// Each epoch draws batches with the remaining-samples rule, applies one
/// Adamax step per batch, evaluates validation BPD, checks that the integer
/// flow still inverts the probe image exactly, then writes a checkpoint and
/// a metrics row.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    resume: Option<Model>,
    outputs: &TrainOutputs,
) -> Result<(Model, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let channels = data.channels()?;
    let (mut model, mut opt, start) = match resume {
        Some(m) => {
            let st = m
                .train_state
                .clone()
                .ok_or_else(|| Error::Training("checkpoint has no optimizer state".into()))?;
            if m.flow.channels() != channels {
                return Err(Error::Training(
                    "checkpoint channel count differs from the data".into(),
                ));
            }
            (m, st.optimizer, st.epoch as usize)
        }
        None => {
            let mut m = initial_model(cfg, channels)?;
            fit_priors(&mut m, &data.train[0].samples)?;
            let sizes: Vec<usize> = parameters(&m).iter().map(|t| t.len()).collect();
            (m, Adamax::new(cfg.lr_base, cfg.decay, &sizes), 0)
        }
    };
    model.flow.config.mode = Mode::Integer;
    let probe = data
        .val
        .samples
        .first()
        .or_else(|| data.train[0].samples.first())
        .expect("channels() found a sample")
        .clone();
    if let Some(path) = &outputs.metrics_csv {
        prepare_metrics(path, start)?;
    }

    let sizes: Vec<usize> = data.train.iter().map(Corpus::len).collect();
    let mut history = Vec::new();
    for epoch in start..cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (set, idx) in MixedSampler::new(&sizes, cfg.batch_size, cfg.seed, epoch as u64) {
            let batch: Vec<&ImageU8> = idx.iter().map(|&i| &data.train[set].samples[i]).collect();
            let (value, grads) = loss_and_grads(&batch, &model)?;
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {value} in epoch {epoch}"
                )));
            }
            opt.step(&mut parameters_mut(&mut model), &grads, epoch)?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let val_bpd = if data.val.is_empty() {
            f64::NAN
        } else {
            corpus_bpd(&data.val, &model)?
        };
        check_probe(&model, &probe).map_err(|e| {
            Error::Training(format!(
                "invertibility probe failed after epoch {epoch}: {e}"
            ))
        })?;
        let m = EpochMetrics {
            epoch,
            train_bpd: sum / count.max(1) as f64,
            val_bpd,
            lr: opt.learning_rate(epoch),
        };
        history.push(m);
        model.train_state = Some(TrainState {
            epoch: (epoch + 1) as u32,
            optimizer: opt.clone(),
            config: cfg.to_text(),
        });
        if let Some(path) = &outputs.checkpoint {
            model.save(path)?;
        }
        if let Some(path) = &outputs.metrics_csv {
            let mut f = fs::OpenOptions::new().append(true).open(path)?;
            writeln!(f, "{},{},{},{}", m.epoch, m.train_bpd, m.val_bpd, m.lr)?;
        }
    }
    Ok((model, history))
}

/// Integer forward then inverse must return the probe exactly.
pub fn check_probe(model: &Model, probe: &ImageU8) -> Result<()> {
    let flow = model.flow.with_mode(Mode::Integer);
    let x = probe.to_tensor();
    let back = flow.inverse(&flow.forward(&x)?)?;
    if back != x {
        return Err(Error::Training("round trip is not exact".into()));
    }
    Ok(())
}

/// Creates the metrics file, or on resume drops rows from `start` on.
fn prepare_metrics(path: &Path, start: usize) -> Result<()> {
    const HEADER: &str = "epoch,train_bpd,val_bpd,lr";
    let mut kept = vec![HEADER.to_string()];
    if start > 0 {
        if let Ok(text) = fs::read_to_string(path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| {
                        l.split(',')
                            .next()
                            .and_then(|e| e.parse::<usize>().ok())
                            .is_some_and(|e| e < start)
                    })
                    .map(str::to_string),
            );
        }
    }
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}
