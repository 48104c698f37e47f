//! Quick end-to-end checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{compress, decompress, CompressOptions};
use crate::coder::{build_table, FrequencyTable, RansDecoder, RansEncoder, PRECISION_BITS};
use crate::dataio::synth::{noise_image, smooth_image};
use crate::error::Result;
use crate::flow::{FlowConfig, Init, Scheme, WaveletFlow};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::oracle::{self, LevelFn};
use crate::prior::{HighpassKind, Priors};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn failure(msg: String) -> crate::error::Error {
    crate::error::Error::Corrupt(msg)
}

/// Initialized 1D flows against the direct lifting formulas.
fn wavelet_oracle(
    init: Init,
    level: LevelFn,
    signals: usize,
    rng: &mut impl Rng,
) -> Result<String> {
    let flow = WaveletFlow::new(FlowConfig::appendix_a(1), init)?;
    for i in 0..signals {
        let n = 2usize << rng.gen_range(0..7);
        let x: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=255)).collect();
        let t = Tensor::new(vec![1, 1, n], x.iter().map(|&v| v as f32).collect())?;
        let (s, d) = flow.forward_level(&t)?;
        let (os, od) = level(&x);
        let same = |a: &Tensor, b: &[i64]| a.data().iter().zip(b).all(|(&u, &v)| u as i64 == v);
        if !same(&s, &os) || !same(&d[0], &od) {
            return Err(failure(format!(
                "signal {i} (length {n}) differs from the oracle"
            )));
        }
    }
    Ok(format!("{signals} signals exact"))
}

fn codec_round_trip(images: usize, rng: &mut impl Rng) -> Result<String> {
    let mut bytes_total = 0;
    for channels in [1, 3] {
        let cfg = FlowConfig {
            hidden: 2 * channels + 2,
            n_hidden: 1,
            ..FlowConfig::new(Scheme::Quadrant, channels)
        };
        let flow = WaveletFlow::new(cfg, Init::LeGall { seed: 0 })?;
        let priors =
            Priors::learnable(HighpassKind::Logistic, Scheme::Quadrant, channels, 5, 8, 1)?;
        let model = Model::new(flow, priors)?;
        for i in 0..images / 2 {
            let size = 2usize << rng.gen_range(0..5);
            let img = if i % 2 == 0 {
                smooth_image(rng, size, size, channels)
            } else {
                noise_image(rng, size, size, channels)
            };
            let bytes = compress(&img, &model, CompressOptions::default())?;
            bytes_total += bytes.len();
            if decompress(&bytes, &model)? != img {
                return Err(failure(format!(
                    "image {i} ({size}x{size}x{channels}) did not round-trip"
                )));
            }
        }
    }
    Ok(format!("{images} images exact, {bytes_total} bytes"))
}

fn rans_fuzz(symbols: usize, rng: &mut impl Rng) -> Result<String> {
    let tables: Vec<FrequencyTable> = (0..8)
        .map(|_| {
            let n = rng.gen_range(1..300);
            let pmf: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(4)).collect();
            let total: f64 = pmf.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            let pmf: Vec<f64> = pmf.iter().map(|p| p / total).collect();
            build_table(&pmf, rng.gen_range(-100..100), PRECISION_BITS)
        })
        .collect::<Result<_>>()?;
    let seq: Vec<(i64, usize)> = (0..symbols)
        .map(|_| {
            let t = rng.gen_range(0..tables.len());
            (tables[t].lo + rng.gen_range(0..tables[t].len() as i64), t)
        })
        .collect();
    let mut enc = RansEncoder::new();
    for &(s, t) in seq.iter().rev() {
        enc.encode(s, &tables[t])?;
    }
    let bytes = enc.finish();
    let mut dec = RansDecoder::new(&bytes)?;
    for (i, &(s, t)) in seq.iter().enumerate() {
        if dec.decode(&tables[t])? != s {
            return Err(failure(format!("symbol {i} decoded wrongly")));
        }
    }
    dec.finish()?;
    Ok(format!("{symbols} symbols, {} bytes", bytes.len()))
}

/// Runs every check with a fixed seed.
pub fn run(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        outcome(
            "haar-oracle",
            wavelet_oracle(Init::Haar { seed: 0 }, oracle::haar_1d, 1000, &mut rng),
        ),
        outcome(
            "legall-oracle",
            wavelet_oracle(Init::LeGall { seed: 0 }, oracle::legall_1d, 1000, &mut rng),
        ),
        outcome("codec-round-trip", codec_round_trip(40, &mut rng)),
        outcome("rans-fuzz", rans_fuzz(100_000, &mut rng)),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run(1) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
