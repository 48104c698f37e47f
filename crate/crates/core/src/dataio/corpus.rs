//! Training corpora: loading, patching, batching and mixed-dataset sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{extract_patches, read_pnm, rgb_to_ycbcr, ImageU8};

/// A list of equally sized training samples.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub samples: Vec<ImageU8>,
}

impl Corpus {
    pub fn new(samples: Vec<ImageU8>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image files under `path`: a directory of `.ppm`/`.pgm` files, or a
    /// text file listing one path per line (relative to the list's folder).
    pub fn image_paths(path: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path)? {
                let p = entry?.path();
                let ext = p
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase);
                if matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm")) {
                    paths.push(p);
                }
            }
            paths.sort();
        } else {
            let base = path.parent().unwrap_or(Path::new("."));
            for line in fs::read_to_string(path)?.lines() {
                let line = line.trim();
                if !line.is_empty() && !line.starts_with('#') {
                    paths.push(base.join(line));
                }
            }
        }
        Ok(paths)
    }

    /// Loads every image at `path`, optionally converts it to YCbCr, and cuts it into patches.
    pub fn load(path: &Path, patch: usize, stride: usize, ycbcr: bool) -> Result<Self> {
        let mut samples = Vec::new();
        for p in Self::image_paths(path)? {
            let mut img = read_pnm(&p)?;
            if ycbcr {
                img = rgb_to_ycbcr(&img)?;
            }
            samples.extend(extract_patches(&img, patch, stride)?);
        }
        Self::from_patches(samples)
    }

    /// Rejects empty corpora and mixed channel counts.
    pub fn from_patches(samples: Vec<ImageU8>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Training("corpus is empty".into()))?;
        if samples.iter().any(|s| s.channels != first.channels) {
            return Err(Error::Training("corpus mixes channel counts".into()));
        }
        Ok(Self { samples })
    }

    /// Splits off the last `fraction` of samples after a seeded shuffle.
    pub fn split(mut self, fraction: f64, seed: u64) -> (Corpus, Corpus) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.samples.shuffle(&mut rng);
        let n_val = ((self.samples.len() as f64) * fraction).round() as usize;
        let n_val = n_val.min(self.samples.len().saturating_sub(1));
        let val = self.samples.split_off(self.samples.len() - n_val);
        (self, Corpus::new(val))
    }

    pub fn batches(&self, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<&ImageU8>> {
        epoch_batches(self.len(), batch, seed, epoch)
            .into_iter()
            .map(|b| b.into_iter().map(|i| &self.samples[i]).collect())
            .collect()
    }
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Shuffled index batches for one epoch, determined by `(seed, epoch)`.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Draws batches from several datasets, picking each one with probability
/// proportional to its count of samples not yet drawn this epoch.
pub struct MixedSampler {
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    batch: usize,
    rng: ChaCha8Rng,
}

impl MixedSampler {
    pub fn new(sizes: &[usize], batch: usize, seed: u64, epoch: u64) -> Self {
        let mut rng = epoch_rng(seed, epoch);
        let orders = sizes
            .iter()
            .map(|&n| {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        Self {
            orders,
            cursors: vec![0; sizes.len()],
            batch: batch.max(1),
            rng,
        }
    }

    pub fn remaining(&self) -> Vec<usize> {
        self.orders
            .iter()
            .zip(&self.cursors)
            .map(|(o, &c)| o.len() - c)
            .collect()
    }
}

impl Iterator for MixedSampler {
    /// `(dataset, sample indices)`.
    type Item = (usize, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let remaining = self.remaining();
        let total: usize = remaining.iter().sum();
        if total == 0 {
            return None;
        }
        let mut pick = self.rng.gen_range(0..total);
        let set = remaining
            .iter()
            .position(|&r| {
                if pick < r {
                    true
                } else {
                    pick -= r;
                    false
                }
            })
            .expect("pick is below the total");
        let start = self.cursors[set];
        let end = (start + self.batch).min(self.orders[set].len());
        self.cursors[set] = end;
        Some((set, self.orders[set][start..end].to_vec()))
    }
}
