//! Compression pipeline: forward transform, per-coefficient tables from the
//! priors, rANS coding and the container.
//!
//! Symbols are decoded coarse to fine: the final block, then each level's
//! high-pass planes from the deepest level to the finest. Every table depends
//! only on already-decoded content, so any prefix of the payload decodes to a
//! valid low-resolution image.

mod container;

pub use container::{ColorSpace, ContainerHeader, CONTAINER_MAGIC, CONTAINER_VERSION};

use std::borrow::Cow;
use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coder::{build_table, FrequencyTable, RansDecoder, RansEncoder, PRECISION_BITS};
use crate::dataio::{rgb_to_ycbcr, ycbcr_to_rgb, ImageU8};
use crate::error::{Error, Result};
use crate::flow::{Mode, Scheme, WaveletFlow, LATENT_MAX, LATENT_MIN};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::prior::{bits_per_dim, SymbolModel, UNIFORM_HI, UNIFORM_LO};

/// Largest alphabet a table may have.
const MAX_PRECISION_BITS: u32 = 16;

/// Frequency tables keyed by quantized model and support.
#[derive(Default)]
pub struct TableCache {
    tables: HashMap<(SymbolModel, i64, i64), Rc<FrequencyTable>>,
}

impl TableCache {
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// The table for `model` over `lo..=hi`. Uniform tables always cover
    /// `0..=255` as well.
    pub fn get(&mut self, model: &SymbolModel, lo: i64, hi: i64) -> Result<Rc<FrequencyTable>> {
        let (lo, hi) = match model {
            SymbolModel::Uniform => (lo.min(UNIFORM_LO), hi.max(UNIFORM_HI)),
            _ => (lo, hi),
        };
        let key = (model.clone(), lo, hi);
        if let Some(t) = self.tables.get(&key) {
            return Ok(Rc::clone(t));
        }
        let len = (hi - lo + 1) as u64;
        let mut bits = PRECISION_BITS;
        // Wide supports get a finer table so every symbol keeps a slot.
        while (len << 1) > 1 << bits && bits < MAX_PRECISION_BITS {
            bits += 1;
        }
        let table = Rc::new(build_table(&model.pmf(lo, hi), lo, bits)?);
        self.tables.insert(key, Rc::clone(&table));
        Ok(table)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressOptions {
    pub colorspace: ColorSpace,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            colorspace: ColorSpace::Rgb,
        }
    }
}

fn integer_flow(model: &Model) -> Cow<'_, WaveletFlow> {
    if model.flow.config.mode == Mode::Integer {
        Cow::Borrowed(&model.flow)
    } else {
        Cow::Owned(model.flow.with_mode(Mode::Integer))
    }
}

fn check_geometry(model: &Model, width: usize, height: usize, channels: usize) -> Result<()> {
    if model.flow.scheme() == Scheme::Lifting1d {
        return Err(Error::Unsupported("1D flows cannot code images".into()));
    }
    if channels != model.flow.channels() {
        return Err(Error::Geometry(format!(
            "image has {channels} channels, model expects {}",
            model.flow.channels()
        )));
    }
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::Geometry(format!("{width}x{height} exceeds 65535")));
    }
    model.flow.iterations(height, width)?;
    Ok(())
}

fn span(values: impl Iterator<Item = f32>) -> (i64, i64) {
    values.fold((i64::MAX, i64::MIN), |(lo, hi), v| {
        (lo.min(v as i64), hi.max(v as i64))
    })
}

pub fn compress(img: &ImageU8, model: &Model, opts: CompressOptions) -> Result<Vec<u8>> {
    check_geometry(model, img.width, img.height, img.channels)?;
    let coded = match opts.colorspace {
        ColorSpace::Rgb => Cow::Borrowed(img),
        ColorSpace::YCbCr => Cow::Owned(rgb_to_ycbcr(img)?),
    };
    let flow = integer_flow(model);
    let (pyr, lowpass) = flow.forward_trace(&coded.to_tensor())?;
    let levels = pyr.levels();

    let mut bounds = vec![span(pyr.final_block.data().iter().copied())];
    for level in pyr.highpass.iter().rev() {
        bounds.push(span(level.iter().flat_map(|t| t.data().iter().copied())));
    }

    let mut cache = TableCache::default();
    let mut symbols: Vec<(i64, Rc<FrequencyTable>)> = Vec::with_capacity(pyr.element_count());
    let (lo, hi) = bounds[0];
    let models = model.priors.final_models(&pyr.final_block)?;
    for (m, &z) in models.iter().zip(pyr.final_block.data()) {
        symbols.push((z as i64, cache.get(m, lo, hi)?));
    }
    for (d, li) in (0..levels).rev().enumerate() {
        let (lo, hi) = bounds[d + 1];
        let planes = &pyr.highpass[li];
        let models = model.priors.highpass_models(&lowpass[li], planes.len())?;
        let values = planes.iter().flat_map(|t| t.data().iter());
        for (m, &z) in models.iter().zip(values) {
            symbols.push((z as i64, cache.get(m, lo, hi)?));
        }
    }

    let mut enc = RansEncoder::new();
    for (z, t) in symbols.iter().rev() {
        enc.encode(*z, t)?;
    }
    let payload = enc.finish();
    let header = ContainerHeader {
        version: CONTAINER_VERSION,
        width: img.width as u16,
        height: img.height as u16,
        channels: img.channels as u8,
        colorspace: opts.colorspace,
        scheme: model.flow.scheme(),
        iterations: levels as u8,
        model_hash: model.hash(),
        payload_len: u32::try_from(payload.len())
            .map_err(|_| Error::Unsupported("payload exceeds 4 GiB".into()))?,
        bounds,
    };
    let mut out = Vec::with_capacity(64 + payload.len());
    header.write(&mut out);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// State of a coarse-to-fine decode.
struct LevelDecoder<'a> {
    header: ContainerHeader,
    flow: Cow<'a, WaveletFlow>,
    model: &'a Model,
    rans: RansDecoder<'a>,
    cache: TableCache,
    /// Current low-pass block.
    low: Tensor,
    /// High-pass levels decoded so far.
    done: usize,
    /// Offset of the payload in the container.
    start: usize,
}

impl<'a> LevelDecoder<'a> {
    fn open(bytes: &'a [u8], model: &'a Model, allow_truncation: bool) -> Result<Self> {
        let (header, start) = ContainerHeader::read(bytes)?;
        let actual = model.hash();
        if header.model_hash != actual {
            return Err(Error::ModelMismatch {
                expected: header.model_hash,
                actual,
            });
        }
        if header.scheme != model.flow.scheme() {
            return Err(Error::Corrupt(
                "container scheme differs from the model's".into(),
            ));
        }
        let (w, h, c) = (
            header.width as usize,
            header.height as usize,
            header.channels as usize,
        );
        check_geometry(model, w, h, c)
            .map_err(|e| Error::Corrupt(format!("container geometry: {e}")))?;
        if model.flow.iterations(h, w)? != header.iterations as usize {
            return Err(Error::Corrupt(
                "iteration count does not match the geometry".into(),
            ));
        }
        let payload = &bytes[start..];
        let declared = header.payload_len as usize;
        if payload.len() > declared {
            return Err(Error::Corrupt(format!(
                "{} bytes after the payload",
                payload.len() - declared
            )));
        }
        if payload.len() < declared && !allow_truncation {
            return Err(Error::Truncated(format!(
                "payload has {} of {declared} bytes",
                payload.len()
            )));
        }
        let mut dec = Self {
            rans: RansDecoder::new(payload)?,
            flow: integer_flow(model),
            model,
            cache: TableCache::default(),
            low: Tensor::zeros(&[0]),
            done: 0,
            start,
            header,
        };
        let l = dec.header.iterations as usize;
        let block = Tensor::zeros(&[c, h >> l, w >> l]);
        let models = model.priors.final_models(&block)?;
        dec.low = dec.decode_values(&models, 0, vec![c, h >> l, w >> l])?;
        Ok(dec)
    }

    fn decode_values(
        &mut self,
        models: &[SymbolModel],
        bound: usize,
        shape: Vec<usize>,
    ) -> Result<Tensor> {
        let (lo, hi) = self.header.bounds[bound];
        let mut data = Vec::with_capacity(models.len());
        for m in models {
            let table = self.cache.get(m, lo, hi)?;
            data.push(self.rans.decode(&table)? as f32);
        }
        Tensor::new(shape, data)
    }

    /// Decodes the next level's high-pass planes and inverts that level.
    fn next_level(&mut self) -> Result<()> {
        let levels = self.header.iterations as usize;
        let li = levels - 1 - self.done;
        let (c, lh, lw) = self.low.chw()?;
        let n_planes = self.model.flow.scheme().highpass_planes();
        let models = self.model.priors.highpass_models(&self.low, n_planes)?;
        let all = self.decode_values(&models, self.done + 1, vec![n_planes * c, lh, lw])?;
        let plane = c * lh * lw;
        let planes = all
            .data()
            .chunks(plane)
            .map(|d| Tensor::new(vec![c, lh, lw], d.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        self.low = self.flow.inverse_from(&self.low, &[planes])?;
        debug_assert_eq!(self.low.shape()[1], self.header.height as usize >> li);
        self.done += 1;
        Ok(())
    }
}

pub fn decompress(bytes: &[u8], model: &Model) -> Result<ImageU8> {
    let mut dec = LevelDecoder::open(bytes, model, false)?;
    while dec.done < dec.header.iterations as usize {
        dec.next_level()?;
    }
    dec.rans.finish()?;
    let img = ImageU8::from_tensor_exact(&dec.low)?;
    match dec.header.colorspace {
        ColorSpace::Rgb => Ok(img),
        ColorSpace::YCbCr => ycbcr_to_rgb(&img),
    }
}

/// Result of decoding a payload prefix.
#[derive(Clone, Debug)]
pub struct Progressive {
    /// The low-pass block after `levels` levels, clamped to `0..=255`.
    pub image: ImageU8,
    /// The same block before clamping.
    pub latent: Tensor,
    /// Container bytes read, header included.
    pub consumed: usize,
}

/// Decodes the final block and the `levels` deepest high-pass levels. The
/// payload may be truncated anywhere after the bytes this needs.
pub fn progressive_decode(bytes: &[u8], model: &Model, levels: usize) -> Result<Progressive> {
    let mut dec = LevelDecoder::open(bytes, model, true)?;
    let total = dec.header.iterations as usize;
    if levels > total {
        return Err(Error::InvalidArgument(format!(
            "{levels} levels requested, the image has {total}"
        )));
    }
    while dec.done < levels {
        dec.next_level()?;
    }
    let mut image = ImageU8::from_tensor_clamped(&dec.low)?;
    if levels == total && dec.header.colorspace == ColorSpace::YCbCr {
        image = ycbcr_to_rgb(&image)?;
    }
    Ok(Progressive {
        image,
        consumed: dec.start + dec.rans.position(),
        latent: dec.low,
    })
}

/// `−log₂ p(pyramid) / dims` under the quantized priors.
pub fn bpd_theoretical(img: &ImageU8, model: &Model) -> Result<f64> {
    check_geometry(model, img.width, img.height, img.channels)?;
    let (pyr, lowpass) = integer_flow(model).forward_trace(&img.to_tensor())?;
    let lp = model.priors.pyramid_log_prob(&pyr, &lowpass)?;
    Ok(bits_per_dim(lp, img.dims()))
}

/// Size of the compressed container in bits per dimension.
pub fn bpd_actual(img: &ImageU8, model: &Model) -> Result<f64> {
    let bytes = compress(img, model, CompressOptions::default())?;
    Ok(8.0 * bytes.len() as f64 / img.dims() as f64)
}

/// Treats `img` as a low-pass block and synthesizes `log2(factor)` finer
/// levels by sampling high-pass coefficients from the priors at
/// `temperature` (0 places every sample at the rounded mean).
pub fn upsample(
    img: &ImageU8,
    model: &Model,
    factor: usize,
    seed: u64,
    temperature: f64,
) -> Result<ImageU8> {
    if factor < 2 || !factor.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "factor {factor} is not a power of two ≥ 2"
        )));
    }
    if model.flow.scheme() == Scheme::Lifting1d {
        return Err(Error::Unsupported("1D flows cannot upsample images".into()));
    }
    if img.channels != model.flow.channels() {
        return Err(Error::Geometry(format!(
            "image has {} channels, model expects {}",
            img.channels,
            model.flow.channels()
        )));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature}")));
    }
    let flow = integer_flow(model);
    let n_planes = flow.scheme().highpass_planes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut low = img.to_tensor();
    for _ in 0..factor.trailing_zeros() {
        let (c, h, w) = low.chw()?;
        let models = model.priors.highpass_models(&low, n_planes)?;
        let samples: Vec<f32> = models
            .iter()
            .map(|m| m.sample(&mut rng, temperature, LATENT_MIN as i64, LATENT_MAX as i64) as f32)
            .collect();
        let planes = samples
            .chunks(c * h * w)
            .map(|d| Tensor::new(vec![c, h, w], d.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let up = flow.inverse_from(&low, &[planes])?;
        low = up.map(|v| v.clamp(0.0, 255.0));
    }
    ImageU8::from_tensor_clamped(&low)
}
