//! Images, PNM files, colour conversion, patches and corpora.

mod corpus;
mod pnm;
pub mod synth;

pub use corpus::{epoch_batches, Corpus, MixedSampler};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 8-bit image with channel-major planes.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl std::fmt::Debug for ImageU8 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ImageU8({}x{}x{})",
            self.width, self.height, self.channels
        )
    }
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Unsupported(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::contract(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn dims(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("image dimensions are consistent")
    }

    /// Rounds and clamps a `[C,H,W]` tensor to 8 bits.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        let data = t.data().iter().map(|&v| clamp_u8(v as f64)).collect();
        Self::new(w, h, c, data)
    }

    /// Exact conversion; fails if any value is not an integer in `0..=255`.
    pub fn from_tensor_exact(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        let mut data = Vec::with_capacity(t.len());
        for &v in t.data() {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(Error::Corrupt(format!(
                    "reconstructed value {v} is not a byte"
                )));
            }
            data.push(v as u8);
        }
        Self::new(w, h, c, data)
    }

    /// The `size × size` window at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::contract("crop window outside the image"));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for r in y..y + h {
                let start = (c * self.height + r) * self.width + x;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Self::new(w, h, self.channels, data)
    }
}

fn clamp_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

const RGB_TO_YCC: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.1687, -0.3313, 0.5],
    [0.5, -0.4187, -0.0813],
];
const YCC_OFFSET: [f64; 3] = [0.0, 128.0, 128.0];
const YCC_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [1.0, -0.34414, -0.71414],
    [1.0, 1.772, 0.0],
];
/// `−M·(0, 128, 128)` for the inverse matrix.
const RGB_OFFSET: [f64; 3] = [-179.456, 135.45984, -226.816];

fn affine(img: &ImageU8, m: &[[f64; 3]; 3], off: &[f64; 3]) -> Result<ImageU8> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "colour conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.width * img.height;
    let mut data = vec![0u8; 3 * n];
    for i in 0..n {
        let px = [
            img.data[i] as f64,
            img.data[n + i] as f64,
            img.data[2 * n + i] as f64,
        ];
        for (ch, row) in m.iter().enumerate() {
            let v = row[0] * px[0] + row[1] * px[1] + row[2] * px[2] + off[ch];
            data[ch * n + i] = clamp_u8(v);
        }
    }
    ImageU8::new(img.width, img.height, 3, data)
}

/// JPEG-2000 RGB → YCbCr, rounded half up and clamped.
pub fn rgb_to_ycbcr(img: &ImageU8) -> Result<ImageU8> {
    affine(img, &RGB_TO_YCC, &YCC_OFFSET)
}

pub fn ycbcr_to_rgb(img: &ImageU8) -> Result<ImageU8> {
    affine(img, &YCC_TO_RGB, &RGB_OFFSET)
}

/// Square patches of side `size` at every `stride` step that fits.
pub fn extract_patches(img: &ImageU8, size: usize, stride: usize) -> Result<Vec<ImageU8>> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} is not a power of two"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "patch stride must be positive".into(),
        ));
    }
    if size > img.width || size > img.height {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for y in (0..=img.height - size).step_by(stride) {
        for x in (0..=img.width - size).step_by(stride) {
            out.push(img.crop(y, x, size, size)?);
        }
    }
    Ok(out)
}
