//! Container framing.
//!
//! ```text
//! "NWF1" version:u8 width:u16 height:u16 channels:u8 colorspace:u8
//! scheme:u8 iterations:u8 model_hash:u64 payload_len:u32
//! bounds: (zigzag(lo) varint, hi−lo varint) for the final block, then one
//!         pair per level from the deepest to the finest
//! payload: rANS stream
//! ```

use crate::error::{Error, Result};
use crate::flow::Scheme;

pub const CONTAINER_MAGIC: &[u8; 4] = b"NWF1";
pub const CONTAINER_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

impl ColorSpace {
    pub fn code(self) -> u8 {
        match self {
            ColorSpace::Rgb => 0,
            ColorSpace::YCbCr => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ColorSpace::Rgb),
            1 => Ok(ColorSpace::YCbCr),
            _ => Err(Error::Corrupt(format!("unknown colour space {code}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub colorspace: ColorSpace,
    pub scheme: Scheme,
    pub iterations: u8,
    pub model_hash: u64,
    pub payload_len: u32,
    /// Inclusive coefficient range of the final block, then of each level's
    /// high-pass planes, deepest level first.
    pub bounds: Vec<(i64, i64)>,
}

impl ContainerHeader {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.channels);
        out.push(self.colorspace.code());
        out.push(self.scheme.code());
        out.push(self.iterations);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
        for &(lo, hi) in &self.bounds {
            write_varint(out, zigzag(lo));
            write_varint(out, (hi - lo) as u64);
        }
    }

    /// Parses a header and returns it with the offset of the payload.
    pub fn read(bytes: &[u8]) -> Result<(Self, usize)> {
        const FIXED: usize = 25;
        if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Parse("not a compressed image (bad magic)".into()));
        }
        if bytes.len() < FIXED {
            return Err(Error::Truncated("container header".into()));
        }
        let version = bytes[4];
        if version != CONTAINER_VERSION {
            return Err(Error::Unsupported(format!("container version {version}")));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let scheme = Scheme::from_code(bytes[11]).map_err(|e| Error::Corrupt(e.to_string()))?;
        let mut header = Self {
            version,
            width: u16_at(5),
            height: u16_at(7),
            channels: bytes[9],
            colorspace: ColorSpace::from_code(bytes[10])?,
            scheme,
            iterations: bytes[12],
            model_hash: u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")),
            payload_len: u32::from_le_bytes(bytes[21..25].try_into().expect("4 bytes")),
            bounds: Vec::new(),
        };
        let mut pos = FIXED;
        for _ in 0..=header.iterations {
            let lo = unzigzag(read_varint(bytes, &mut pos)?);
            let span = read_varint(bytes, &mut pos)?;
            let hi = i64::try_from(span)
                .ok()
                .and_then(|s| lo.checked_add(s))
                .ok_or_else(|| Error::Corrupt("support bound overflow".into()))?;
            header.bounds.push((lo, hi));
        }
        Ok((header, pos))
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| Error::Truncated("container bounds".into()))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Corrupt("varint longer than 64 bits".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_round_trip() {
        for v in [0i64, -1, 1, -300, 255, i16::MIN as i64, i16::MAX as i64] {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
        assert_eq!(zigzag(-1), 1);
        assert_eq!(zigzag(1), 2);
    }

    #[test]
    fn header_round_trip() {
        let h = ContainerHeader {
            version: CONTAINER_VERSION,
            width: 64,
            height: 32,
            channels: 3,
            colorspace: ColorSpace::YCbCr,
            scheme: Scheme::Quadrant,
            iterations: 2,
            model_hash: 0x0123_4567_89ab_cdef,
            payload_len: 777,
            bounds: vec![(0, 255), (-300, 12), (-1, -1)],
        };
        let mut out = Vec::new();
        h.write(&mut out);
        let (back, pos) = ContainerHeader::read(&out).unwrap();
        assert_eq!(back, h);
        assert_eq!(pos, out.len());
        assert!(matches!(
            ContainerHeader::read(&out[..pos - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            ContainerHeader::read(b"NWF2"),
            Err(Error::Parse(_))
        ));
    }
}
