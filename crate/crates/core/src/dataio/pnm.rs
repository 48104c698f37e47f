//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::ImageU8;

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageU8> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Parse(
                "not a binary PGM/PPM (expected P5 or P6)".into(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse("missing whitespace after maxval".into()));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Truncated(format!("raster needs {n} bytes")))?;
    let plane = width * height;
    let mut data = vec![0u8; n];
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = raster[i * channels + c];
        }
    }
    ImageU8::new(width, height, channels, data).map_err(|e| Error::Parse(e.to_string()))
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Parse("header ended early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("expected a number at byte {start}")))
}

pub fn encode_pnm(img: &ImageU8) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    let plane = img.width * img.height;
    out.reserve(img.data.len());
    for i in 0..plane {
        for c in 0..img.channels {
            out.push(img.data[c * plane + i]);
        }
    }
    out
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageU8> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_kinds() {
        for c in [1, 3] {
            let data: Vec<u8> = (0..5 * 3 * c).map(|i| (i * 37 % 256) as u8).collect();
            let img = ImageU8::new(5, 3, c, data).unwrap();
            assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
        }
    }

    #[test]
    fn comments_and_whitespace() {
        let mut bytes = b"P5\n# made by hand\n2 # width\n1\n255\n".to_vec();
        bytes.extend([7, 9]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(
            (img.width, img.height, img.data.clone()),
            (2, 1, vec![7, 9])
        );
    }

    #[test]
    fn interleaved_rgb_becomes_planar() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        assert_eq!(decode_pnm(&bytes).unwrap().data, vec![1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            decode_pnm(b"P3 1 1 255\n1 2 3"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            decode_pnm(b"P5 1 1 65535\n\0\0"),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            decode_pnm(b"P5 4 4 255\n\0"),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(decode_pnm(b"P5 x 4 255\n"), Err(Error::Parse(_))));
        assert!(matches!(decode_pnm(b"P5 0 4 255\n"), Err(Error::Parse(_))));
    }
}
