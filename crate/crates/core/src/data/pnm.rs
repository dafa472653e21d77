//! Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only.

use std::fs;
use std::path::Path;

use super::image::{rgb_to_gray, GrayImage, RgbImage};
use crate::error::{Error, Result};

/// A decoded netpbm image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pnm {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Pnm {
    pub fn into_gray(self) -> GrayImage {
        match self {
            Pnm::Gray(g) => g,
            Pnm::Rgb(rgb) => rgb_to_gray(&rgb),
        }
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(Error::Format("expected a P5 or P6 magic number".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("header must end with a single whitespace byte".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit images (maxval 255) are supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("{width}x{height} image has no pixels")));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        payload_offset: pos,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let header = parse_header(bytes)?;
    let channels = if header.magic[1] == b'5' { 1 } else { 3 };
    let expected = header.width * header.height * channels;
    let payload = &bytes[header.payload_offset..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    Ok(if channels == 1 {
        Pnm::Gray(GrayImage::new(header.width, header.height, payload.to_vec())?)
    } else {
        Pnm::Rgb(RgbImage {
            width: header.width,
            height: header.height,
            pixels: payload.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        })
    })
}

/// Reads a P5 file, or a P6 file converted to grayscale.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?.into_gray())
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for px in &image.pixels {
        out.extend_from_slice(px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_p5() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4]);
        let img = decode(&bytes).unwrap().into_gray();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), [1, 2, 3, 4]);
    }

    #[test]
    fn header_comments_skipped() {
        let mut bytes = b"P5\n# made by hand\n3 1 # width height\n255\n".to_vec();
        bytes.extend([9, 8, 7]);
        assert_eq!(decode(&bytes).unwrap().into_gray().pixels(), [9, 8, 7]);
    }

    #[test]
    fn sixteen_bit_rejected() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0, 0]);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_short_payload() {
        assert!(matches!(decode(b"P2\n1 1\n255\n0"), Err(Error::Format(_))));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x01\x02"),
            Err(Error::Truncated { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn p6_converts_through_luma() {
        let rgb = RgbImage {
            width: 3,
            height: 1,
            pixels: vec![[255, 255, 255], [0, 0, 0], [255, 0, 0]],
        };
        let gray = decode(&encode_ppm(&rgb)).unwrap().into_gray();
        assert_eq!(gray.pixels(), [255, 0, 76]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = GrayImage::from_fn(48, 48, |x, y| (x * 31 + y * 17) as u8).unwrap();
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
        assert!(matches!(read_pgm(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }
}
