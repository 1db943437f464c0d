//! Binary PGM (P5, 8 and 16 bit) and PPM (P6) images.

use std::fs;
use std::path::Path;

use ctl_core::image::{GrayImage, RgbImage};

use crate::error::{format_err, io_err, CtlError, Result};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 {
        return Err("file too short for a netpbm header".into());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated netpbm header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        *field = text.parse().map_err(|_| format!("bad header field {text:?}"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported dimensions {width}x{height} or maxval {maxval}"));
    }
    Ok(Header { magic, width: width as usize, height: height as usize, maxval: maxval as u32, offset: pos })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> std::result::Result<&'a [u8], String> {
    let depth = if h.maxval > 255 { 2 } else { 1 };
    let need = h.width * h.height * channels * depth;
    bytes.get(h.offset..h.offset + need).ok_or_else(|| format!("pixel data truncated: need {need} bytes"))
}

/// Decode a P5 image; 16-bit samples are big-endian. Values keep their
/// integer scale (0..=maxval).
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(GrayImage, u32), String> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err("not a binary PGM (P5) file".into());
    }
    let data = payload(bytes, &h, 1)?;
    let pixels: Vec<f32> = if h.maxval > 255 {
        data.chunks_exact(2).map(|c| f32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    } else {
        data.iter().map(|&b| f32::from(b)).collect()
    };
    let img = GrayImage::new(h.width, h.height, pixels).map_err(|e| e.to_string())?;
    Ok((img, h.maxval))
}

pub fn encode_pgm8(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

/// 16-bit PGM of values in `[0, 1]` scaled to 0..=65535.
pub fn encode_pgm16_unit(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.pixels() {
        let q = (f64::from(v).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend(q.to_be_bytes());
    }
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" || h.maxval > 255 {
        return Err("not an 8-bit binary PPM (P6) file".into());
    }
    let data = payload(bytes, &h, 3)?;
    Ok(RgbImage { width: h.width, height: h.height, data: data.to_vec() })
}

/// Read an 8-bit P5 image.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (img, maxval) = decode_pgm(&bytes).map_err(|m| format_err(path, m))?;
    if maxval > 255 {
        return Err(format_err(path, "expected an 8-bit PGM"));
    }
    Ok(img)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm8(img))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|m| CtlError::Format { path: path.into(), message: m })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm8_round_trip_with_comment() {
        let img = GrayImage::from_fn(3, 2, |r, c| (r * 3 + c) as f32 * 40.0);
        let (back, maxval) = decode_pgm(&encode_pgm8(&img)).unwrap();
        assert_eq!((back, maxval), (img, 255));
        let commented = b"P5\n# note\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(commented).unwrap().0.pixels(), &[1.0, 2.0]);
        assert!(decode_pgm(b"P5\n2 2\n255\n\x01").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n1").is_err());
    }

    #[test]
    fn pgm16_scales_unit_values() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let (back, maxval) = decode_pgm(&encode_pgm16_unit(&img)).unwrap();
        assert_eq!(maxval, 65535);
        assert_eq!(back.pixels(), &[0.0, 65535.0]);
    }
}
