//! Binary PPM (`P6`) images and PGM (`P5`) masks, maxval 255 only.

use crate::error::{format_err, invalid, Result};
use crate::tensor::{Shape, Tensor};

use super::Mask;

/// Nearest 8-bit level of `v ∈ [0, 1]`, halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn write_image_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(invalid(format!("PPM image must be 1x3xHxW, got {s}")));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("PPM image values must lie in [0, 1]"));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(3 * s.plane());
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(quantize(image.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn read_image_ppm(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, payload) = parse_header(bytes, b"P6", "PPM")?;
    expect_payload(payload, 3 * w * h, "PPM")?;
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                t.set(0, c, y, x, payload[3 * (y * w + x) + c] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

pub fn write_mask_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    out
}

pub fn read_mask_pgm(bytes: &[u8]) -> Result<Mask> {
    let (w, h, payload) = parse_header(bytes, b"P5", "PGM")?;
    expect_payload(payload, w * h, "PGM")?;
    Mask::new(h, w, payload.to_vec())
}

fn expect_payload(payload: &[u8], n: usize, what: &'static str) -> Result<()> {
    if payload.len() < n {
        return Err(format_err(
            what,
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(format_err(
            what,
            format!("{} trailing bytes after payload", payload.len() - n),
        ));
    }
    Ok(())
}

/// Parses `magic width height maxval` and returns the payload after the
/// single whitespace byte that ends the header. `#` comments are skipped.
fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 2],
    what: &'static str,
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            what,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
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
            return Err(format_err(what, "malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(what, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(what, "header not terminated by whitespace")),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(what, format!("maxval {maxval} unsupported (expected 255)")));
    }
    if w == 0 || h == 0 {
        return Err(format_err(what, format!("empty image {w}x{h}")));
    }
    Ok((w, h, &bytes[pos..]))
}
