//! Binary PGM (`P5`) rasters, 8- or 16-bit.

use anyhow::{bail, Context, Result};

pub fn encode8(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Samples are written big-endian as the format requires.
pub fn encode16(width: usize, height: usize, pixels: &[u16]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        bail!("truncated PGM header");
    }
    Ok(std::str::from_utf8(&bytes[start..*pos])?)
}

pub fn decode(bytes: &[u8]) -> Result<Gray> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != "P5" {
        bail!("not a binary PGM");
    }
    let width: usize = token(bytes, &mut pos)?.parse().context("PGM width")?;
    let height: usize = token(bytes, &mut pos)?.parse().context("PGM height")?;
    let maxval: u16 = token(bytes, &mut pos)?.parse().context("PGM maxval")?;
    pos += 1;
    let n = width * height;
    let body = bytes.get(pos..).unwrap_or_default();
    let pixels = if maxval < 256 {
        if body.len() != n {
            bail!("PGM body has {} bytes, expected {n}", body.len());
        }
        body.iter().map(|&b| u16::from(b)).collect()
    } else {
        if body.len() != 2 * n {
            bail!("PGM body has {} bytes, expected {}", body.len(), 2 * n);
        }
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok(Gray { width, height, maxval, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let g = decode(&encode8(3, 2, &[0, 128, 255, 1, 2, 3])).unwrap();
        assert_eq!((g.width, g.height, g.maxval), (3, 2, 255));
        assert_eq!(g.pixels, vec![0, 128, 255, 1, 2, 3]);
        let g = decode(&encode16(2, 1, &[65535, 258])).unwrap();
        assert_eq!(g.pixels, vec![65535, 258]);
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
    }
}
