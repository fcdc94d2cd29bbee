//! `FPW1` parameter checkpoints.
//!
//! After the 4-byte magic, each parameter is stored as: name (u8 length +
//! ASCII), rank (u32), one u32 per extent, then the values as little-endian
//! `f64`. Records run to the end of the file.

use std::io::{Read, Write};

use super::Tensor;
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"FPW1";

pub fn write_checkpoint<W: Write>(mut w: W, params: &[(String, Tensor)]) -> Result<()> {
    w.write_all(&WEIGHTS_MAGIC)?;
    for (name, t) in params {
        if !name.is_ascii() || name.len() > u8::MAX as usize {
            return Err(Error::Malformed(format!("parameter name {name:?} must be ASCII and at most 255 bytes")));
        }
        w.write_all(&[name.len() as u8])?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Malformed(format!("extent {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::BadMagic { expected: WEIGHTS_MAGIC, found: bytes[..bytes.len().min(4)].to_vec() });
    }
    let mut pos = 4;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Truncated { expected: (*pos + n) as u64, actual: bytes.len() as u64 });
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]) as usize;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let len = take(&mut pos, 1)?[0] as usize;
        let name = take(&mut pos, len)?;
        if !name.is_ascii() {
            return Err(Error::Malformed("parameter name is not ASCII".into()));
        }
        let name = String::from_utf8(name.to_vec()).expect("ascii");
        let rank = u32_at(take(&mut pos, 4)?);
        let shape = (0..rank).map(|_| take(&mut pos, 4).map(u32_at)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let params = vec![
            ("a.kernel".to_string(), Tensor::from_fn(&[3, 3, 2, 4], |i| (i as f64).sin() * 1e-3)),
            ("a.bias".to_string(), Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params).unwrap();
        let back = decode_checkpoint(&buf).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in params.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert!(t0.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(decode_checkpoint(b"FPC1"), Err(Error::BadMagic { .. })));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w".into(), Tensor::zeros(&[4]))]).unwrap();
        assert!(matches!(decode_checkpoint(&buf[..buf.len() - 3]), Err(Error::Truncated { .. })));
    }
}
