//! Binary tensor files.
//!
//! Layout (all little-endian): the 6 magic bytes `DTNSR1`, the order as a
//! `u32`, one `u64` per mode size, then the payload as `f64` values in
//! storage order (first index fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TpgError};
use crate::tensor::DenseTensor;

const MAGIC_PREFIX: &[u8; 5] = b"DTNSR";
const VERSION: u8 = b'1';

pub fn write_tensor<W: Write>(t: &DenseTensor, mut w: W) -> Result<()> {
    w.write_all(MAGIC_PREFIX)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut magic = [0u8; 6];
    read_header_bytes(&mut r, &mut magic, "magic")?;
    if &magic[..5] != MAGIC_PREFIX {
        return Err(TpgError::MalformedHeader(format!(
            "bad magic bytes {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    if magic[5] != VERSION {
        return Err(TpgError::UnsupportedVersion(format!(
            "format version {:?}",
            magic[5] as char
        )));
    }
    let mut buf4 = [0u8; 4];
    read_header_bytes(&mut r, &mut buf4, "order")?;
    let order = u32::from_le_bytes(buf4) as usize;
    if order == 0 {
        return Err(TpgError::MalformedHeader("order is zero".into()));
    }
    let mut shape = Vec::with_capacity(order.min(64));
    let mut buf8 = [0u8; 8];
    for _ in 0..order {
        read_header_bytes(&mut r, &mut buf8, "mode size")?;
        let d = u64::from_le_bytes(buf8);
        if d == 0 {
            return Err(TpgError::MalformedHeader("mode size is zero".into()));
        }
        shape.push(usize::try_from(d).map_err(|_| {
            TpgError::MalformedHeader(format!("mode size {d} does not fit in memory"))
        })?);
    }
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TpgError::MalformedHeader(format!("shape {shape:?} overflows")))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(TpgError::TruncatedPayload {
            expected,
            found: payload.len() / 8,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    DenseTensor::new(shape, data)
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            TpgError::MalformedHeader(format!("file ends inside the {what} field"))
        }
        _ => TpgError::Io(e),
    })
}

pub fn tensor_write(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(t, BufWriter::new(File::create(path)?))
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn encoded(t: &DenseTensor) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensor(t, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = crate::rng::seeded(11);
        let t = DenseTensor::from_fn(&[3, 4, 5], |_| rng.random::<f64>() - 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dtnsr");
        tensor_write(&t, &path).unwrap();
        let back = tensor_read(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let t = DenseTensor::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let buf = encoded(&t);
        assert_eq!(&buf[..6], b"DTNSR1");
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..18], &2u64.to_le_bytes());
        assert_eq!(&buf[18..26], &1u64.to_le_bytes());
        assert_eq!(&buf[26..34], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 42);
    }

    #[test]
    fn wrong_magic_is_malformed_header() {
        let mut buf = encoded(&DenseTensor::zeros(&[2]).unwrap());
        buf[0] = b'X';
        assert!(matches!(
            read_tensor(&buf[..]),
            Err(TpgError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_tensor(&b"DTN"[..]),
            Err(TpgError::MalformedHeader(_))
        ));
    }

    #[test]
    fn short_payload_is_truncated() {
        let buf = encoded(&DenseTensor::zeros(&[2, 3]).unwrap());
        let err = read_tensor(&buf[..buf.len() - 8]).unwrap_err();
        assert!(matches!(
            err,
            TpgError::TruncatedPayload {
                expected: 6,
                found: 5
            }
        ));
    }

    #[test]
    fn other_version_is_unsupported() {
        let mut buf = encoded(&DenseTensor::zeros(&[2]).unwrap());
        buf[5] = b'2';
        assert!(matches!(
            read_tensor(&buf[..]),
            Err(TpgError::UnsupportedVersion(_))
        ));
    }
}
