//! Raw little-endian `f64` arrays on disk.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_f64(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `path` as packed little-endian `f64`, checking the count when given.
pub fn read_f64(path: &Path, expected: Option<usize>) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format { path: path.into(), reason: format!("{} bytes is not a whole number of f64", bytes.len()) });
    }
    let n = bytes.len() / 8;
    if let Some(e) = expected {
        if e != n {
            return Err(Error::Format { path: path.into(), reason: format!("expected {e} values, found {n}") });
        }
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let v = vec![0.1, -0.0, f64::MAX, f64::MIN_POSITIVE, 1e-300];
        write_f64(&p, &v).unwrap();
        let r = read_f64(&p, Some(5)).unwrap();
        assert!(v.iter().zip(&r).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(read_f64(&p, Some(4)).is_err());
        std::fs::write(&p, [0u8; 7]).unwrap();
        assert!(matches!(read_f64(&p, None), Err(Error::Format { .. })));
    }
}
