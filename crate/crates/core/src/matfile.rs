//! `LANTKMAT` binary matrices: 8-byte magic, u32 rows, u32 cols, then
//! row-major little-endian f64. A JSON sidecar (`<file>.json`) carries
//! provenance when there is any.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};

pub const MAGIC: &[u8; 8] = b"LANTKMAT";

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix_to<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| LantkError::invalid("too many rows"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| LantkError::invalid("too many columns"))?;
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    read_matrix_from(&mut r)
}

pub fn read_matrix_from<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LantkError::invalid("not a LANTKMAT file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut data = vec![0u8; rows * cols * 8];
    r.read_exact(&mut data)?;
    let vals: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let f = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), meta)?;
    Ok(())
}

pub fn read_sidecar<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(sidecar_path(path))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_in_memory() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.0, 1e-300, f64::MAX]);
        let mut buf = Vec::new();
        write_matrix_to(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf.len(), 16 + 6 * 8);
        // row-major: second value on disk is m[(0,1)]
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), -2.5);
        let back = read_matrix_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bad_magic() {
        let buf = b"NOTAMATX\0\0\0\0\0\0\0\0".to_vec();
        assert!(read_matrix_from(&mut buf.as_slice()).is_err());
    }
}
