//! Matrix files: CSV (one line per row, 17 significant digits) and a raw
//! little-endian binary layout `u64 rows, u64 cols, rows*cols f64` in
//! row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}: {s:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {} has {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
}

pub fn write_matrix_bin<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let nrows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let ncols = u64::from_le_bytes(word) as usize;
    let len = nrows
        .checked_mul(ncols)
        .ok_or_else(|| Error::Format(format!("matrix header {nrows}x{ncols} overflows")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, data))
}

pub(crate) fn save_bin(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_bin(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn load_bin(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_bin(BufReader::new(File::open(path)?))
}

pub(crate) fn save_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_csv(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn load_csv(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_csv(File::open(path)?)
}

/// Loads a matrix, choosing the format from the extension (`.csv` or binary).
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_csv(path),
        _ => load_bin(path),
    }
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => save_csv(path, m),
        _ => save_bin(path, m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_layout_is_row_major_le() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_matrix_bin(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[0..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[24..32], &2.0f64.to_le_bytes());
        assert_eq!(&buf[40..48], &4.0f64.to_le_bytes());
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(read_matrix_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_matrix_csv("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn truncated_binary_fails() {
        let mut buf = Vec::new();
        write_matrix_bin(&mut buf, &DMatrix::from_element(2, 2, 1.0)).unwrap();
        buf.truncate(30);
        assert!(read_matrix_bin(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn both_formats_roundtrip_exactly(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let m = DMatrix::from_fn(rows, cols, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((s >> 12) | 0x3ff0_0000_0000_0000) * if s & 1 == 0 { 1e-7 } else { -3e5 }
            });
            let mut bin = Vec::new();
            write_matrix_bin(&mut bin, &m).unwrap();
            prop_assert_eq!(read_matrix_bin(bin.as_slice()).unwrap(), m.clone());
            if rows > 0 {
                let mut csv = Vec::new();
                write_matrix_csv(&mut csv, &m).unwrap();
                prop_assert_eq!(read_matrix_csv(csv.as_slice()).unwrap(), m);
            }
        }
    }
}
