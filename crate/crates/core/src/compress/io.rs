//! Projection files: magic `OBSPROJ1`, kind byte (0 = OC, 1 = IC),
//! `u64` max rank, `u64` clamped-negative count, `u64` spectrum length and
//! the spectrum as `f64`, then `L_q` and the build-time `R` in the binary
//! matrix layout. All integers and floats little-endian.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DVector;

use super::{ProjectionKind, ProjectionOperator};
use crate::covkit::{read_matrix_bin, write_matrix_bin, CovarianceMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OBSPROJ1";

pub fn write_projection<W: Write>(mut w: W, p: &ProjectionOperator) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[match p.kind() {
        ProjectionKind::Oc => 0u8,
        ProjectionKind::Ic => 1u8,
    }])?;
    w.write_all(&(p.max_rank() as u64).to_le_bytes())?;
    w.write_all(&(p.clamped_negatives() as u64).to_le_bytes())?;
    w.write_all(&(p.spectrum().len() as u64).to_le_bytes())?;
    for v in p.spectrum().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    write_matrix_bin(&mut w, p.basis())?;
    write_matrix_bin(&mut w, p.built_with().matrix())?;
    Ok(())
}

pub fn read_projection<R: Read>(mut r: R) -> Result<ProjectionOperator> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a projection file".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = match kind[0] {
        0 => ProjectionKind::Oc,
        1 => ProjectionKind::Ic,
        k => return Err(Error::Format(format!("unknown projection kind byte {k}"))),
    };
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<usize> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word) as usize)
    };
    let max_rank = next_u64(&mut r)?;
    let clamped = next_u64(&mut r)?;
    let len = next_u64(&mut r)?;
    let mut spectrum = DVector::zeros(len);
    let mut buf = [0u8; 8];
    for i in 0..len {
        r.read_exact(&mut buf)?;
        spectrum[i] = f64::from_le_bytes(buf);
    }
    let basis = read_matrix_bin(&mut r)?;
    let rmat = read_matrix_bin(&mut r)?;
    ProjectionOperator::from_parts(
        kind,
        basis,
        Arc::new(CovarianceMatrix::new(rmat)?),
        spectrum,
        max_rank,
        clamped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::build_ic;
    use nalgebra::DMatrix;

    #[test]
    fn projection_roundtrip() {
        let hbht = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let r = Arc::new(CovarianceMatrix::from_diagonal(&[1.0, 2.0, 0.5]).unwrap());
        let p = build_ic(&hbht, r, 2).unwrap();
        let mut buf = Vec::new();
        write_projection(&mut buf, &p).unwrap();
        let back = read_projection(buf.as_slice()).unwrap();
        assert_eq!(back.basis(), p.basis());
        assert_eq!(back.spectrum(), p.spectrum());
        assert_eq!(back.kind(), ProjectionKind::Ic);
        assert_eq!(back.max_rank(), 3);
        assert_eq!(back.built_with().matrix(), p.built_with().matrix());
        assert!(read_projection(&b"NOTAPROJ"[..]).is_err());
    }
}
