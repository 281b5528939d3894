//! Matrix files: a binary container (`G3DMAT01`, row and column counts as
//! little-endian u64, then row-major little-endian f64) and a JSON list of
//! rows for small fixtures.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};

use super::AlignError;

pub const MAGIC: &[u8; 8] = b"G3DMAT01";

fn io_err(e: std::io::Error) -> AlignError {
    AlignError::Container(e.to_string())
}

pub fn write_matrix(mut w: impl Write, m: ArrayView2<f64>) -> Result<(), AlignError> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io_err)?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_matrix(mut r: impl Read) -> Result<Array2<f64>, AlignError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(AlignError::Container("bad magic".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(io_err)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io_err)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| AlignError::Container("shape overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != len * 8 {
        return Err(AlignError::Container(format!(
            "expected {} data bytes, found {}",
            len * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn write_matrix_json(m: ArrayView2<f64>) -> String {
    let rows: Vec<Vec<f64>> = m.outer_iter().map(|r| r.to_vec()).collect();
    serde_json::to_string(&rows).expect("finite matrix serializes")
}

pub fn read_matrix_json(text: &str) -> Result<Array2<f64>, AlignError> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| AlignError::Container(e.to_string()))?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(AlignError::Container("ragged rows".into()));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| AlignError::Container(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binary_round_trip() {
        let m = array![[1.5, -2.0, 0.1], [f64::MAX, 0.0, -0.0]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.view()).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 6 * 8);
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);
        assert!(read_matrix(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = array![[0.25, 1.0], [3.0, -4.5]];
        assert_eq!(read_matrix_json(&write_matrix_json(m.view())).unwrap(), m);
        assert!(read_matrix_json("[[1.0],[2.0, 3.0]]").is_err());
    }
}
