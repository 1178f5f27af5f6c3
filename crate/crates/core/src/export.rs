//! Matrix and sample export.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Writes rows as comma-separated values with 17 significant digits.
pub fn write_csv<W: Write>(out: &mut W, matrix: &DenseMatrix, header: Option<&[String]>) -> io::Result<()> {
    if let Some(names) = header {
        writeln!(out, "{}", names.join(","))?;
    }
    let mut line = String::new();
    for i in 0..matrix.rows() {
        line.clear();
        for (j, v) in matrix.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// `rows: u64 LE`, `cols: u64 LE`, then row-major `f64 LE`.
pub fn write_binary<W: Write>(out: &mut W, matrix: &DenseMatrix) -> io::Result<()> {
    out.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    out.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(input: &mut R) -> Result<DenseMatrix> {
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8]> {
        input
            .read_exact(&mut word)
            .map_err(|e| Error::InvalidArgument(format!("truncated matrix file: {e}")))?;
        Ok(word)
    };
    let rows = u64::from_le_bytes(next(input)?) as usize;
    let cols = u64::from_le_bytes(next(input)?) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidArgument("matrix header overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f64::from_le_bytes(next(input)?));
    }
    DenseMatrix::from_row_major(rows, cols, data)
}

pub fn read_csv(text: &str, has_header: bool) -> Result<DenseMatrix> {
    let mut rows = 0;
    let mut cols = None;
    let mut data = Vec::new();
    for line in text.lines().skip(usize::from(has_header)) {
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad CSV value {field:?}: {e}")))?,
            );
        }
        let width = data.len() - before;
        if *cols.get_or_insert(width) != width {
            return Err(Error::InvalidArgument(format!("ragged CSV row {rows}")));
        }
        rows += 1;
    }
    DenseMatrix::from_row_major(rows, cols.unwrap_or(0), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let m = DenseMatrix::from_row_major(1, 2, vec![0.1, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &m, Some(&["a".to_string(), "b".to_string()])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "a,b\n1.0000000000000001e-1,-2.5000000000000000e0\n");
    }

    #[test]
    fn binary_layout() {
        let m = DenseMatrix::from_row_major(1, 1, vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_binary(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 24);
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(&buf[16..], &1.0f64.to_le_bytes());
        assert!(read_binary(&mut &buf[..20]).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(rows in 0usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut s = seed;
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits((s >> 2) | 0x3000_0000_0000_0000) * if s & 1 == 0 { 1.0 } else { -1.0 }
                })
                .collect();
            let m = DenseMatrix::from_row_major(rows, cols, data).unwrap();
            let mut csv = Vec::new();
            write_csv(&mut csv, &m, None).unwrap();
            let back = read_csv(std::str::from_utf8(&csv).unwrap(), false).unwrap();
            if rows > 0 {
                prop_assert_eq!(back.as_slice(), m.as_slice());
            }
            let mut bin = Vec::new();
            write_binary(&mut bin, &m).unwrap();
            let back = read_binary(&mut bin.as_slice()).unwrap();
            prop_assert_eq!(back.rows(), rows);
            prop_assert_eq!(back.as_slice(), m.as_slice());
        }
    }
}
