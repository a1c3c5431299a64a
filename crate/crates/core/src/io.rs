//! Artifact encodings shared by the modules: CSV with 17 significant digits and
//! a little-endian binary column store.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const COLUMN_STORE_MAGIC: &[u8; 8] = b"VLABCOL1";

/// Formats `x` with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv<S: AsRef<str>>(header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    let head: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
    out.push_str(&head.join(","));
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Column store: magic, column count, row count, then for every column its
/// UTF-8 name (length-prefixed) and its values, all little-endian.
pub fn column_store(columns: &[(String, Vec<f64>)]) -> Result<Vec<u8>> {
    let rows = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != rows) {
        return Err(Error::InvalidParameter("columns differ in length".into()));
    }
    let mut out = Vec::with_capacity(24 + columns.len() * (rows * 8 + 16));
    out.extend_from_slice(COLUMN_STORE_MAGIC);
    out.extend_from_slice(&(columns.len() as u64).to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    for (name, values) in columns {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_column_store(bytes: &[u8]) -> Result<Vec<(String, Vec<f64>)>> {
    let bad = || Error::Parse("truncated or malformed column store".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let slice = bytes.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(slice)
    };
    if take(8)? != COLUMN_STORE_MAGIC {
        return Err(Error::Parse("not a column store".into()));
    }
    let word = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("eight bytes")) as usize;
    let ncols = word(take(8)?);
    let nrows = word(take(8)?);
    let mut columns = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let len = word(take(8)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad())?;
        let raw = take(nrows.checked_mul(8).ok_or_else(bad)?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        columns.push((name, values));
    }
    Ok(columns)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn column_store_round_trip() {
        let cols = vec![
            ("a".to_string(), vec![1.0, 2.0]),
            ("bee".to_string(), vec![-0.5, 1e-300]),
        ];
        let bytes = column_store(&cols).unwrap();
        assert_eq!(read_column_store(&bytes).unwrap(), cols);
        assert!(read_column_store(&bytes[..bytes.len() - 1]).is_err());
        assert!(column_store(&[("a".into(), vec![1.0]), ("b".into(), vec![])]).is_err());
    }

    #[test]
    fn csv_layout() {
        let text = csv(&["x", "y"], vec![vec!["1".into(), "2".into()]]);
        assert_eq!(text, "x,y\n1,2\n");
    }
}
