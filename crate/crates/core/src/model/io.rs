//! Plain-text serialization.
//!
//! Matrix: first line `M N L`, then one line per column with its `L`
//! 0-based row indices separated by spaces. Vectors: one decimal real per
//! line.

use std::io::{BufRead, Write};

use super::SensingMatrix;
use crate::error::{Error, Result};

pub fn write_matrix<W: Write>(matrix: &SensingMatrix, mut out: W) -> Result<()> {
    writeln!(out, "{} {} {}", matrix.m(), matrix.n(), matrix.column_weight())?;
    for i in 0..matrix.n() {
        let line: Vec<String> = matrix.column(i).iter().map(|j| j.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<SensingMatrix> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let dims = parse_usizes(&header, 1)?;
    let [m, n, l] = dims[..] else {
        return Err(Error::Parse(format!("header `{header}` must be `M N L`")));
    };
    let mut columns = Vec::with_capacity(n);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let col = parse_usizes(&line, k + 2)?;
        if col.len() != l {
            return Err(Error::Parse(format!(
                "line {}: expected {l} row indices, found {}",
                k + 2,
                col.len()
            )));
        }
        columns.push(col);
    }
    if columns.len() != n {
        return Err(Error::Parse(format!("expected {n} columns, found {}", columns.len())));
    }
    SensingMatrix::from_columns(m, columns)
}

pub fn write_vector<W: Write>(v: &[f64], mut out: W) -> Result<()> {
    for x in v {
        writeln!(out, "{x}")?;
    }
    Ok(())
}

pub fn read_vector<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        v.push(
            t.parse()
                .map_err(|e| Error::Parse(format!("line {}: `{t}`: {e}", k + 1)))?,
        );
    }
    Ok(v)
}

fn parse_usizes(line: &str, lineno: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|e| Error::Parse(format!("line {lineno}: `{t}`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_matrix, seeded_rng};
    use proptest::prelude::*;

    #[test]
    fn matrix_text_layout() {
        let m = SensingMatrix::from_columns(3, vec![vec![0, 2], vec![1, 2]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "3 2 2\n0 2\n1 2\n");
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);
    }

    #[test]
    fn malformed_matrix_rejected() {
        assert!(read_matrix("3 2 2\n0 2\n".as_bytes()).is_err());
        assert!(read_matrix("3 2 2\n0 2\n1\n".as_bytes()).is_err());
        assert!(read_matrix("3 2\n".as_bytes()).is_err());
        assert!(read_matrix("2 1 1\n5\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn matrix_roundtrip(seed in any::<u64>(), m in 2usize..20, n in 1usize..30, l in 1usize..3) {
            let mat = generate_matrix(m, n, l.min(m), &mut seeded_rng(seed, 0)).unwrap();
            let mut buf = Vec::new();
            write_matrix(&mat, &mut buf).unwrap();
            prop_assert_eq!(read_matrix(&buf[..]).unwrap(), mat);
        }

        #[test]
        fn vector_roundtrip(v in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let mut buf = Vec::new();
            write_vector(&v, &mut buf).unwrap();
            prop_assert_eq!(read_vector(&buf[..]).unwrap(), v);
        }
    }
}
