//! ASCII triplet export of operators for cross-checking with external
//! tools. Real matrices: header `sparse N M nnz`, then `i j value`.
//! Complex matrices: header `complex N M nnz`, then `i j re im`. Indices
//! are 0-based.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::{Error, Result};

pub fn sparse_to_text(m: &CsrMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "sparse {} {} {}", m.nrows, m.ncols, m.nnz());
    for (i, j, v) in m.triplets() {
        let _ = writeln!(s, "{i} {j} {v:.17e}");
    }
    s
}

/// Nonzero entries only.
pub fn complex_to_text(m: &DMatrix<Complex64>) -> String {
    let entries: Vec<(usize, usize, Complex64)> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, m[(i, j)]))
        .filter(|e| e.2 != Complex64::new(0.0, 0.0))
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, "complex {} {} {}", m.nrows(), m.ncols(), entries.len());
    for (i, j, z) in entries {
        let _ = writeln!(s, "{i} {j} {:.17e} {:.17e}", z.re, z.im);
    }
    s
}

pub fn write_sparse(m: &CsrMatrix, mut w: impl Write) -> Result<()> {
    w.write_all(sparse_to_text(m).as_bytes())?;
    Ok(())
}

pub fn write_complex(m: &DMatrix<Complex64>, mut w: impl Write) -> Result<()> {
    w.write_all(complex_to_text(m).as_bytes())?;
    Ok(())
}

fn parse_err(line: usize, what: &str) -> Error {
    Error::Parse { line, msg: what.to_string() }
}

/// Header fields and data lines (1-based line numbers) of a triplet file.
fn split<'a>(text: &'a str, tag: &str, fields: usize) -> Result<([usize; 3], Vec<(usize, Vec<&'a str>)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| parse_err(1, &format!("expected header '{tag} N M nnz'")))?;
    let h: Vec<&str> = head.split_whitespace().collect();
    if h.len() != 4 || h[0] != tag {
        return Err(parse_err(1, &format!("expected header '{tag} N M nnz'")));
    }
    let mut dims = [0; 3];
    for k in 0..3 {
        dims[k] = h[k + 1].parse().map_err(|_| parse_err(1, "expected integer in header"))?;
    }
    let body: Vec<(usize, Vec<&str>)> = lines.map(|(i, l)| (i + 1, l.split_whitespace().collect())).collect();
    if body.len() != dims[2] {
        return Err(parse_err(1, &format!("header declares {} entries, found {}", dims[2], body.len())));
    }
    for (line, f) in &body {
        if f.len() != fields {
            return Err(parse_err(*line, &format!("expected {fields} fields")));
        }
    }
    Ok((dims, body))
}

fn index(f: &str, bound: usize, line: usize) -> Result<usize> {
    let i: usize = f.parse().map_err(|_| parse_err(line, "expected integer index"))?;
    if i >= bound {
        return Err(Error::IndexOutOfRange { record: format!("line {line}"), msg: format!("index {i} >= {bound}") });
    }
    Ok(i)
}

fn value(f: &str, line: usize) -> Result<f64> {
    f.parse().map_err(|_| parse_err(line, "expected real value"))
}

pub fn sparse_from_text(text: &str) -> Result<CsrMatrix> {
    let ([n, m, _], body) = split(text, "sparse", 3)?;
    let mut b = TripletBuilder::new(n, m);
    for (line, f) in body {
        b.add(index(f[0], n, line)?, index(f[1], m, line)?, value(f[2], line)?);
    }
    Ok(b.build())
}

pub fn complex_from_text(text: &str) -> Result<DMatrix<Complex64>> {
    let ([n, m, _], body) = split(text, "complex", 4)?;
    let mut a = DMatrix::zeros(n, m);
    for (line, f) in body {
        let (i, j) = (index(f[0], n, line)?, index(f[1], m, line)?);
        a[(i, j)] += Complex64::new(value(f[2], line)?, value(f[3], line)?);
    }
    Ok(a)
}
