//! MatrixMarket `coordinate real general` reader and writer.

use std::io::{BufRead, Write};

use super::{CooMatrix, CsrMatrix};
use crate::{Error, Result};

pub fn write_matrix_market<W: Write>(a: &CsrMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for i in 0..a.n_rows() {
        for (j, v) in a.row(i) {
            // {:e} on f64 round-trips exactly
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
    }
    Ok(())
}

/// Reads `real`/`integer` coordinate files; `symmetric` files are expanded.
pub fn read_matrix_market<R: BufRead>(r: R) -> Result<CsrMatrix> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty MatrixMarket file".into()))??;
    let lower = header.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Format(format!("bad header: {header}")));
    }
    if tokens[2] != "coordinate" {
        return Err(Error::Format("only coordinate format is supported".into()));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(Error::Format(format!("unsupported field '{}'", tokens[3])));
    }
    let symmetric = match tokens[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Format(format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut coo: Option<CooMatrix> = None;
    let mut seen = 0usize;
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if parts.len() != 3 {
                    return Err(Error::Format(format!("bad size line: {t}")));
                }
                let p = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad size line: {t}")))
                };
                let dims = (p(parts[0])?, p(parts[1])?, p(parts[2])?);
                coo = Some(CooMatrix::with_capacity(dims.0, dims.1, dims.2));
                size = Some(dims);
            }
            Some(_) => {
                if parts.len() != 3 {
                    return Err(Error::Format(format!("bad entry line: {t}")));
                }
                let bad = || Error::Format(format!("bad entry line: {t}"));
                let i: usize = parts[0].parse().map_err(|_| bad())?;
                let j: usize = parts[1].parse().map_err(|_| bad())?;
                let v: f64 = parts[2].parse().map_err(|_| bad())?;
                if i == 0 || j == 0 {
                    return Err(Error::Format("MatrixMarket indices are 1-based".into()));
                }
                let m = coo.as_mut().expect("size line parsed");
                m.push(i - 1, j - 1, v)?;
                if symmetric && i != j {
                    m.push(j - 1, i - 1, v)?;
                }
                seen += 1;
            }
        }
    }
    let (_, _, nnz) = size.ok_or_else(|| Error::Format("missing size line".into()))?;
    if seen != nnz {
        return Err(Error::Format(format!("expected {nnz} entries, found {seen}")));
    }
    Ok(coo.expect("size line parsed").to_csr())
}
