//! Compression of an `n x n` sparse matrix into an `m x m` view.
//!
//! Rows and columns are cut into `m` contiguous buckets: the first `p = n % m`
//! buckets hold `q + 1` indices and the rest hold `q = n / m`. Each view cell
//! keeps the sum `V` and the count `C` of the stored entries that land in it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sparse::{CooMatrix, CsrMatrix};
use crate::{Error, Result};

pub const DEFAULT_M: usize = 50;

#[derive(Debug, Clone, Copy)]
struct Buckets {
    q: usize,
    p: usize,
    t: usize,
}

impl Buckets {
    fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::InvalidArgument(format!(
                "view size m = {m} must satisfy 1 <= m <= n = {n}"
            )));
        }
        let q = n / m;
        let p = n % m;
        Ok(Self { q, p, t: (q + 1) * p })
    }

    #[inline]
    fn index(&self, row: usize) -> usize {
        if row < self.t {
            row / (self.q + 1)
        } else {
            (row - self.t) / self.q + self.p
        }
    }
}

/// Bucketed sums and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    m: usize,
    n: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl View {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Dimension of the pooled matrix.
    pub fn source_n(&self) -> usize {
        self.n
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sum(&self, i: usize, j: usize) -> f64 {
        self.sums[i * self.m + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.m + j]
    }

    pub fn from_parts(m: usize, n: usize, sums: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if sums.len() != m * m || counts.len() != m * m {
            return Err(Error::DimensionMismatch(format!(
                "view of size {m} needs {} cells, got {} sums and {} counts",
                m * m,
                sums.len(),
                counts.len()
            )));
        }
        Ok(Self { m, n, sums, counts })
    }

    /// Payload bytes: `m^2` little-endian `f64` sums then `m^2` `u64` counts,
    /// both row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 * self.sums.len());
        for v in &self.sums {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(m: usize, n: usize, bytes: &[u8]) -> Result<Self> {
        let cells = m * m;
        if bytes.len() != 16 * cells {
            return Err(Error::Format(format!(
                "view payload of {} bytes, expected {}",
                bytes.len(),
                16 * cells
            )));
        }
        let (s, c) = bytes.split_at(8 * cells);
        let sums = s
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let counts = c
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { m, n, sums, counts })
    }
}

fn check_square(n_rows: usize, n_cols: usize) -> Result<usize> {
    if n_rows != n_cols {
        return Err(Error::DimensionMismatch(format!(
            "pooling needs a square matrix, got {n_rows}x{n_cols}"
        )));
    }
    Ok(n_rows)
}

/// Pools a COO matrix entry by entry.
pub fn pooling(a: &CooMatrix, m: usize) -> Result<View> {
    let n = check_square(a.n_rows(), a.n_cols())?;
    let b = Buckets::new(n, m)?;
    let mut sums = vec![0.0; m * m];
    let mut counts = vec![0u64; m * m];
    for (r, c, v) in a.iter() {
        let k = b.index(r) * m + b.index(c);
        sums[k] += v;
        counts[k] += 1;
    }
    Ok(View { m, n, sums, counts })
}

/// Same result as [`pooling`] on the COO form of `a`, using a column lookup table.
pub fn pooling_csr(a: &CsrMatrix, m: usize) -> Result<View> {
    let n = check_square(a.n_rows(), a.n_cols())?;
    let b = Buckets::new(n, m)?;
    let col_bucket: Vec<u32> = (0..n).map(|c| b.index(c) as u32).collect();
    let mut sums = vec![0.0; m * m];
    let mut counts = vec![0u64; m * m];
    let (rp, ci, vals) = (a.row_ptr(), a.col_idx(), a.values());
    for r in 0..n {
        let base = b.index(r) * m;
        for k in rp[r]..rp[r + 1] {
            let cell = base + col_bucket[ci[k]] as usize;
            sums[cell] += vals[k];
            counts[cell] += 1;
        }
    }
    Ok(View { m, n, sums, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum NormalizationMode {
    #[default]
    #[serde(rename = "sum-standard")]
    SumStandard,
    #[serde(rename = "sum-scaled")]
    SumScaled,
    #[serde(rename = "mean-standard")]
    MeanStandard,
    #[serde(rename = "mean-scaled")]
    MeanScaled,
}

impl NormalizationMode {
    pub const ALL: [NormalizationMode; 4] = [
        NormalizationMode::SumStandard,
        NormalizationMode::SumScaled,
        NormalizationMode::MeanStandard,
        NormalizationMode::MeanScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormalizationMode::SumStandard => "sum-standard",
            NormalizationMode::SumScaled => "sum-scaled",
            NormalizationMode::MeanStandard => "mean-standard",
            NormalizationMode::MeanScaled => "mean-scaled",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown normalization code {c}")))
    }

    fn uses_mean(self) -> bool {
        matches!(
            self,
            NormalizationMode::MeanStandard | NormalizationMode::MeanScaled
        )
    }

    fn is_standard(self) -> bool {
        matches!(
            self,
            NormalizationMode::SumStandard | NormalizationMode::MeanStandard
        )
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown normalization mode '{s}'")))
    }
}

/// Network input: an `m x m` row-major array and the mode that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedView {
    pub m: usize,
    pub mode: NormalizationMode,
    pub values: Vec<f64>,
}

/// Mean modes first divide by the counts (empty cells stay 0); standard
/// modes then subtract the mean over all `m^2` cells and divide by the
/// population standard deviation, scaled modes divide by the largest
/// absolute value.
pub fn normalize(v: &View, mode: NormalizationMode) -> Result<NormalizedView> {
    let mut x: Vec<f64> = if mode.uses_mean() {
        v.sums
            .iter()
            .zip(&v.counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    } else {
        v.sums.clone()
    };
    let cells = x.len() as f64;
    if mode.is_standard() {
        let mean = x.iter().sum::<f64>() / cells;
        let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / cells;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!(
                "constant view cannot be standardized ({mode})"
            )));
        }
        x.iter_mut().for_each(|a| *a = (*a - mean) / sd);
    } else {
        let max = x.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if !(max > 0.0) {
            return Err(Error::Degenerate(format!("all-zero view cannot be scaled ({mode})")));
        }
        x.iter_mut().for_each(|a| *a /= max);
    }
    Ok(NormalizedView {
        m: v.m,
        mode,
        values: x,
    })
}
