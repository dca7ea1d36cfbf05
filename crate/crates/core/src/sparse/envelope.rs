use super::CsrMatrix;
use crate::{Error, Result};

/// Cholesky factorization `A = L L^T` stored over the lower envelope
/// (profile) of a symmetric positive definite matrix.
///
/// Row `i` of `L` is kept densely from its first nonzero column up to the
/// diagonal; fill-in never leaves that envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Dot product with four independent partial sums, so the loop vectorizes.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl EnvelopeCholesky {
    /// Factors the lower triangle of `a`; the upper triangle is ignored.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let mut first = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            let f = a.row(i).map(|(j, _)| j).find(|&j| j <= i).unwrap_or(i).min(i);
            first.push(f);
            offsets.push(offsets[i] + (i - f + 1));
        }
        let mut data = vec![0.0; offsets[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[offsets[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let start = fi.max(fj);
                let li = &data[oi + start - fi..oi + j - fi];
                let lj = &data[oj + start - fj..oj + j - fj];
                let s = data[oi + j - fi] - dot4(li, lj);
                data[oi + j - fi] = s / data[oj + j - fj];
            }
            let row = &data[oi..oi + i - fi];
            let d = data[oi + i - fi] - dot4(row, row);
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d });
            }
            data[oi + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            first,
            offsets,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L`, a proxy for factorization memory.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "rhs length {} for {}x{} system",
                b.len(),
                self.n,
                self.n
            )));
        }
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        // L y = b
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.offsets[i]..self.offsets[i + 1]];
            let mut s = x[i];
            for (l, xv) in row[..i - fi].iter().zip(&x[fi..i]) {
                s -= l * xv;
            }
            x[i] = s / row[i - fi];
        }
        // L^T x = y, column sweep
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offsets[i]..self.offsets[i + 1]];
            let xi = x[i] / row[i - fi];
            x[i] = xi;
            for (l, xv) in row[..i - fi].iter().zip(&mut x[fi..i]) {
                *xv -= l * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{lu_solve_dense, CooMatrix, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_lu_on_banded_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 6.0).unwrap();
            for off in [1usize, 4, 7] {
                if i + off < n && rng.gen::<f64>() < 0.7 {
                    let v = rng.gen_range(-1.0..0.0);
                    coo.push(i, i + off, v).unwrap();
                    coo.push(i + off, i, v).unwrap();
                }
            }
        }
        let a = coo.to_csr();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = EnvelopeCholesky::new(&a).unwrap().solve(&b).unwrap();
        let x_ref = lu_solve_dense(&a.to_dense(), &b).unwrap();
        for (p, q) in x.iter().zip(&x_ref) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let d = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let a = CsrMatrix::from_dense(&d);
        assert!(matches!(
            EnvelopeCholesky::new(&a),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }
}
