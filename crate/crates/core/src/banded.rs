//! Symmetric banded matrices and their Cholesky factorization.
//!
//! The structured mesh numbering gives every P1 system a half bandwidth of
//! `min(nr, nz) + 2`, so a dense band factorization is a direct sparse solve with
//! no fill outside the band.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix, stored row by row.
///
/// Row `i` holds columns `i - bandwidth ..= i`; entries left of column 0
/// are padding and stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBand {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + self.bandwidth + j - i
    }

    /// Adds `value` to entries `(i, j)` and `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.offset(i, j);
        self.data[k] += value;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            return 0.0;
        }
        self.data[self.offset(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.offset(i, i)]).collect()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self ← self + factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &SymBand) {
        assert_eq!((self.n, self.bandwidth), (other.n, other.bandwidth));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += factor * b);
    }

    /// `y ← y + factor * A x`.
    pub fn mul_add(&self, factor: f64, x: &[f64], y: &mut [f64]) {
        let w = self.bandwidth + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bandwidth);
            let row = &self.data[i * w + self.bandwidth + j0 - i..(i + 1) * w];
            // row[last] is the diagonal
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (a, (j, xj)) in off.iter().zip(x[j0..i].iter().enumerate()) {
                acc += a * xj;
                y[j0 + j] += factor * a * x[i];
            }
            y[i] += factor * acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_add(1.0, x, &mut y);
        y
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let bw = self.bandwidth;
        let w = bw + 1;
        let data = &mut self.data;
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let len = j - k0;
                let ri = i * w + bw + k0 - i;
                let rj = j * w + bw + k0 - j;
                let dot = dot(&data[ri..ri + len], &data[rj..rj + len]);
                let pos = i * w + bw + j - i;
                let value = data[pos] - dot;
                if i == j {
                    if !(value > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value });
                    }
                    data[pos] = value.sqrt();
                } else {
                    data[pos] = value / data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Dot product with four independent partial sums, which lets the compiler
/// vectorize while keeping a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Lower triangular Cholesky factor in band storage.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    factor: SymBand,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let SymBand { n, bandwidth: bw, data } = &self.factor;
        let (n, bw, w) = (*n, *bw, *bw + 1);
        // L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = &data[i * w + bw + j0 - i..i * w + bw];
            b[i] = (b[i] - dot(row, &b[j0..i])) / data[i * w + bw];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            b[i] /= data[i * w + bw];
            let xi = b[i];
            let j0 = i.saturating_sub(bw);
            let row = &data[i * w + bw + j0 - i..i * w + bw];
            for (a, bj) in row.iter().zip(b[j0..i].iter_mut()) {
                *bj -= a * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(a: &SymBand) -> Vec<Vec<f64>> {
        (0..a.dim())
            .map(|i| (0..a.dim()).map(|j| a.get(i, j)).collect())
            .collect()
    }

    fn random_spd(n: usize, bw: usize, seed: &[f64]) -> SymBand {
        let mut a = SymBand::zeros(n, bw);
        let mut k = 0;
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                a.add(i, j, seed[k % seed.len()]);
                k += 1;
            }
        }
        // diagonal dominance
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum();
            a.add(i, i, off + 1.0);
        }
        a
    }

    #[test]
    fn mul_matches_dense() {
        let a = random_spd(7, 2, &[0.3, -1.2, 0.7, 2.0, -0.4]);
        let x: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        let d = dense(&a);
        let y = a.mul(&x);
        for i in 0..7 {
            let expected: f64 = (0..7).map(|j| d[i][j] * x[j]).sum();
            assert!((y[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymBand::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    proptest! {
        #[test]
        fn solve_inverts_mul(
            n in 1usize..40,
            bw in 0usize..6,
            seed in prop::collection::vec(-3.0f64..3.0, 1..30),
            x in prop::collection::vec(-10.0f64..10.0, 40),
        ) {
            let a = random_spd(n, bw, &seed);
            let x = &x[..n];
            let b = a.mul(x);
            let sol = a.clone().cholesky().unwrap().solve(&b);
            for (s, e) in sol.iter().zip(x) {
                prop_assert!((s - e).abs() < 1e-9 * (1.0 + e.abs()));
            }
        }
    }
}
