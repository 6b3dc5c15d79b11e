//! Dense triangular and symmetric positive-definite primitives.
//!
//! Everything here works on small dense matrices (p up to a few hundred).
//! Lower-triangular factors are stored packed row-major, so row `j` of a
//! factor is the contiguous slice `[j(j+1)/2, j(j+1)/2 + j]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub(crate) fn tri_index(j: usize, k: usize) -> usize {
    debug_assert!(k <= j);
    j * (j + 1) / 2 + k
}

#[inline]
fn strict_index(j: usize, k: usize) -> usize {
    debug_assert!(k < j);
    j * (j - 1) / 2 + k
}

/// Symmetric binary matrix `Z` marking which off-diagonal precision entries
/// may be non-zero. The diagonal is always on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SparsityPattern {
    p: usize,
    /// Strictly lower triangle, packed row-major.
    bits: Vec<bool>,
    /// `counts[k]` = number of free rows below the diagonal in column `k`.
    counts: Vec<usize>,
}

impl SparsityPattern {
    /// Diagonal pattern: every off-diagonal entry forced to zero.
    pub fn identity(p: usize) -> Self {
        Self {
            p,
            bits: vec![false; p * p.saturating_sub(1) / 2],
            counts: vec![0; p],
        }
    }

    /// Fully connected pattern.
    pub fn full(p: usize) -> Self {
        Self {
            p,
            bits: vec![true; p * p.saturating_sub(1) / 2],
            counts: (0..p).map(|k| p - k - 1).collect(),
        }
    }

    /// Builds a pattern from a predicate on strictly-lower positions `(j, k)`, `j > k`.
    pub fn from_fn(p: usize, mut on: impl FnMut(usize, usize) -> bool) -> Self {
        let mut z = Self::identity(p);
        for j in 1..p {
            for k in 0..j {
                if on(j, k) {
                    z.set(j, k, true);
                }
            }
        }
        z
    }

    /// Band pattern of half-width `w`: `z_jk = 1` iff `|j - k| <= w`.
    pub fn band(p: usize, w: usize) -> Self {
        Self::from_fn(p, |j, k| j - k <= w)
    }

    /// Builds a pattern from a dense 0/1 matrix. The diagonal is ignored and
    /// forced on; the matrix must be symmetric.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let p = rows.len();
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: r.len(),
                });
            }
        }
        let mut z = Self::identity(p);
        for j in 1..p {
            for k in 0..j {
                let (a, b) = (rows[j][k], rows[k][j]);
                if a > 1 || b > 1 {
                    return Err(Error::invalid(format!(
                        "pattern entry ({j}, {k}) is not 0 or 1"
                    )));
                }
                if a != b {
                    return Err(Error::invalid(format!(
                        "pattern is not symmetric at ({j}, {k})"
                    )));
                }
                z.set(j, k, a == 1);
            }
        }
        Ok(z)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// `z_jk`, symmetric, with `z_kk = 1`.
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> bool {
        use std::cmp::Ordering::*;
        match j.cmp(&k) {
            Equal => true,
            Greater => self.bits[strict_index(j, k)],
            Less => self.bits[strict_index(k, j)],
        }
    }

    /// Sets the symmetric pair `z_jk = z_kj`. Setting the diagonal is a no-op.
    pub fn set(&mut self, j: usize, k: usize, on: bool) {
        if j == k {
            return;
        }
        let (j, k) = if j > k { (j, k) } else { (k, j) };
        let slot = &mut self.bits[strict_index(j, k)];
        if *slot != on {
            *slot = on;
            if on {
                self.counts[k] += 1;
            } else {
                self.counts[k] -= 1;
            }
        }
    }

    /// `z_k`: number of free sub-diagonal rows in column `k`.
    #[inline]
    pub fn free_count(&self, k: usize) -> usize {
        self.counts[k]
    }

    /// Rows `j > k` with `z_jk = 1`.
    pub fn free_rows(&self, k: usize) -> Vec<usize> {
        (k + 1..self.p).filter(|&j| self.get(j, k)).collect()
    }

    /// Rows `j > k` with `z_jk = 0`.
    pub fn constrained_rows(&self, k: usize) -> Vec<usize> {
        (k + 1..self.p).filter(|&j| !self.get(j, k)).collect()
    }

    /// Number of edges, `sum_{j>k} z_jk`.
    pub fn edge_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Number of strictly-lower positions, `p(p-1)/2`.
    pub fn max_edges(&self) -> usize {
        self.bits.len()
    }

    /// Strictly-lower indicators in row-major order.
    pub fn lower_bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.p)
            .map(|j| (0..self.p).map(|k| self.get(j, k) as u8).collect())
            .collect()
    }
}

/// Lower-triangular factor with strictly positive diagonal (a `Q` or `B`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholFactor {
    p: usize,
    data: Vec<f64>,
}

impl CholFactor {
    pub fn identity(p: usize) -> Self {
        let mut data = vec![0.0; p * (p + 1) / 2];
        for k in 0..p {
            data[tri_index(k, k)] = 1.0;
        }
        Self { p, data }
    }

    /// Builds a factor from packed row-major lower-triangular storage.
    pub fn from_packed(p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != p * (p + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: p * (p + 1) / 2,
                found: data.len(),
            });
        }
        let f = Self { p, data };
        f.check_diagonal()?;
        Ok(f)
    }

    /// Builds a factor from dense rows; entries above the diagonal must be zero.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let mut data = Vec::with_capacity(p * (p + 1) / 2);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: r.len(),
                });
            }
            if r[j + 1..].iter().any(|&v| v != 0.0) {
                return Err(Error::invalid(format!("row {j} has entries above the diagonal")));
            }
            data.extend_from_slice(&r[..=j]);
        }
        Self::from_packed(p, data)
    }

    fn check_diagonal(&self) -> Result<()> {
        for k in 0..self.p {
            let d = self.get(k, k);
            if !(d > 0.0) {
                return Err(Error::invalid(format!(
                    "diagonal entry {k} = {d} is not strictly positive"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn from_packed_unchecked(p: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), p * (p + 1) / 2);
        Self { p, data }
    }

    pub(crate) fn zeros_unchecked(p: usize) -> Self {
        Self {
            p,
            data: vec![0.0; p * (p + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Entry `(j, k)`; zero above the diagonal.
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        if k > j {
            0.0
        } else {
            self.data[tri_index(j, k)]
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[tri_index(j, k)] = v;
    }

    /// Row `j` up to and including the diagonal.
    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let s = tri_index(j, 0);
        &self.data[s..s + j + 1]
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.p).map(|k| self.get(k, k)).collect()
    }

    /// `log det(Q Q^T) = 2 sum log q_kk`.
    pub fn log_det_product(&self) -> f64 {
        2.0 * (0..self.p).map(|k| self.get(k, k).ln()).sum::<f64>()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.p)
            .map(|j| (0..self.p).map(|k| self.get(j, k)).collect())
            .collect()
    }

    /// Solves `Q x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        for j in 0..self.p {
            let row = self.row(j);
            let s: f64 = row[..j].iter().zip(&b[..j]).map(|(a, x)| a * x).sum();
            b[j] = (b[j] - s) / row[j];
        }
    }

    /// Solves `Q^T x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        for j in (0..self.p).rev() {
            b[j] /= self.get(j, j);
            let xj = b[j];
            for (t, &a) in self.row(j)[..j].iter().enumerate() {
                b[t] -= a * xj;
            }
        }
    }

    /// `Q^T v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for j in 0..self.p {
            let vj = v[j];
            if vj != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.row(j)) {
                    *o += a * vj;
                }
            }
        }
        out
    }

    /// `Q v`.
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|j| self.row(j).iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    p: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn identity(p: usize) -> Self {
        Self::diagonal(&vec![1.0; p])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let p = d.len();
        let mut data = vec![0.0; p * p];
        for (k, &v) in d.iter().enumerate() {
            data[k * p + k] = v;
        }
        Self { p, data }
    }

    /// Builds from dense rows; rejects non-square or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let mut data = Vec::with_capacity(p * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        for j in 0..p {
            for k in 0..j {
                if data[j * p + k] != data[k * p + j] {
                    return Err(Error::invalid(format!("matrix is not symmetric at ({j}, {k})")));
                }
            }
        }
        Ok(Self { p, data })
    }

    /// Builds a symmetric matrix from its lower triangle (packed row-major).
    pub fn from_lower_packed(p: usize, lower: &[f64]) -> Result<Self> {
        if lower.len() != p * (p + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: p * (p + 1) / 2,
                found: lower.len(),
            });
        }
        let mut data = vec![0.0; p * p];
        for j in 0..p {
            for k in 0..=j {
                let v = lower[tri_index(j, k)];
                data[j * p + k] = v;
                data[k * p + j] = v;
            }
        }
        Ok(Self { p, data })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.p + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.p.max(1)).map(|r| r.to_vec()).take(self.p).collect()
    }

    /// Lower triangle, packed row-major.
    pub fn lower_packed(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.p * (self.p + 1) / 2);
        for j in 0..self.p {
            out.extend_from_slice(&self.data[j * self.p..j * self.p + j + 1]);
        }
        out
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.p).map(|k| self.get(k, k)).fold(0.0, f64::max)
    }

    /// `D M D` for diagonal `D = diag(d)`.
    pub fn scale_symmetric(&self, d: &[f64]) -> Self {
        let p = self.p;
        let mut data = self.data.clone();
        for j in 0..p {
            for k in 0..p {
                data[j * p + k] *= d[j] * d[k];
            }
        }
        Self { p, data }
    }

    /// Inverse through the Cholesky factor.
    pub fn inverse(&self) -> Result<Self> {
        let l = cholesky(self)?;
        let p = self.p;
        let mut data = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for c in 0..p {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            l.solve_lower_in_place(&mut e);
            l.solve_upper_in_place(&mut e);
            for r in 0..p {
                data[r * p + c] = e[r];
            }
        }
        // symmetrize rounding noise
        for j in 0..p {
            for k in 0..j {
                let v = 0.5 * (data[j * p + k] + data[k * p + j]);
                data[j * p + k] = v;
                data[k * p + j] = v;
            }
        }
        Ok(Self { p, data })
    }

    pub fn add_scaled(&mut self, other: &SpdMatrix, w: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += w * b;
        }
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self {
            p: self.p,
            data: self.data.iter().map(|v| v * w).collect(),
        }
    }
}

/// `Lambda = Q Q^T`. Only the lower half is computed; the upper half is a mirror.
pub fn chol_product(q: &CholFactor) -> SpdMatrix {
    let p = q.dim();
    let mut data = vec![0.0; p * p];
    for j in 0..p {
        let rj = q.row(j);
        for k in 0..=j {
            let rk = q.row(k);
            let v: f64 = rj[..=k].iter().zip(rk).map(|(a, b)| a * b).sum();
            data[j * p + k] = v;
            data[k * p + j] = v;
        }
    }
    SpdMatrix { p, data }
}

/// Lower Cholesky factor of a symmetric matrix.
pub fn cholesky(m: &SpdMatrix) -> Result<CholFactor> {
    let p = m.dim();
    let data = cholesky_packed(m.as_slice(), p)?;
    Ok(CholFactor { p, data })
}

/// Cholesky of a dense row-major `n x n` symmetric matrix into packed storage.
pub(crate) fn cholesky_packed(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * (n + 1) / 2];
    for j in 0..n {
        let sj = tri_index(j, 0);
        for k in 0..=j {
            let sk = tri_index(k, 0);
            let mut s = a[j * n + k];
            for t in 0..k {
                s -= l[sj + t] * l[sk + t];
            }
            if k == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: j, value: s });
                }
                l[sj + j] = s.sqrt();
            } else {
                l[sj + k] = s / l[sk + k];
            }
        }
    }
    Ok(l)
}

/// The constrained value `q*_jk` that makes `(Q Q^T)_jk = 0`, given the first
/// `k` columns of `q` (0-based, columns `0..k`) and the diagonal `q_kk`.
///
/// Zero for the first column.
pub fn constrained_entry(q: &CholFactor, q_kk: f64, j: usize, k: usize) -> f64 {
    debug_assert!(k < j);
    if k == 0 {
        return 0.0;
    }
    let rj = q.row(j);
    let rk = q.row(k);
    let s: f64 = rj[..k].iter().zip(&rk[..k]).map(|(a, b)| a * b).sum();
    -s / q_kk
}

/// Zero pattern of `m`: `z_jk = 0` iff `|m_jk| <= tol * max_diag(m)`.
pub fn pattern_of(m: &SpdMatrix, tol: f64) -> SparsityPattern {
    let cut = tol * m.max_diag();
    SparsityPattern::from_fn(m.dim(), |j, k| m.get(j, k).abs() > cut)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn product_identity_and_diagonal() {
        assert_eq!(chol_product(&CholFactor::identity(3)), SpdMatrix::identity(3));
        let q = CholFactor::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        assert_eq!(chol_product(&q), SpdMatrix::diagonal(&[4.0, 1.0, 9.0]));
    }

    #[test]
    fn product_two_by_two() {
        let q = CholFactor::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0]]).unwrap();
        let l = chol_product(&q);
        assert_eq!(l.to_rows(), vec![vec![1.0, 0.5], vec![0.5, 1.25]]);
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&SpdMatrix::identity(3)).unwrap(), CholFactor::identity(3));
        let m = SpdMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let l = cholesky(&m).unwrap();
        assert_eq!(l.to_rows(), vec![vec![2.0, 0.0], vec![1.0, 1.0]]);
        let bad = SpdMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&bad), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn constrained_entry_cancels() {
        let mut q = CholFactor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.3, 0.0, 1.0],
        ])
        .unwrap();
        let v = constrained_entry(&q, 1.0, 2, 1);
        assert!(close(v, -0.15, 1e-15));
        q.set(2, 1, v);
        assert!(chol_product(&q).get(2, 1).abs() < 1e-16);
        assert_eq!(constrained_entry(&q, 1.0, 2, 0), 0.0);
        let z = CholFactor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.7, 1.0],
        ])
        .unwrap();
        assert_eq!(constrained_entry(&z, 2.0, 2, 1), 0.0);
    }

    #[test]
    fn pattern_of_examples() {
        let d = SpdMatrix::diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(pattern_of(&d, 1e-10), SparsityPattern::identity(3));
        let mut q = CholFactor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.3, 0.0, 1.0],
        ])
        .unwrap();
        let v = constrained_entry(&q, 1.0, 2, 1);
        q.set(2, 1, v);
        let z = pattern_of(&chol_product(&q), 1e-12);
        assert!(!z.get(2, 1));
        assert!(z.get(1, 0) && z.get(2, 0));
        let dense = SpdMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(pattern_of(&dense, 0.0), SparsityPattern::full(2));
    }

    #[test]
    fn pattern_counts_track_set() {
        let mut z = SparsityPattern::identity(4);
        z.set(3, 1, true);
        z.set(1, 3, true);
        z.set(2, 0, true);
        assert_eq!(z.free_count(1), 1);
        assert_eq!(z.free_count(0), 1);
        assert_eq!(z.edge_count(), 2);
        assert!(z.get(1, 3) && z.get(3, 1) && z.get(2, 2));
        assert_eq!(z.free_rows(1), vec![3]);
        assert_eq!(z.constrained_rows(1), vec![2]);
        z.set(3, 1, false);
        assert_eq!(z.free_count(1), 0);
        assert_eq!(SparsityPattern::full(4).free_count(0), 3);
        assert_eq!(SparsityPattern::band(5, 1).edge_count(), 4);
    }

    #[test]
    fn pattern_from_dense_rejects_asymmetry() {
        let rows = vec![vec![1, 1], vec![0, 1]];
        assert!(SparsityPattern::from_dense(&rows).is_err());
        let ok = vec![vec![1, 0, 1], vec![0, 1, 0], vec![1, 0, 1]];
        let z = SparsityPattern::from_dense(&ok).unwrap();
        assert!(z.get(2, 0) && !z.get(1, 0));
        assert_eq!(z.to_dense(), ok);
    }

    #[test]
    fn triangular_solves() {
        let q = CholFactor::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.5, 1.5, 0.0],
            vec![-0.3, 0.2, 0.7],
        ])
        .unwrap();
        let x = vec![0.3, -1.2, 2.0];
        let mut b = q.mul(&x);
        q.solve_lower_in_place(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!(close(*a, *e, 1e-14));
        }
        let mut c = q.transpose_mul(&x);
        q.solve_upper_in_place(&mut c);
        for (a, e) in c.iter().zip(&x) {
            assert!(close(*a, *e, 1e-14));
        }
    }

    #[test]
    fn rejects_nonpositive_diagonal() {
        assert!(CholFactor::from_rows(&[vec![0.0]]).is_err());
        assert!(CholFactor::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).is_err());
    }
}
