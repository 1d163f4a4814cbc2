//! Dense symmetric matrices of small dimension (the horizontal layer of a
//! Carnot group is low-dimensional, so everything here targets dim <= ~8).
//!
//! Eigenvalues come from a cyclic Jacobi iteration: for these sizes it is
//! simpler and more accurate than bringing in a general-purpose solver, and
//! the rotation count is tiny.

use crate::error::{Error, Result};

/// Relative clamp for eigenvalue sign decisions: an eigenvalue within
/// `[-EIG_ZERO_CLAMP_REL * ||M||_F, 0]` is treated as exactly zero, so that
/// rounding noise cannot flip a clamped determinant between 0 and a tiny
/// negative-eigenvalue product.
pub const EIG_ZERO_CLAMP_REL: f64 = 1e-12;

/// Jacobi sweep convergence threshold, relative to the Frobenius norm of the
/// input: iteration stops once the off-diagonal norm drops below this.
pub const JACOBI_OFF_DIAG_REL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Symmetric matrix with only the upper triangle stored (row-packed), so
/// symmetry is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(dim: usize) -> SymMat {
        SymMat {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> SymMat {
        let mut m = SymMat::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a function evaluated on the upper triangle (`i <= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> SymMat {
        let mut m = SymMat::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Packs a row-major dense matrix, symmetrizing as `(a_ij + a_ji) / 2`.
    pub fn from_dense(dim: usize, dense: &[f64]) -> SymMat {
        SymMat::from_fn(dim, |i, j| 0.5 * (dense[i * dim + j] + dense[j * dim + i]))
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.dim);
        i * self.dim - i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.data[self.idx(i, j)]
        } else {
            self.data[self.idx(j, i)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = if i <= j { self.idx(i, j) } else { self.idx(j, i) };
        self.data[k] = value;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Packed upper-triangle entries, row-major: (0,0..n), (1,1..n), ...
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Result<SymMat> {
        if packed.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch {
                context: "SymMat::from_packed",
                expected: dim * (dim + 1) / 2,
                got: packed.len(),
            });
        }
        Ok(SymMat { dim, data: packed })
    }

    /// Overwrites the entries from a packed upper triangle of the same
    /// dimension; the allocation-free counterpart of [`SymMat::from_packed`]
    /// for per-node loops.
    #[inline]
    pub fn copy_from_packed(&mut self, packed: &[f64]) {
        debug_assert_eq!(packed.len(), self.data.len());
        self.data.copy_from_slice(packed);
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let a = self.get(i, j);
                s += a * a;
            }
        }
        s.sqrt()
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        debug_assert_eq!(self.dim, other.dim);
        SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.dim {
            1 => vec![self.data[0]],
            2 => {
                let (lo, hi) = self.eigen_range();
                vec![lo, hi]
            }
            _ => self.eigen().0,
        }
    }

    /// Smallest and largest eigenvalue. Closed forms for dims 1 and 2 keep
    /// the flow solver's per-node loop off the full Jacobi path.
    pub fn eigen_range(&self) -> (f64, f64) {
        match self.dim {
            0 => (f64::INFINITY, f64::NEG_INFINITY),
            1 => (self.data[0], self.data[0]),
            2 => {
                let (a, b, c) = (self.data[0], self.data[1], self.data[2]);
                let mean = 0.5 * (a + c);
                let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                (mean - radius, mean + radius)
            }
            _ => {
                let vals = self.eigen().0;
                (vals[0], vals[vals.len() - 1])
            }
        }
    }

    /// Full spectral decomposition. Returns eigenvalues in ascending order
    /// and eigenvectors column-major (`vecs[i + dim * k]` = component `i` of
    /// the eigenvector for the `k`-th eigenvalue).
    pub fn eigen(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim;
        if n == 0 {
            return (Vec::new(), Vec::new());
        }
        if n == 1 {
            return (vec![self.get(0, 0)], vec![1.0]);
        }
        let mut a = self.to_dense();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        let scale = self.frobenius_norm();
        let stop = JACOBI_OFF_DIAG_REL * scale;

        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p * n + q] * a[p * n + q];
                }
            }
            if (2.0 * off).sqrt() <= stop {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;

                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    // rotations applied on both sides leave tiny residue at
                    // the target entry; zero it explicitly
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;

                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
        let vals: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
        let mut vecs = vec![0.0; n * n];
        for (k, &src) in order.iter().enumerate() {
            for i in 0..n {
                vecs[i + n * k] = v[i * n + src];
            }
        }
        (vals, vecs)
    }
}

/// Determinant: cofactor closed forms through dim 3, the eigenvalue product
/// beyond.
pub fn det(m: &SymMat) -> f64 {
    let p = m.packed();
    match m.dim() {
        0 => 1.0,
        1 => p[0],
        2 => p[0] * p[2] - p[1] * p[1],
        3 => {
            let (a, b, c, d, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
            a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d)
        }
        _ => m.eigenvalues().iter().product(),
    }
}

/// Clamped determinant: 0 unless the matrix is positive definite, the plain
/// determinant otherwise (so it equals the product of positive eigenvalues).
/// Definiteness comes from leading principal minors through dim 3 and from
/// the eigenvalues beyond.
pub fn det_plus(m: &SymMat) -> f64 {
    let p = m.packed();
    match m.dim() {
        0 => 1.0,
        1 => {
            if p[0] > 0.0 { p[0] } else { 0.0 }
        }
        2 => {
            let d2 = p[0] * p[2] - p[1] * p[1];
            if p[0] > 0.0 && d2 > 0.0 { d2 } else { 0.0 }
        }
        3 => {
            let d2 = p[0] * p[3] - p[1] * p[1];
            let d3 = det(m);
            if p[0] > 0.0 && d2 > 0.0 && d3 > 0.0 { d3 } else { 0.0 }
        }
        _ => {
            let clamp = EIG_ZERO_CLAMP_REL * m.frobenius_norm();
            let mut prod = 1.0;
            for lambda in m.eigenvalues() {
                if lambda <= 0.0 || (-clamp..=0.0).contains(&lambda) {
                    return 0.0;
                }
                prod *= lambda;
            }
            prod
        }
    }
}

pub fn min_eigenvalue(m: &SymMat) -> f64 {
    m.eigen_range().0
}

pub fn max_eigenvalue(m: &SymMat) -> f64 {
    m.eigen_range().1
}

/// Inverse of a positive-definite matrix via its spectral decomposition.
pub fn inverse_posdef(m: &SymMat) -> Result<SymMat> {
    let n = m.dim();
    let (vals, vecs) = m.eigen();
    let clamp = EIG_ZERO_CLAMP_REL * m.frobenius_norm();
    if vals.iter().any(|&l| l <= clamp) {
        return Err(Error::InvalidParameter(
            "matrix is not positive definite; cannot invert".into(),
        ));
    }
    Ok(SymMat::from_fn(n, |i, j| {
        (0..n)
            .map(|k| vecs[i + n * k] * vecs[j + n * k] / vals[k])
            .sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_known() {
        let m = SymMat::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let vals = m.eigenvalues();
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
        assert!((det(&m) - 3.0).abs() < 1e-13);
        assert!((det_plus(&m) - 3.0).abs() < 1e-13);
        assert!((min_eigenvalue(&m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn det_plus_zeroes_on_nonpositive_eigenvalue() {
        let mut m = SymMat::zeros(3);
        m.set(0, 0, 5.0);
        m.set(1, 1, 2.0);
        m.set(2, 2, -1e-20);
        assert_eq!(det_plus(&m), 0.0);
        m.set(2, 2, -3.0);
        assert_eq!(det_plus(&m), 0.0);
        assert!((det(&m) + 30.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_matches_characteristic_roots_3x3() {
        // A = diag(1,2,3) conjugated by a known rotation keeps its spectrum.
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let d = [1.0, 2.0, 3.0];
        // rotation in the (0,1) plane
        let r = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let mut dense = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += r[i * 3 + k] * d[k] * r[j * 3 + k];
                }
                dense[i * 3 + j] = acc;
            }
        }
        let m = SymMat::from_dense(3, &dense);
        let vals = m.eigenvalues();
        for (got, want) in vals.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-13, "got {got}, want {want}");
        }
    }

    #[test]
    fn eigenvectors_reconstruct_matrix() {
        let m = SymMat::from_fn(4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let (vals, vecs) = m.eigen();
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs[i + n * k] * vals[k] * vecs[j + n * k];
                }
                assert!((acc - m.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_posdef_roundtrip() {
        let m = SymMat::from_fn(3, |i, j| if i == j { 4.0 + i as f64 } else { 0.5 });
        let inv = inverse_posdef(&m).unwrap();
        let md = m.to_dense();
        let id = inv.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += md[i * 3 + k] * id[k * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-12);
            }
        }
        let not_pd = SymMat::from_fn(2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(inverse_posdef(&not_pd).is_err());
    }

    #[test]
    fn one_by_one() {
        let mut m = SymMat::zeros(1);
        m.set(0, 0, -2.5);
        assert_eq!(min_eigenvalue(&m), -2.5);
        assert_eq!(det_plus(&m), 0.0);
        assert_eq!(det(&m), -2.5);
    }
}
