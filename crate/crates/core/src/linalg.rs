//! Small dense symmetric linear algebra: the `p x p` matrices here have `p`
//! equal to the model's parameter count, so a cyclic Jacobi sweep is ample.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n.max(1)).map(<[T]>::to_vec).collect()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "matmul dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *yi = row
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `A += w * v v^t`.
    pub fn add_outer(&mut self, v: &[T], w: T) {
        for i in 0..self.n {
            let wi = w * v[i];
            for j in 0..self.n {
                self[(i, j)] = self[(i, j)] + wi * v[j];
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    pub fn frobenius(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Replaces the matrix by `(A + A^t) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl<T> Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Eigendecomposition `A = Q diag(values) Q^t` of a symmetric matrix.
/// Columns of `vectors` are the eigenvectors.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: SquareMatrix<T>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigenvalue iteration. Only the upper triangle of `a` is read
/// after an initial symmetrization.
pub fn symmetric_eigen<T: Scalar>(a: &SquareMatrix<T>) -> SymmetricEigen<T> {
    let n = a.dim();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = SquareMatrix::identity(n);
    let tol = T::epsilon() * m.frobenius();
    let two = T::lit(2.0);

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    SymmetricEigen {
        values: (0..n).map(|i| m[(i, i)]).collect(),
        vectors: v,
    }
}

/// Default relative eigenvalue cutoff for [`inv_sqrt_psd`]: `1e-12`, raised
/// to `16 eps` for types where `1e-12` is below working precision.
pub fn default_rel_tol<T: Scalar>() -> T {
    T::lit(1e-12).max(T::lit(16.0) * T::epsilon())
}

/// Generalized inverse square root of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct InvSqrt<T> {
    pub matrix: SquareMatrix<T>,
    /// Number of eigenvalues kept above the cutoff.
    pub rank: usize,
}

/// Moore-Penrose style `A^{+1/2}`: eigenvalues `<= rel_tol * lambda_max`
/// are treated as zero and map to zero; the rest map to `lambda^{-1/2}`.
pub fn inv_sqrt_psd<T: Scalar>(a: &SquareMatrix<T>, rel_tol: T) -> Result<InvSqrt<T>> {
    if !a.is_finite() {
        return Err(Error::InvalidParameter(
            "matrix has non-finite entries".into(),
        ));
    }
    let asym = a.max_asymmetry();
    if asym > T::lit(1e-10) * a.frobenius() {
        return Err(Error::NotSymmetric(asym.as_f64()));
    }
    let eig = symmetric_eigen(a);
    let lmax = eig.values.iter().copied().fold(T::neg_infinity(), T::max);
    if lmax.is_nan() || lmax <= T::zero() {
        return Err(Error::AllZeroMatrix);
    }
    let cutoff = rel_tol * lmax;
    let mut rank = 0;
    let d: Vec<T> = eig
        .values
        .iter()
        .map(|&l| {
            if l <= cutoff {
                T::zero()
            } else {
                rank += 1;
                T::one() / l.sqrt()
            }
        })
        .collect();

    let n = a.dim();
    let q = &eig.vectors;
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = T::zero();
            for (k, &dk) in d.iter().enumerate() {
                acc = acc + q[(i, k)] * dk * q[(j, k)];
            }
            out[(i, j)] = acc;
        }
    }
    out.symmetrize();
    Ok(InvSqrt { matrix: out, rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &SquareMatrix<f64>, b: &SquareMatrix<f64>, tol: f64) -> bool {
        let mut d = a.clone();
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                d[(i, j)] = a[(i, j)] - b[(i, j)];
            }
        }
        d.frobenius() < tol
    }

    #[test]
    fn identity_maps_to_identity() {
        let r = inv_sqrt_psd(&SquareMatrix::<f64>::identity(2), 1e-12).unwrap();
        assert!(close(&r.matrix, &SquareMatrix::identity(2), 1e-14));
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn diagonal_example() {
        let r = inv_sqrt_psd(&SquareMatrix::diag(&[4.0, 9.0]), 1e-12).unwrap();
        assert!(close(
            &r.matrix,
            &SquareMatrix::diag(&[0.5, 1.0 / 3.0]),
            1e-14
        ));
    }

    #[test]
    fn zero_matrix_is_rejected() {
        assert!(matches!(
            inv_sqrt_psd(&SquareMatrix::<f64>::zeros(3), 1e-12),
            Err(Error::AllZeroMatrix)
        ));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            inv_sqrt_psd(&a, 1e-12),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn singular_matrix_gets_pseudo_inverse() {
        // rank one: v v^t with v = (1, 2)
        let mut a = SquareMatrix::<f64>::zeros(2);
        a.add_outer(&[1.0, 2.0], 1.0);
        let r = inv_sqrt_psd(&a, 1e-12).unwrap();
        assert_eq!(r.rank, 1);
        // A^{+1/2} A A^{+1/2} is the projector onto span(v)
        let proj = r.matrix.matmul(&a).matmul(&r.matrix);
        let mut expect = SquareMatrix::zeros(2);
        expect.add_outer(&[1.0, 2.0], 1.0 / 5.0);
        assert!(close(&proj, &expect, 1e-12));
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let mut a = SquareMatrix::<f64>::zeros(n);
            for i in 0..n {
                for j in i..n {
                    let v = rng.random_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let e = symmetric_eigen(&a);
            let d = SquareMatrix::diag(&e.values);
            let back = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
            assert!(close(&back, &a, 1e-12));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let r = inv_sqrt_psd(&SquareMatrix::<f32>::diag(&[4.0, 16.0]), default_rel_tol()).unwrap();
        assert!((r.matrix[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((r.matrix[(1, 1)] - 0.25).abs() < 1e-6);
    }
}
