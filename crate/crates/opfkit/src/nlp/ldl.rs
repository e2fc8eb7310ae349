//! Dense symmetric indefinite LDL^T factorization without pivoting.
//!
//! The interior-point KKT matrices handled here are quasi-definite after
//! regularization (positive definite leading block, negative definite
//! trailing block), for which the unpivoted factorization is well defined.
//! The sign pattern of D doubles as the inertia certificate the solver
//! uses to steer its regularization loop.

use super::NlpError;
use nalgebra::{DMatrix, DVector};

pub struct LdlFactor {
    /// Unit lower triangle packed with the diagonal of D.
    ld: DMatrix<f64>,
    n: usize,
}

impl LdlFactor {
    /// Factors the lower triangle of `a`. Fails on a pivot smaller than
    /// `pivot_tol` in magnitude.
    pub fn new(a: &DMatrix<f64>, pivot_tol: f64) -> Result<Self, NlpError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(NlpError::Dimension("LDL^T needs a square matrix".into()));
        }
        let mut ld = a.lower_triangle();
        for j in 0..n {
            let mut d = ld[(j, j)];
            for k in 0..j {
                let l_jk = ld[(j, k)];
                d -= l_jk * l_jk * ld[(k, k)];
            }
            if !d.is_finite() || d.abs() <= pivot_tol {
                return Err(NlpError::SingularKkt);
            }
            ld[(j, j)] = d;
            for i in (j + 1)..n {
                let mut v = ld[(i, j)];
                for k in 0..j {
                    v -= ld[(i, k)] * ld[(j, k)] * ld[(k, k)];
                }
                ld[(i, j)] = v / d;
            }
        }
        Ok(LdlFactor { ld, n })
    }

    /// Counts of (positive, negative, zero) pivots.
    pub fn inertia(&self) -> (usize, usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for j in 0..self.n {
            if self.ld[(j, j)] > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        (pos, neg, 0)
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        // forward: L y = b
        for i in 0..self.n {
            let mut v = x[i];
            for k in 0..i {
                v -= self.ld[(i, k)] * x[k];
            }
            x[i] = v;
        }
        // diagonal
        for i in 0..self.n {
            x[i] /= self.ld[(i, i)];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let mut v = x[i];
            for k in (i + 1)..self.n {
                v -= self.ld[(k, i)] * x[k];
            }
            x[i] = v;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn factors_and_solves_quasi_definite() {
        // [ 2  0  1 ]
        // [ 0  3  1 ]
        // [ 1  1 -1 ]
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 3.0, 1.0, 1.0, 1.0, -1.0]);
        let f = LdlFactor::new(&a, 0.0).unwrap();
        assert_eq!(f.inertia(), (2, 1, 0));
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = f.solve(&b);
        assert_abs_diff_eq!((a * x - b).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inertia_matches_eigen_sign_counts() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let sym = (&raw + raw.transpose()) * 0.5 + DMatrix::identity(n, n) * 0.3;
            if let Ok(f) = LdlFactor::new(&sym, 1e-12) {
                let eig = sym.symmetric_eigenvalues();
                let pos = eig.iter().filter(|&&e| e > 0.0).count();
                let neg = n - pos;
                assert_eq!(f.inertia(), (pos, neg, 0));
            }
        }
    }
}
