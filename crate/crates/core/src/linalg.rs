//! Dense symmetric positive-definite factorization used by the global leaf
//! refit.
//!
//! The normal-equation systems here reach a few thousand columns, so the
//! factorization is blocked: panel work runs through matrix products and the
//! trailing updates are computed per column block. Each block's product is a
//! single self-contained call, so the factor is bit-identical for any rayon
//! worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

const BLOCK: usize = 64;

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    /// Factor `a = L * L^T`. Fails with [`Error::SingularSystem`] when a
    /// pivot is not strictly positive.
    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "SPD factorization needs a square matrix");

        let mut k0 = 0;
        while k0 < n {
            let kb = BLOCK.min(n - k0);
            let k1 = k0 + kb;

            factor_diagonal(&mut a, k0, kb)?;

            if k1 < n {
                solve_panel(&mut a, k0, kb);

                // Trailing update: A[j0.., j0..j1] -= P[j0..] * P[j0..j1]^T
                // with P the freshly solved panel below the diagonal block.
                let panel = a.view((k1, k0), (n - k1, kb)).into_owned();
                let blocks: Vec<usize> = (k1..n).step_by(BLOCK).collect();
                let updates: Vec<DMatrix<f64>> = blocks
                    .par_iter()
                    .map(|&j0| {
                        let jb = BLOCK.min(n - j0);
                        let tall = panel.view((j0 - k1, 0), (n - j0, kb));
                        let wide = panel.view((j0 - k1, 0), (jb, kb));
                        tall * wide.transpose()
                    })
                    .collect();
                for (&j0, update) in blocks.iter().zip(&updates) {
                    let jb = BLOCK.min(n - j0);
                    let mut target = a.view_mut((j0, j0), (n - j0, jb));
                    target -= update;
                }
            }
            k0 = k1;
        }

        // Zero the strict upper triangle so the factor is exactly L.
        for c in 1..n {
            for r in 0..c {
                a[(r, c)] = 0.0;
            }
        }
        Ok(SpdFactor { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// In-place solve of `A * X = B` via the two triangular systems.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        assert_eq!(self.l.nrows(), b.nrows(), "rhs row count mismatch");
        self.forward(b);
        self.backward(b);
    }

    /// `L * Z = B`, blocked forward substitution.
    fn forward(&self, b: &mut DMatrix<f64>) {
        let n = self.l.nrows();
        let mut k0 = 0;
        while k0 < n {
            let kb = BLOCK.min(n - k0);
            let k1 = k0 + kb;
            for c in 0..b.ncols() {
                for r in k0..k1 {
                    let mut acc = b[(r, c)];
                    for j in k0..r {
                        acc -= self.l[(r, j)] * b[(j, c)];
                    }
                    b[(r, c)] = acc / self.l[(r, r)];
                }
            }
            if k1 < n {
                let block = self.l.view((k1, k0), (n - k1, kb));
                let solved = b.rows(k0, kb).into_owned();
                let update = block * solved;
                let mut rest = b.rows_mut(k1, n - k1);
                rest -= update;
            }
            k0 = k1;
        }
    }

    /// `L^T * X = Z`, blocked backward substitution.
    fn backward(&self, b: &mut DMatrix<f64>) {
        let n = self.l.nrows();
        let mut k1 = n;
        while k1 > 0 {
            let kb = BLOCK.min(k1);
            let k0 = k1 - kb;
            for c in 0..b.ncols() {
                for r in (k0..k1).rev() {
                    let mut acc = b[(r, c)];
                    for j in r + 1..k1 {
                        acc -= self.l[(j, r)] * b[(j, c)];
                    }
                    b[(r, c)] = acc / self.l[(r, r)];
                }
            }
            if k0 > 0 {
                let block = self.l.view((k0, 0), (kb, k0));
                let solved = b.rows(k0, kb).into_owned();
                let update = block.transpose() * solved;
                let mut rest = b.rows_mut(0, k0);
                rest -= update;
            }
            k1 = k0;
        }
    }
}

/// Unblocked Cholesky of the `kb`-wide diagonal block at `k0`.
fn factor_diagonal(a: &mut DMatrix<f64>, k0: usize, kb: usize) -> Result<()> {
    for j in k0..k0 + kb {
        let mut diag = a[(j, j)];
        for p in k0..j {
            diag -= a[(j, p)] * a[(j, p)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::SingularSystem);
        }
        let root = diag.sqrt();
        a[(j, j)] = root;
        for i in j + 1..k0 + kb {
            let mut acc = a[(i, j)];
            for p in k0..j {
                acc -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = acc / root;
        }
    }
    Ok(())
}

/// Solve `P * L_kk^T = A[k1.., k0..k1]` in place (rows below the diagonal
/// block), i.e. right-division by the transposed diagonal factor.
fn solve_panel(a: &mut DMatrix<f64>, k0: usize, kb: usize) {
    let n = a.nrows();
    let k1 = k0 + kb;
    for j in k0..k1 {
        let inv = 1.0 / a[(j, j)];
        for i in k1..n {
            let mut acc = a[(i, j)];
            for p in k0..j {
                acc -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = acc * inv;
        }
    }
}
