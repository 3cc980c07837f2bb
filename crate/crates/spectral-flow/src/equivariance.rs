//! Z2 symmetry: involutions, isotypic splitting, and equivariant
//! restriction.
//!
//! A linear involution `sigma` (symmetric, orthogonal, squaring to the
//! identity) splits the space into its fixed (+1) and antifixed (-1)
//! eigenspaces. An operator commuting with `sigma` block-diagonalizes in
//! that splitting; the equivariant spectral flow of a commuting path is the
//! pair of flows of the two blocks.

use nalgebra::DMatrix;

use crate::linalg;
use crate::{Error, Result};

/// Validated linear Z2 action: symmetric orthogonal matrix with square
/// identity.
#[derive(Debug, Clone)]
pub struct Involution {
    matrix: DMatrix<f64>,
}

impl Involution {
    /// Validate and wrap a matrix as an involution.
    ///
    /// `tol` bounds, entrywise, both the symmetry defect and
    /// `|sigma^2 - I|`; orthogonality follows from the two.
    pub fn new(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "involution must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let sym_defect = linalg::symmetry_defect(&matrix);
        let square = &matrix * &matrix;
        let id = DMatrix::<f64>::identity(matrix.nrows(), matrix.ncols());
        let square_defect = (square - id).abs().max();
        let defect = sym_defect.max(square_defect);
        if defect > tol {
            return Err(Error::InvalidInvolution { defect });
        }
        Ok(Involution { matrix })
    }

    /// Diagonal involution from a sign pattern (+1/-1 per coordinate).
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput(
                "sign pattern entries must be +1 or -1".into(),
            ));
        }
        let n = signs.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &s) in signs.iter().enumerate() {
            m[(i, i)] = s as f64;
        }
        Ok(Involution { matrix: m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest entry of `sigma M - M sigma`.
    pub fn commutator_defect(&self, m: &DMatrix<f64>) -> f64 {
        let n = self.dim();
        if self.is_diagonal() {
            // (sigma M - M sigma)_{ij} = (s_i - s_j) M_{ij}.
            let mut worst = 0.0f64;
            for j in 0..n {
                for i in 0..n {
                    let d = (self.matrix[(i, i)] - self.matrix[(j, j)]) * m[(i, j)];
                    worst = worst.max(d.abs());
                }
            }
            return worst;
        }
        (&self.matrix * m - m * &self.matrix).abs().max()
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if i != j && self.matrix[(i, j)] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Errors unless `M` commutes with the involution to `tol`.
    pub fn check_equivariance(&self, m: &DMatrix<f64>, lambda: f64, tol: f64) -> Result<()> {
        let defect = self.commutator_defect(m);
        if defect > tol {
            return Err(Error::NotEquivariant { defect, lambda });
        }
        Ok(())
    }

    /// Orthonormal bases of the +1 and -1 eigenspaces.
    ///
    /// For an exactly diagonal involution the coordinate vectors are used in
    /// index order, so restricted operators are literal sub-blocks; the
    /// general case diagonalizes the involution.
    pub fn isotypic_split(&self) -> Result<IsotypicSplit> {
        let n = self.dim();
        let (fixed_cols, anti_cols): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = if self.is_diagonal() {
            let mut fixed = Vec::new();
            let mut anti = Vec::new();
            for i in 0..n {
                let mut e = DMatrix::zeros(n, 1);
                e[(i, 0)] = 1.0;
                if self.matrix[(i, i)] > 0.0 {
                    fixed.push(e);
                } else {
                    anti.push(e);
                }
            }
            (fixed, anti)
        } else {
            let dec = linalg::eig_sym(&self.matrix, 1e-12 * (1.0 + linalg::inf_norm(&self.matrix)))?;
            let mut fixed = Vec::new();
            let mut anti = Vec::new();
            for j in 0..n {
                let v = dec.eigenvalues[j];
                if (v - 1.0).abs() > 1e-8 && (v + 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidInvolution {
                        defect: (v.abs() - 1.0).abs(),
                    });
                }
                let col = DMatrix::from_column_slice(n, 1, dec.eigenvectors.column(j).as_slice());
                if v > 0.0 {
                    fixed.push(col);
                } else {
                    anti.push(col);
                }
            }
            (fixed, anti)
        };
        let assemble = |cols: &[DMatrix<f64>]| {
            let mut b = DMatrix::zeros(n, cols.len());
            for (j, c) in cols.iter().enumerate() {
                b.set_column(j, &c.column(0));
            }
            b
        };
        Ok(IsotypicSplit {
            fixed_basis: assemble(&fixed_cols),
            anti_basis: assemble(&anti_cols),
        })
    }
}

/// Orthonormal bases (columns) of the fixed and antifixed subspaces.
#[derive(Debug, Clone)]
pub struct IsotypicSplit {
    pub fixed_basis: DMatrix<f64>,
    pub anti_basis: DMatrix<f64>,
}

impl IsotypicSplit {
    pub fn fixed_dim(&self) -> usize {
        self.fixed_basis.ncols()
    }

    pub fn anti_dim(&self) -> usize {
        self.anti_basis.ncols()
    }
}

/// Compression `B^T M B` of an operator onto a subspace basis.
pub fn restrict_operator(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis.transpose() * m * basis
}
