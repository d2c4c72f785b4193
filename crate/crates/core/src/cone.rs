//! Symmetric matrices and the geometry of the positive semidefinite cone.
//!
//! Everything the message-passing engine and the convergence analysis need
//! from linear algebra lives here: symmetric storage, definiteness tests,
//! Loewner comparisons, the part (Thompson) metric, and block-diagonal
//! assembly.
//!
//! The part metric between positive definite `X` and `Y` is
//!
//! ```text
//! d(X, Y) = inf { log a : a X >= Y >= X / a, a >= 1 }
//!         = log max( lmax(Y, X), lmax(X, Y) )
//! ```
//!
//! where `lmax(A, B)` is the largest generalized eigenvalue of the pencil
//! `A v = l B v`. It is evaluated exactly through one Cholesky factorization
//! and one symmetric eigensolve.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const RELATIVE_TOL: f64 = 1e-10;

/// Dense symmetric matrix. Symmetry is enforced on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix from `m`, replacing it by `(m + mᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix dimension must be >= 1".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Row-major nested rows, as stored in instance files.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!(
                "rows of a {n}-row matrix must all have length {n}"
            )));
        }
        Self::new(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn scalar(v: f64) -> Self {
        Self(DMatrix::from_element(1, 1, v))
    }

    // Internal constructor for results of arithmetic on symmetric inputs.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn plus(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn minus(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scaled(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Largest absolute eigenvalue, i.e. the induced 2-norm.
    pub fn spectral_norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    /// Ratio of extreme absolute eigenvalues; infinite for singular input.
    pub fn condition_estimate(&self) -> f64 {
        let ev = self.eigenvalues();
        let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let hi = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn cholesky(&self, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.0.clone()).ok_or_else(|| Error::Numerical {
            context: context.to_string(),
            condition: self.condition_estimate(),
        })
    }

    /// Inverse through a Cholesky factorization; fails unless positive definite.
    pub fn inverse(&self, context: &str) -> Result<SymMatrix> {
        let inv = self.cholesky(context)?.inverse();
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: context.to_string(),
                condition: self.condition_estimate(),
            });
        }
        Ok(SymMatrix::symmetrized(inv))
    }

    /// `Bᵀ X B` for a rectangular `B`.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(b.transpose() * &self.0 * b)
    }

    /// `B X Bᵀ` for a rectangular `B`.
    pub fn outer_congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(b * &self.0 * b.transpose())
    }
}

/// Thresholds for definiteness and Loewner-order decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeTolerance {
    pub eig_tol: f64,
    pub order_tol: f64,
}

impl ConeTolerance {
    pub fn new(eig_tol: f64, order_tol: f64) -> Result<Self> {
        for (name, v) in [("eig_tol", eig_tol), ("order_tol", order_tol)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { eig_tol, order_tol })
    }

    pub const fn exact() -> Self {
        Self {
            eig_tol: 0.0,
            order_tol: 0.0,
        }
    }

    /// `1e-10 * (1 + scale)` for both thresholds.
    pub fn relative(scale: f64) -> Self {
        let t = RELATIVE_TOL * (1.0 + scale.abs());
        Self {
            eig_tol: t,
            order_tol: t,
        }
    }

    pub fn for_matrix(x: &SymMatrix) -> Self {
        Self::relative(x.max_abs_entry())
    }

    pub fn for_pair(x: &SymMatrix, y: &SymMatrix) -> Self {
        Self::relative(x.max_abs_entry().max(y.max_abs_entry()))
    }
}

pub fn is_psd(x: &SymMatrix, tol: &ConeTolerance) -> bool {
    x.min_eigenvalue() >= -tol.eig_tol
}

/// Strict version of [`is_psd`]: `λ_min(X) > eig_tol`.
pub fn is_pd(x: &SymMatrix, tol: &ConeTolerance) -> bool {
    x.min_eigenvalue() > tol.eig_tol
}

fn check_same_dim(x: &SymMatrix, y: &SymMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// `X ⪰ Y`, i.e. `λ_min(X − Y) ≥ −order_tol`.
pub fn loewner_geq(x: &SymMatrix, y: &SymMatrix, tol: &ConeTolerance) -> Result<bool> {
    check_same_dim(x, y)?;
    Ok(x.minus(y).min_eigenvalue() >= -tol.order_tol)
}

/// Eigenvalues (ascending) of the symmetric-definite pencil `A v = λ B v`.
pub fn generalized_eigenvalues(a: &SymMatrix, b: &SymMatrix) -> Result<Vec<f64>> {
    check_same_dim(a, b)?;
    let chol = b.cholesky("generalized eigenproblem")?;
    let l = chol.l();
    // L⁻¹ A L⁻ᵀ, using the symmetry of A for the second solve.
    let z = l
        .solve_lower_triangular(a.as_matrix())
        .ok_or_else(|| Error::Numerical {
            context: "generalized eigenproblem".into(),
            condition: b.condition_estimate(),
        })?;
    let m = l
        .solve_lower_triangular(&z.transpose())
        .ok_or_else(|| Error::Numerical {
            context: "generalized eigenproblem".into(),
            condition: b.condition_estimate(),
        })?;
    Ok(SymMatrix::symmetrized(m).eigenvalues())
}

/// Part (Thompson) metric on the positive definite cone.
pub fn part_metric(x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    for (name, m) in [("first", x), ("second", y)] {
        if !is_pd(m, &ConeTolerance::for_matrix(m)) {
            return Err(Error::NotParts(format!(
                "{name} argument is not positive definite (min eigenvalue {:.3e})",
                m.min_eigenvalue()
            )));
        }
    }
    let ev = generalized_eigenvalues(y, x)?;
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 {
        return Err(Error::NotParts("pencil has non-positive eigenvalue".into()));
    }
    Ok(hi.max(1.0 / lo).ln().max(0.0))
}

/// Block-diagonal assembly, preserving order.
pub fn block_diag(blocks: &[SymMatrix]) -> Result<SymMatrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("block_diag of an empty list".into()));
    }
    let n: usize = blocks.iter().map(SymMatrix::dim).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let d = b.dim();
        out.view_mut((off, off), (d, d)).copy_from(b.as_matrix());
        off += d;
    }
    Ok(SymMatrix(out))
}

pub fn extract_block(x: &SymMatrix, offset: usize, dim: usize) -> Result<SymMatrix> {
    if dim == 0 || offset + dim > x.dim() {
        return Err(Error::InvalidInput(format!(
            "block at {offset} of size {dim} exceeds dimension {}",
            x.dim()
        )));
    }
    Ok(SymMatrix(x.as_matrix().view((offset, offset), (dim, dim)).into_owned()))
}

/// A block-diagonal symmetric matrix kept as its list of diagonal blocks.
///
/// Spectral quantities of a block-diagonal matrix are unions over blocks, so
/// definiteness, Loewner order, the part metric and both norms are all
/// evaluated block by block without forming the dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    blocks: Vec<SymMatrix>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<SymMatrix>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput(
                "block-diagonal matrix needs at least one block".into(),
            ));
        }
        Ok(Self { blocks })
    }

    /// Splits a dense matrix into diagonal blocks of the given sizes, rejecting
    /// any nonzero entry outside them.
    pub fn from_dense(x: &SymMatrix, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if total != x.dim() {
            return Err(Error::InvalidInput(format!(
                "block sizes sum to {total}, matrix has dimension {}",
                x.dim()
            )));
        }
        let mut owner = Vec::with_capacity(total);
        for (k, &d) in dims.iter().enumerate() {
            owner.extend(std::iter::repeat_n(k, d));
        }
        let m = x.as_matrix();
        for r in 0..total {
            for c in 0..total {
                if owner[r] != owner[c] && m[(r, c)] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({r},{c}) lies outside the diagonal blocks"
                    )));
                }
            }
        }
        let mut blocks = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &d in dims {
            blocks.push(extract_block(x, off, d)?);
            off += d;
        }
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[SymMatrix] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<SymMatrix> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(SymMatrix::dim).collect()
    }

    pub fn dense(&self) -> SymMatrix {
        block_diag(&self.blocks).expect("nonempty by construction")
    }

    fn zip_check(&self, other: &BlockDiagonal) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidInput("block structures differ".into()));
        }
        Ok(())
    }

    pub fn minus(&self, other: &BlockDiagonal) -> Result<BlockDiagonal> {
        self.zip_check(other)?;
        Ok(BlockDiagonal {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.minus(b)).collect(),
        })
    }

    pub fn plus(&self, other: &BlockDiagonal) -> Result<BlockDiagonal> {
        self.zip_check(other)?;
        Ok(BlockDiagonal {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.plus(b)).collect(),
        })
    }

    pub fn scaled(&self, a: f64) -> BlockDiagonal {
        BlockDiagonal {
            blocks: self.blocks.iter().map(|b| b.scaled(a)).collect(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(SymMatrix::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.blocks.iter().map(SymMatrix::max_abs_entry).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.blocks.iter().map(SymMatrix::spectral_norm).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `self − other`.
    pub fn order_margin(&self, other: &BlockDiagonal) -> Result<f64> {
        Ok(self.minus(other)?.min_eigenvalue())
    }

    pub fn loewner_geq(&self, other: &BlockDiagonal, tol: &ConeTolerance) -> Result<bool> {
        Ok(self.order_margin(other)? >= -tol.order_tol)
    }

    /// Largest part distance over corresponding blocks, which equals the part
    /// metric of the assembled matrices.
    pub fn part_metric(&self, other: &BlockDiagonal) -> Result<f64> {
        self.zip_check(other)?;
        let mut d = 0.0_f64;
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            d = d.max(part_metric(a, b)?);
        }
        Ok(d)
    }

    pub fn max_frobenius_block_delta(&self, other: &BlockDiagonal) -> Result<f64> {
        self.zip_check(other)?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.minus(b).frobenius_norm())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tol() -> ConeTolerance {
        ConeTolerance::new(1e-12, 1e-12).unwrap()
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&SymMatrix::identity(3), &tol()));
        assert!(is_psd(&SymMatrix::zeros(2), &tol()));
        assert!(!is_psd(&SymMatrix::from_diagonal(&[1.0, -0.5]), &tol()));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::from_element(1, 1, f64::NAN)).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(ConeTolerance::new(-1.0, 0.0).is_err());
        assert!(ConeTolerance::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn construction_symmetrizes() {
        let x = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0])).unwrap();
        assert_eq!(x.as_matrix()[(0, 1)], 3.0);
        assert_eq!(x.as_matrix()[(1, 0)], 3.0);
    }

    #[test]
    fn loewner_examples() {
        let i2 = SymMatrix::identity(2);
        assert!(loewner_geq(&i2.scaled(2.0), &i2, &tol()).unwrap());
        let a = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let b = SymMatrix::from_diagonal(&[2.0, 1.0]);
        assert!(!loewner_geq(&a, &b, &tol()).unwrap());
        assert!(!loewner_geq(&b, &a, &tol()).unwrap());
        assert!(loewner_geq(&i2, &SymMatrix::identity(3), &tol()).is_err());
    }

    #[test]
    fn part_metric_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(part_metric(&i2, &i2).unwrap(), 0.0);
        assert_relative_eq!(part_metric(&i2, &i2.scaled(2.0)).unwrap(), 2f64.ln(), epsilon = 1e-14);
        let x = SymMatrix::from_diagonal(&[1.0, 4.0]);
        let y = SymMatrix::from_diagonal(&[2.0, 1.0]);
        assert_relative_eq!(part_metric(&x, &y).unwrap(), 4f64.ln(), epsilon = 1e-14);
    }

    /// Grid scan over α of the defining sandwich, independent of the eigen route.
    #[test]
    fn part_metric_matches_alpha_scan() {
        let x = SymMatrix::from_diagonal(&[1.0, 4.0]);
        let y = SymMatrix::from_diagonal(&[2.0, 1.0]);
        let exact = ConeTolerance::exact();
        let mut best = None;
        let mut a = 1.0;
        while a <= 10.0 {
            let upper = loewner_geq(&x.scaled(a), &y, &exact).unwrap();
            let lower = loewner_geq(&y, &x.scaled(1.0 / a), &exact).unwrap();
            if upper && lower {
                best = Some(a);
                break;
            }
            a += 1e-4;
        }
        let best = best.unwrap();
        assert!((best - 4.0).abs() < 2e-4, "scan infimum {best}");
        assert_relative_eq!(part_metric(&x, &y).unwrap(), best.ln(), epsilon = 1e-4);
    }

    #[test]
    fn part_metric_rejects_singular() {
        let s = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(
            part_metric(&s, &SymMatrix::identity(2)),
            Err(Error::NotParts(_))
        ));
        assert!(matches!(
            part_metric(&SymMatrix::identity(2), &s),
            Err(Error::NotParts(_))
        ));
    }

    #[test]
    fn block_diag_examples() {
        let out = block_diag(&[SymMatrix::identity(1), SymMatrix::identity(2)]).unwrap();
        assert_eq!(out, SymMatrix::identity(3));
        let out = block_diag(&[SymMatrix::scalar(2.0), SymMatrix::scalar(3.0)]).unwrap();
        assert_eq!(out, SymMatrix::from_diagonal(&[2.0, 3.0]));
        assert!(block_diag(&[]).is_err());

        let a = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let b = SymMatrix::scalar(7.0);
        let d = block_diag(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(extract_block(&d, 0, 2).unwrap(), a);
        assert_eq!(extract_block(&d, 2, 1).unwrap(), b);
        let bd = BlockDiagonal::from_dense(&d, &[2, 1]).unwrap();
        assert_eq!(bd.blocks(), &[a, b]);
        assert!(BlockDiagonal::from_dense(
            &SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            &[1, 1]
        )
        .is_err());
    }

    #[test]
    fn block_part_metric_matches_dense() {
        let a = BlockDiagonal::new(vec![
            SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
            SymMatrix::scalar(3.0),
        ])
        .unwrap();
        let b = BlockDiagonal::new(vec![SymMatrix::identity(2), SymMatrix::scalar(0.5)]).unwrap();
        assert_relative_eq!(
            a.part_metric(&b).unwrap(),
            part_metric(&a.dense(), &b.dense()).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(a.spectral_norm(), a.dense().spectral_norm(), epsilon = 1e-12);
        assert_relative_eq!(a.frobenius_norm(), a.dense().frobenius_norm(), epsilon = 1e-12);
    }
}
