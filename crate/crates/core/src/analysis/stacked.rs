//! The all-edges information update written as one matrix map
//!
//! ```text
//! F(C) = Aᵀ { Ω + H [Ψ + K (I_φ ⊗ C) Kᵀ]⁻¹ Hᵀ }⁻¹ A
//! ```
//!
//! where `C` is block diagonal over directed edges in ascending
//! `(factor, variable)` order. Every factor in the product is block diagonal
//! over the same edges, so [`StackedOperator::apply`] evaluates it one edge
//! block at a time, forming each selection `Ξ_{n,j} C Ξ_{n,j}ᵀ` as a dense
//! product. This is deliberately a separate code path from the engine, which
//! sums the selected blocks by lookup.

use nalgebra::DMatrix;

use crate::cone::{BlockDiagonal, SymMatrix};
use crate::error::{Error, Result};
use crate::network::{DirectedEdge, GaussianNetwork};

/// The edges whose information blocks `Ξ_{n,j}` sums: every `(f_k, j)` with
/// `f_k` in `B(j)` other than `f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub factor: usize,
    pub variable: usize,
    pub dim: usize,
    /// Indices into the edge order.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StackedOperator {
    pub(super) edge_order: Vec<DirectedEdge>,
    pub(super) dims: Vec<usize>,
    pub(super) offsets: Vec<usize>,
    pub(super) a_blocks: Vec<DMatrix<f64>>,
    pub(super) h_blocks: Vec<DMatrix<f64>>,
    pub(super) psi_blocks: Vec<Vec<SymMatrix>>,
    pub(super) selections: Vec<Vec<Selection>>,
    pub(super) omega_blocks: Vec<SymMatrix>,
    pub(super) phi: usize,
}

/// Fully assembled dense factors, for small instances.
#[derive(Debug, Clone)]
pub struct DenseStacked {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub phi: usize,
}

fn bdiag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(DMatrix::nrows).sum();
    let c: usize = blocks.iter().map(DMatrix::ncols).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut ro, mut co) = (0, 0);
    for b in blocks {
        out.view_mut((ro, co), b.shape()).copy_from(b);
        ro += b.nrows();
        co += b.ncols();
    }
    out
}

impl StackedOperator {
    pub fn build(net: &GaussianNetwork) -> Result<Self> {
        let violations = net.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        let edge_order = net.directed_edges().to_vec();
        let dims: Vec<usize> = edge_order.iter().map(|e| net.dim(e.variable)).collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &d in &dims {
            offsets.push(off);
            off += d;
        }

        let mut a_blocks = Vec::new();
        let mut h_blocks = Vec::new();
        let mut psi_blocks = Vec::new();
        let mut selections = Vec::new();
        let mut omega_blocks = Vec::new();
        for e in &edge_order {
            let (n, i) = (e.factor, e.variable);
            let node = net.node(n);
            let others: Vec<usize> = net.factor_scope(n).iter().copied().filter(|&j| j != i).collect();
            a_blocks.push(net.coeff(n, i).clone());
            let h_cols: usize = others.iter().map(|&j| net.dim(j)).sum();
            let mut h = DMatrix::zeros(node.obs_dim(), h_cols);
            let mut col = 0;
            for &j in &others {
                let a = net.coeff(n, j);
                h.view_mut((0, col), a.shape()).copy_from(a);
                col += a.ncols();
            }
            h_blocks.push(h);
            let mut psi = Vec::with_capacity(others.len());
            let mut sel = Vec::with_capacity(others.len());
            for &j in &others {
                psi.push(net.node(j).prior_cov.inverse("prior inverse")?);
                let sources = net
                    .variable_factors(j)
                    .iter()
                    .filter(|&&k| k != n)
                    .map(|&k| net.edge_index(DirectedEdge::new(k, j)).expect("edge exists"))
                    .collect();
                sel.push(Selection {
                    factor: n,
                    variable: j,
                    dim: net.dim(j),
                    sources,
                });
            }
            psi_blocks.push(psi);
            selections.push(sel);
            omega_blocks.push(node.noise_cov.clone());
        }
        let phi = (1..=net.len())
            .map(|n| {
                let b = net.factor_scope(n).len();
                b * (b - 1)
            })
            .sum();
        let op = Self {
            edge_order,
            dims,
            offsets,
            a_blocks,
            h_blocks,
            psi_blocks,
            selections,
            omega_blocks,
            phi,
        };
        op.check_shapes()?;
        Ok(op)
    }

    fn check_shapes(&self) -> Result<()> {
        let slots: usize = self.selections.iter().map(Vec::len).sum();
        if slots != self.phi {
            return Err(Error::Invariant(format!(
                "{slots} selection slots, expected φ = {}",
                self.phi
            )));
        }
        for (e, sel) in self.selections.iter().enumerate() {
            let m = self.omega_blocks[e].dim();
            let h = &self.h_blocks[e];
            let psi_dim: usize = self.psi_blocks[e].iter().map(SymMatrix::dim).sum();
            if self.a_blocks[e].nrows() != m || h.nrows() != m || h.ncols() != psi_dim {
                return Err(Error::Invariant(format!(
                    "shape chain broken at {}",
                    self.edge_order[e]
                )));
            }
            for s in sel {
                for &src in &s.sources {
                    if self.dims[src] != s.dim {
                        return Err(Error::Invariant(format!(
                            "selection dimension mismatch at {}",
                            self.edge_order[e]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn edge_order(&self) -> &[DirectedEdge] {
        &self.edge_order
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Dimension of the stacked information matrix.
    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Number of selection matrices `Ξ_{n,j}`: `Σ_n |B(f_n)| (|B(f_n)| − 1)`.
    pub fn phi(&self) -> usize {
        self.phi
    }

    pub fn a_blocks(&self) -> &[DMatrix<f64>] {
        &self.a_blocks
    }

    pub fn selections(&self, edge: usize) -> &[Selection] {
        &self.selections[edge]
    }

    /// The 0/1 matrix `Ξ` with `Ξ C Ξᵀ` equal to the sum of the selected
    /// diagonal blocks of a block-diagonal `C`.
    pub fn xi_matrix(&self, s: &Selection) -> DMatrix<f64> {
        let mut xi = DMatrix::zeros(s.dim, self.dim());
        for &src in &s.sources {
            let off = self.offsets[src];
            for r in 0..s.dim {
                xi[(r, off + r)] = 1.0;
            }
        }
        xi
    }

    /// `K_{n,i}`: block diagonal of the `Ξ_{n,j}` over `j ∈ B(f_n) \ i`.
    pub fn k_block(&self, edge: usize) -> DMatrix<f64> {
        let xis: Vec<DMatrix<f64>> = self.selections[edge].iter().map(|s| self.xi_matrix(s)).collect();
        bdiag(&xis)
    }

    fn edge_output(&self, e: usize, selected: Vec<SymMatrix>) -> Result<SymMatrix> {
        let omega = self.omega_blocks[e].as_matrix();
        let mut middle = omega.clone();
        if !selected.is_empty() {
            let inner_blocks: Vec<DMatrix<f64>> = self.psi_blocks[e]
                .iter()
                .zip(selected)
                .map(|(p, s)| p.plus(&s).into_matrix())
                .collect();
            let inner = SymMatrix::symmetrized(bdiag(&inner_blocks));
            let h = &self.h_blocks[e];
            let solved = inner.cholesky("stacked inner term")?.solve(&h.transpose());
            middle += h * solved;
        }
        let middle = SymMatrix::symmetrized(middle);
        let a = &self.a_blocks[e];
        let out = a.transpose() * middle.cholesky("stacked outer term")?.solve(a);
        Ok(SymMatrix::symmetrized(out))
    }

    /// `F(C)` for a dense block-diagonal `C` conforming to the edge order.
    pub fn apply(&self, c: &SymMatrix) -> Result<SymMatrix> {
        if c.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "stacked input has dimension {}, expected {}",
                c.dim(),
                self.dim()
            )));
        }
        // conformance check only; the products below use the dense input
        BlockDiagonal::from_dense(c, &self.dims)?;
        let cm = c.as_matrix();
        let mut out = Vec::with_capacity(self.edge_order.len());
        for e in 0..self.edge_order.len() {
            let selected = self.selections[e]
                .iter()
                .map(|s| {
                    let xi = self.xi_matrix(s);
                    SymMatrix::symmetrized(&xi * cm * xi.transpose())
                })
                .collect();
            out.push(self.edge_output(e, selected)?);
        }
        Ok(BlockDiagonal::new(out)?.dense())
    }

    /// `F(C)` on the block list directly, summing selected blocks.
    pub fn apply_blocks(&self, c: &BlockDiagonal) -> Result<BlockDiagonal> {
        if c.dims() != self.dims {
            return Err(Error::InvalidInput(
                "block structure does not match the edge order".into(),
            ));
        }
        let blocks = c.blocks();
        let mut out = Vec::with_capacity(self.edge_order.len());
        for e in 0..self.edge_order.len() {
            let selected = self.selections[e]
                .iter()
                .map(|s| {
                    s.sources
                        .iter()
                        .fold(SymMatrix::zeros(s.dim), |acc, &src| acc.plus(&blocks[src]))
                })
                .collect();
            out.push(self.edge_output(e, selected)?);
        }
        BlockDiagonal::new(out)
    }

    /// Assembles `A, H, Ψ, K, Ω` as dense matrices. Sizes grow with
    /// `φ · dim`, so this is meant for small instances.
    pub fn dense(&self) -> DenseStacked {
        let psi: Vec<DMatrix<f64>> = self
            .psi_blocks
            .iter()
            .map(|ps| bdiag(&ps.iter().map(|p| p.as_matrix().clone()).collect::<Vec<_>>()))
            .collect();
        let k: Vec<DMatrix<f64>> = (0..self.edge_order.len()).map(|e| self.k_block(e)).collect();
        let omega: Vec<DMatrix<f64>> = self.omega_blocks.iter().map(|o| o.as_matrix().clone()).collect();
        DenseStacked {
            a: bdiag(&self.a_blocks),
            h: bdiag(&self.h_blocks),
            psi: bdiag(&psi),
            k: bdiag(&k),
            omega: bdiag(&omega),
            phi: self.phi,
        }
    }
}

impl DenseStacked {
    /// The map evaluated literally on the assembled matrices, including the
    /// Kronecker product `I_φ ⊗ C`.
    pub fn apply(&self, c: &SymMatrix) -> Result<SymMatrix> {
        let ic = DMatrix::<f64>::identity(self.phi, self.phi).kronecker(c.as_matrix());
        let inner = SymMatrix::symmetrized(&self.psi + &self.k * ic * self.k.transpose());
        let middle = SymMatrix::symmetrized(
            &self.omega + &self.h * inner.inverse("dense inner")?.as_matrix() * self.h.transpose(),
        );
        Ok(middle.inverse("dense outer")?.congruence(&self.a))
    }
}
