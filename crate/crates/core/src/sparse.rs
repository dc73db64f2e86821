//! Thin helpers around `sprs` for the global trace matrices.

use nalgebra::{DMatrix, DVector};
use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{HdgError, Result};

pub type SparseMatrix = CsMat<f64>;

/// Accumulates dense element blocks into a square sparse matrix.
#[derive(Debug)]
pub struct BlockAssembler {
    tri: TriMat<f64>,
}

impl BlockAssembler {
    pub fn new(n: usize) -> Self {
        Self {
            tri: TriMat::new((n, n)),
        }
    }

    /// Adds `sign_i sign_j block[(a, b)]` at `(dofs[a], dofs[b])`; entries
    /// with `dofs[a] == None` are dropped.
    pub fn add_block(&mut self, dofs: &[Option<usize>], signs: &[f64], block: &DMatrix<f64>) {
        for (a, da) in dofs.iter().enumerate() {
            let Some(i) = *da else { continue };
            for (b, db) in dofs.iter().enumerate() {
                let Some(j) = *db else { continue };
                self.tri.add_triplet(i, j, signs[a] * signs[b] * block[(a, b)]);
            }
        }
    }

    pub fn finish(self) -> SparseMatrix {
        self.tri.to_csr()
    }
}

/// `y = A x`.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    for (i, row) in a.outer_iterator().enumerate() {
        y[i] = row.iter().map(|(j, v)| v * x[j]).sum();
    }
    y
}

pub fn max_abs(a: &SparseMatrix) -> f64 {
    a.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max |A - A^T|` relative to `max |A|`.
pub fn symmetry_defect(a: &SparseMatrix) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, v) in row.iter() {
            let t = a.get(j, i).copied().unwrap_or(0.0);
            worst = worst.max((v - t).abs());
        }
    }
    worst / scale
}

pub fn to_dense(a: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.rows(), a.cols());
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, v) in row.iter() {
            d[(i, j)] += *v;
        }
    }
    d
}

/// Sparse `L D L^T` factorisation of a symmetric positive definite matrix.
pub struct SpdFactor {
    ldl: LdlNumeric<f64, usize>,
    n: usize,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("n", &self.n).finish()
    }
}

impl SpdFactor {
    pub fn new(a: &SparseMatrix, what: &str) -> Result<Self> {
        let n = a.rows();
        let csc = a.to_csc();
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(csc.view())
            .map_err(|e| HdgError::NotPositiveDefinite(format!("{what}: {e}")))?;
        let d = ldl.d();
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some((i, v)) = d
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 1e-14 * dmax))
        {
            return Err(HdgError::NotPositiveDefinite(format!(
                "{what}: pivot {i} is {v:e}"
            )));
        }
        Ok(Self { ldl, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.ldl.solve(b.to_vec())
    }

    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }
}
