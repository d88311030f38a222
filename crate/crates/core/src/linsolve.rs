//! Linear solvers: Jacobi-preconditioned CG and sparse LDL^T factorizations.

use dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{LdltRef, SymbolicCholesky, factorize_symbolic_cholesky};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, dot, norm2};

pub const PCG_TOL: f64 = 1e-10;

/// Solve `A x = rhs` by Jacobi-preconditioned conjugate gradients.
///
/// `fixed` prescribes values for some dofs; their rows are dropped and their
/// columns moved to the right-hand side. Converges when the relative residual
/// on free dofs is at most `1e-10`.
pub fn solve_spd(a: &CsrMatrix, rhs: &[f64], fixed: Option<&[(usize, f64)]>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || rhs.len() != n {
        return Err(Error::Dimension(format!(
            "{}x{} system with {} right-hand side entries",
            a.nrows(),
            a.ncols(),
            rhs.len()
        )));
    }
    let mut x = vec![0.0; n];
    let mut free = vec![true; n];
    for &(i, v) in fixed.unwrap_or(&[]) {
        x[i] = v;
        free[i] = false;
    }
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = (0..n)
        .map(|i| if free[i] { rhs[i] - ax[i] } else { 0.0 })
        .collect();
    let scale = norm2(&r).max(f64::MIN_POSITIVE);
    let target = PCG_TOL * scale;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .zip(&free)
        .map(|(&d, &f)| if f && d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let cap = 10 * n + 100;
    let mut res = norm2(&r);
    for _ in 0..cap {
        if res <= target {
            return Ok(x);
        }
        a.mul_vec_into(&p, &mut ap);
        for i in 0..n {
            if !free[i] {
                ap[i] = 0.0;
            }
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Factorization("matrix is not positive definite on free dofs".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm2(&r);
    }
    if res <= target {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        solver: "conjugate gradient",
        iterations: cap,
        residual: res / scale,
        history: Vec::new(),
    })
}

/// Sparse `L D L^T` factorization of a symmetric matrix with a fixed pattern.
///
/// The symbolic analysis is reused across [`SparseLdlt::refactor`] calls, so
/// matrices that only change values (interior-point diagonals, Newton systems)
/// are cheap to refactor. For quasi-definite saddle matrices pass the pivot
/// signs; tiny pivots of the wrong sign are then regularized.
pub struct SparseLdlt {
    n: usize,
    symbolic: SymbolicCholesky<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    signs: Option<Vec<i8>>,
    factor: Vec<f64>,
}

impl SparseLdlt {
    /// Analyse and factor `a` (only its upper triangle is read).
    pub fn new(a: &CsrMatrix, signs: Option<Vec<i8>>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("LDL^T needs a square matrix".into()));
        }
        // Row i of the upper triangle in CSR is column i of the lower triangle in CSC.
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j >= i {
                    row_idx.push(j);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let symbolic_matrix =
            SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        let symbolic = factorize_symbolic_cholesky(
            symbolic_matrix.as_ref(),
            Side::Lower,
            Default::default(),
            Default::default(),
        )
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let factor = vec![0.0; symbolic.len_val()];
        let mut out = SparseLdlt {
            n,
            symbolic,
            values: vec![0.0; row_idx.len()],
            col_ptr,
            row_idx,
            signs,
            factor,
        };
        out.refactor(a)?;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Numeric refactorization for a matrix with the same upper pattern.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<()> {
        if a.nrows() != self.n || a.ncols() != self.n {
            return Err(Error::Dimension(format!(
                "factor of dimension {} given a {}x{} matrix",
                self.n,
                a.nrows(),
                a.ncols()
            )));
        }
        let mut k = 0;
        for i in 0..self.n {
            for (j, v) in a.row(i) {
                if j >= i {
                    if k >= self.row_idx.len() || self.row_idx[k] != j {
                        return Err(Error::Structure("pattern changed between factorizations".into()));
                    }
                    self.values[k] = v;
                    k += 1;
                }
            }
        }
        if k != self.row_idx.len() {
            return Err(Error::Structure("pattern changed between factorizations".into()));
        }
        let matrix = SparseColMat::new(
            SymbolicSparseColMat::new_checked(
                self.n,
                self.n,
                self.col_ptr.clone(),
                None,
                self.row_idx.clone(),
            ),
            self.values.clone(),
        );
        let regularization = LdltRegularization {
            dynamic_regularization_signs: self.signs.as_deref(),
            dynamic_regularization_delta: if self.signs.is_some() { 1e-13 } else { 0.0 },
            dynamic_regularization_epsilon: if self.signs.is_some() { 1e-15 } else { 0.0 },
        };
        let par = Par::Seq;
        let mut buf =
            MemBuffer::new(self.symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default()));
        self.symbolic
            .factorize_numeric_ldlt(
                &mut self.factor,
                matrix.as_ref(),
                Side::Lower,
                regularization,
                par,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(())
    }

    /// Solve with the current factor.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let par = Par::Seq;
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, par));
        LdltRef::new(&self.symbolic, &self.factor).solve_in_place_with_conj(
            Conj::No,
            b.as_mut(),
            par,
            MemStack::new(&mut buf),
        );
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }

    /// Solve `a x = rhs` with iterative refinement against `apply` (the exact
    /// operator), stopping when the residual stops improving.
    pub fn solve_refined(&self, apply: impl Fn(&[f64]) -> Vec<f64>, rhs: &[f64], steps: usize) -> Vec<f64> {
        let mut x = self.solve(rhs);
        let mut best = f64::INFINITY;
        for _ in 0..steps {
            let ax = apply(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = norm2(&r);
            if rn >= 0.5 * best || rn == 0.0 {
                break;
            }
            best = rn;
            let dx = self.solve(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        x
    }
}

/// Dense LU solve with partial pivoting. Returns `None` for (numerically)
/// singular matrices.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
        if m[p][k].abs() <= 1e-13 * scale {
            return None;
        }
        m.swap(k, p);
        x.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (x[k] - s) / m[k][k];
    }
    Some(x)
}
