//! Sparse matrices, direct and iterative solvers, and eigenvalue utilities.
//!
//! Assembly accumulates into a COO builder and compresses to CSR with a
//! stable sort, so entry summation order is the element order regardless of
//! how the local contributions were computed. Direct solves are backed by
//! faer's sparse LU; conjugate gradients with Jacobi preconditioning covers
//! the symmetric positive definite mass-type solves.

use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinAlgError {
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("conjugate gradients stalled at relative residual {0:.3e}")]
    CgStalled(f64),
    #[error("matrix is numerically singular")]
    Singular,
    #[error("eigen iteration failed: {0}")]
    Eigen(String),
}

/// Triplet accumulator; duplicate entries sum.
#[derive(Debug, Clone)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Coo { nrows, ncols, entries: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn to_csr(mut self) -> Csr {
        // Stable sort: duplicates sum in insertion (element) order.
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut cur_row = 0usize;
        for (i, j, v) in self.entries {
            while cur_row < i {
                cur_row += 1;
                row_ptr[cur_row] = col_idx.len();
            }
            if col_idx.len() > row_ptr[cur_row] && *col_idx.last().unwrap() == j {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                vals.push(v);
            }
        }
        while cur_row < self.nrows {
            cur_row += 1;
            row_ptr[cur_row] = col_idx.len();
        }
        Csr { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, vals }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.vals[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut coo = Coo::new(self.ncols, self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                coo.add(*c, i, *v);
            }
        }
        coo.to_csr()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.vals {
            *v *= s;
        }
    }

    /// `self + s·other` over the merged sparsity pattern.
    pub fn add_scaled(&self, other: &Csr, s: f64) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut coo = Coo::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                coo.add(i, *c, *v);
            }
            let (cols, vals) = other.row(i);
            for (c, v) in cols.iter().zip(vals) {
                coo.add(i, *c, s * *v);
            }
        }
        coo.to_csr()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for i in 0..d.len() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c == i {
                    d[i] += v;
                }
            }
        }
        d
    }

    /// Largest |A_ij − A_ji| over the pattern; 0 for a symmetric matrix.
    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut max: f64 = 0.0;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            let mut ia = 0;
            let mut ib = 0;
            while ia < ca.len() || ib < cb.len() {
                let ja = ca.get(ia).copied().unwrap_or(usize::MAX);
                let jb = cb.get(ib).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    max = max.max((va[ia] - vb[ib]).abs());
                    ia += 1;
                    ib += 1;
                } else if ja < jb {
                    max = max.max(va[ia].abs());
                    ia += 1;
                } else {
                    max = max.max(vb[ib].abs());
                    ib += 1;
                }
            }
        }
        max
    }

    fn to_faer(&self) -> Result<SparseColMat<u64, f64>, LinAlgError> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((i as u64, *c as u64, *v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| LinAlgError::Factorization(format!("{e:?}")))
    }
}

/// Sparse LU factorization with reusable numeric data.
pub struct LuSolver {
    lu: faer::sparse::linalg::solvers::Lu<u64, f64>,
    n: usize,
}

impl LuSolver {
    pub fn new(a: &Csr) -> Result<Self, LinAlgError> {
        assert_eq!(a.nrows, a.ncols);
        let mat = a.to_faer()?;
        let lu = mat
            .sp_lu()
            .map_err(|e| LinAlgError::Factorization(format!("{e:?}")))?;
        Ok(LuSolver { lu, n: a.nrows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let rhs = faer::Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x: faer::Mat<f64> = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Preconditioned conjugate gradients for SPD systems.
pub fn solve_cg(
    a: &Csr,
    b: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, LinAlgError> {
    let n = b.len();
    let diag = a.diagonal();
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter().zip(&diag).map(|(ri, di)| ri / di.max(1e-300)).collect()
    };
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r: Vec<f64> = b
        .iter()
        .zip(a.matvec(&x))
        .map(|(bi, axi)| bi - axi)
        .collect();
    let bnorm = norm2(b).max(1e-300);
    if norm2(&r) / bnorm <= rel_tol {
        return Ok(x);
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) / bnorm <= rel_tol {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinAlgError::CgStalled(norm2(&r) / bnorm))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Builder for bordered block systems (saddle points plus constraint rows).
pub struct BlockBuilder {
    coo: Coo,
}

impl BlockBuilder {
    pub fn new(n: usize) -> Self {
        BlockBuilder { coo: Coo::new(n, n) }
    }

    pub fn add_csr(&mut self, row_off: usize, col_off: usize, m: &Csr, scale: f64) {
        for i in 0..m.nrows {
            let (cols, vals) = m.row(i);
            for (c, v) in cols.iter().zip(vals) {
                self.coo.add(row_off + i, col_off + c, scale * v);
            }
        }
    }

    pub fn add_csr_transposed(&mut self, row_off: usize, col_off: usize, m: &Csr, scale: f64) {
        for i in 0..m.nrows {
            let (cols, vals) = m.row(i);
            for (c, v) in cols.iter().zip(vals) {
                self.coo.add(row_off + c, col_off + i, scale * v);
            }
        }
    }

    /// Adds a constraint vector as a bordered row and column pair.
    pub fn add_border(&mut self, idx: usize, dof_off: usize, vector: &[f64]) {
        for (j, v) in vector.iter().enumerate() {
            if *v != 0.0 {
                self.coo.add(idx, dof_off + j, *v);
                self.coo.add(dof_off + j, idx, *v);
            }
        }
    }

    pub fn add_entry(&mut self, i: usize, j: usize, v: f64) {
        self.coo.add(i, j, v);
    }

    pub fn build(self) -> Csr {
        self.coo.to_csr()
    }
}

/// Lowest eigenpairs of the symmetric pencil `(A, M)` by inverse subspace
/// iteration with M-orthonormalization and Rayleigh-Ritz extraction.
///
/// `apply_inv` must apply an approximation of `(A + σM)⁻¹`; `apply_a` applies
/// `A`; `deflate` vectors are projected out (in the M inner product) at every
/// step. Eigenvalues are returned ascending, shifted back by `sigma`.
pub fn lowest_eigenpairs(
    apply_inv: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_a: &dyn Fn(&[f64]) -> Vec<f64>,
    mass: &Csr,
    k: usize,
    iters: usize,
    sigma: f64,
    deflate: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>, LinAlgError> {
    let n = mass.nrows;
    // Deterministic pseudo-random start block.
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state as f64 / u64::MAX as f64) - 0.5
    };
    let mut basis: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| next()).collect()).collect();

    let m_dot = |a: &[f64], b: &[f64]| dot(a, &mass.matvec(b));
    let deflate_vec = |v: &mut Vec<f64>| {
        for d in deflate {
            let c = m_dot(v, d) / m_dot(d, d).max(1e-300);
            for i in 0..n {
                v[i] -= c * d[i];
            }
        }
    };

    for _ in 0..iters {
        // X ← (A+σM)⁻¹ M X, deflated and M-orthonormalized.
        for b in basis.iter_mut() {
            deflate_vec(b);
            *b = apply_inv(&mass.matvec(b));
            deflate_vec(b);
        }
        m_orthonormalize(&mut basis, mass)?;
    }
    // Rayleigh-Ritz on the converged block.
    let mut a_small = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut m_small = nalgebra::DMatrix::<f64>::zeros(k, k);
    let a_basis: Vec<Vec<f64>> = basis.iter().map(|b| apply_a(b)).collect();
    let m_basis: Vec<Vec<f64>> = basis.iter().map(|b| mass.matvec(b)).collect();
    for i in 0..k {
        for j in 0..k {
            a_small[(i, j)] = dot(&basis[i], &a_basis[j]);
            m_small[(i, j)] = dot(&basis[i], &m_basis[j]);
        }
    }
    // Symmetrize against roundoff and solve the small generalized problem.
    let a_sym = 0.5 * (&a_small + a_small.transpose());
    let m_sym = 0.5 * (&m_small + m_small.transpose());
    let chol = m_sym
        .clone()
        .cholesky()
        .ok_or_else(|| LinAlgError::Eigen("projected mass not SPD".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| LinAlgError::Eigen("projected mass inversion failed".into()))?;
    let reduced = &l_inv * a_sym * l_inv.transpose();
    let eig = nalgebra::SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut out = Vec::with_capacity(k);
    for &idx in &order {
        let y = l_inv.transpose() * eig.eigenvectors.column(idx);
        let mut v = vec![0.0; n];
        for (j, b) in basis.iter().enumerate() {
            for i in 0..n {
                v[i] += y[j] * b[i];
            }
        }
        out.push((eig.eigenvalues[idx] - sigma, v));
    }
    Ok(out)
}

fn m_orthonormalize(basis: &mut [Vec<f64>], mass: &Csr) -> Result<(), LinAlgError> {
    let n = basis[0].len();
    for i in 0..basis.len() {
        for _pass in 0..2 {
            let mi = mass.matvec(&basis[i]);
            let mut coeffs = Vec::new();
            for j in 0..i {
                coeffs.push(dot(&basis[j], &mi));
            }
            for (j, c) in coeffs.iter().enumerate() {
                for idx in 0..n {
                    basis[i][idx] -= c * basis[j][idx];
                }
            }
        }
        let nrm = dot(&basis[i], &mass.matvec(&basis[i])).sqrt();
        if !(nrm > 1e-300) {
            return Err(LinAlgError::Eigen("orthonormalization collapse".into()));
        }
        for idx in 0..n {
            basis[i][idx] /= nrm;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let mut coo = Coo::new(n, n);
        for i in 0..n {
            coo.add(i, i, 2.0);
            if i > 0 {
                coo.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                coo.add(i, i + 1, -1.0);
            }
        }
        coo.to_csr()
    }

    #[test]
    fn coo_merges_duplicates_in_order() {
        let mut coo = Coo::new(2, 2);
        coo.add(0, 0, 1.0);
        coo.add(1, 1, 2.0);
        coo.add(0, 0, 3.0);
        let csr = coo.to_csr();
        assert_eq!(csr.nnz(), 2);
        assert_eq!(csr.matvec(&[1.0, 1.0]), vec![4.0, 2.0]);
    }

    #[test]
    fn lu_and_cg_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x1 = LuSolver::new(&a).unwrap().solve(&b);
        let x2 = solve_cg(&a, &b, None, 1e-14, 1000).unwrap();
        let diff: f64 = x1.iter().zip(&x2).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9);
        let r: Vec<f64> = a.matvec(&x1).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) / norm2(&b) < 1e-12);
    }

    #[test]
    fn eigen_iteration_finds_smallest() {
        let n = 40;
        let a = laplace_1d(n);
        let mut coo = Coo::new(n, n);
        for i in 0..n {
            coo.add(i, i, 1.0);
        }
        let mass = coo.to_csr();
        let shifted = a.add_scaled(&mass, 1e-12);
        let lu = LuSolver::new(&shifted).unwrap();
        let pairs = lowest_eigenpairs(
            &|b| lu.solve(b),
            &|b| a.matvec(b),
            &mass,
            3,
            60,
            1e-12,
            &[],
            7,
        )
        .unwrap();
        // Exact eigenvalues of the Dirichlet 1-D Laplacian: 4 sin²(kπ/(2(n+1))).
        for (k, (lam, _)) in pairs.iter().enumerate() {
            let exact = 4.0 * ((k + 1) as f64 * std::f64::consts::PI / (2.0 * (n + 1) as f64)).sin().powi(2);
            assert!((lam - exact).abs() < 1e-8 * (1.0 + exact), "k={k} {lam} vs {exact}");
        }
    }

    #[test]
    fn asymmetry_detects() {
        let mut coo = Coo::new(2, 2);
        coo.add(0, 1, 1.0);
        coo.add(1, 0, 1.5);
        let csr = coo.to_csr();
        assert!((csr.max_asymmetry() - 0.5).abs() < 1e-15);
    }
}
