//! Sparse block linear algebra used by assembly, mortar transforms and the
//! multigrid solver.
//!
//! All system matrices are sparse matrices of 2x2 blocks (one block per
//! vertex pair, d = 2). Transfer operators (prolongations, the mortar jump
//! transform) act identically on both vector components and are stored as
//! scalar sparse matrices applied blockwise.

use nalgebra::{DMatrix, DVector};

pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;

/// Coordinate-format accumulator for block matrices.
#[derive(Clone, Debug)]
pub struct BlockCoo {
    pub n_rows: usize,
    pub n_cols: usize,
    entries: Vec<(usize, usize, Mat2)>,
}

impl BlockCoo {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        BlockCoo { n_rows, n_cols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, block: Mat2) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.entries.push((i, j, block));
    }

    pub fn to_csr(mut self) -> BlockCsr {
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<Mat2> = Vec::new();
        let mut rows: Vec<usize> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (i, j, b) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += b;
            } else {
                rows.push(i);
                col_idx.push(j);
                values.push(b);
                last = Some((i, j));
            }
        }
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        for &i in &rows {
            row_ptr[i + 1] += 1;
        }
        for r in 1..=self.n_rows {
            row_ptr[r] += row_ptr[r - 1];
        }
        BlockCsr { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, col_idx, values }
    }
}

/// Sparse matrix of 2x2 blocks in compressed sparse row format.
#[derive(Clone, Debug)]
pub struct BlockCsr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<Mat2>,
}

impl BlockCsr {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        BlockCsr { n_rows, n_cols, row_ptr: vec![0; n_rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut coo = BlockCoo::new(n, n);
        for i in 0..n {
            coo.push(i, i, Mat2::identity());
        }
        coo.to_csr()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &Mat2)> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter())
    }

    pub fn block(&self, i: usize, j: usize) -> Mat2 {
        for (c, v) in self.row(i) {
            if c == j {
                return *v;
            }
        }
        Mat2::zeros()
    }

    pub fn diag_block(&self, i: usize) -> Mat2 {
        self.block(i, i)
    }

    /// Mutable access to the stored diagonal block; panics if the sparsity
    /// pattern has no diagonal entry in this row.
    pub fn diag_block_mut(&mut self, i: usize) -> &mut Mat2 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        for k in lo..hi {
            if self.col_idx[k] == i {
                return &mut self.values[k];
            }
        }
        panic!("no diagonal entry in row {i}");
    }

    pub fn mul_vec(&self, x: &[Vec2]) -> Vec<Vec2> {
        debug_assert_eq!(x.len(), self.n_cols);
        let mut y = vec![Vec2::zeros(); self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = Vec2::zeros();
            for (j, b) in self.row(i) {
                acc += b * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// y = A x restricted to a single row.
    pub fn row_mul_vec(&self, i: usize, x: &[Vec2]) -> Vec2 {
        let mut acc = Vec2::zeros();
        for (j, b) in self.row(i) {
            acc += b * x[j];
        }
        acc
    }

    /// Linear combination with identical dimensions; sparsity is merged.
    pub fn linear_combination(terms: &[(f64, &BlockCsr)]) -> BlockCsr {
        assert!(!terms.is_empty());
        let (n_rows, n_cols) = (terms[0].1.n_rows, terms[0].1.n_cols);
        let mut coo = BlockCoo::new(n_rows, n_cols);
        for &(c, m) in terms {
            assert_eq!((m.n_rows, m.n_cols), (n_rows, n_cols));
            for i in 0..n_rows {
                for (j, b) in m.row(i) {
                    coo.push(i, j, c * b);
                }
            }
        }
        coo.to_csr()
    }

    pub fn transpose(&self) -> BlockCsr {
        let mut coo = BlockCoo::new(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for (j, b) in self.row(i) {
                coo.push(j, i, b.transpose());
            }
        }
        coo.to_csr()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|b| b.abs().max()).fold(0.0, f64::max)
    }

    /// max |A - A^T| entry, for symmetry checks.
    pub fn asymmetry(&self) -> f64 {
        let at = self.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, b) in self.row(i) {
                let d = b - at.block(i, j);
                worst = worst.max(d.abs().max());
            }
        }
        worst
    }

    /// Congruence transform R A R^T with R the block-diagonal matrix of the
    /// given per-node rotations.
    pub fn rotate(&self, rot: &[Mat2]) -> BlockCsr {
        assert_eq!(self.n_rows, self.n_cols);
        assert_eq!(rot.len(), self.n_rows);
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let lo = out.row_ptr[i];
            let hi = out.row_ptr[i + 1];
            for k in lo..hi {
                let j = out.col_idx[k];
                out.values[k] = rot[i] * out.values[k] * rot[j].transpose();
            }
        }
        out
    }

    /// Zeroes the rows/columns of fixed scalar dofs and puts a unit diagonal
    /// there. `fixed[i][c]` marks component c of block i.
    pub fn constrain(&mut self, fixed: &[[bool; 2]]) {
        assert_eq!(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            for k in lo..hi {
                let j = self.col_idx[k];
                let b = &mut self.values[k];
                for c in 0..2 {
                    if fixed[i][c] {
                        b[(c, 0)] = 0.0;
                        b[(c, 1)] = 0.0;
                    }
                    if fixed[j][c] {
                        b[(0, c)] = 0.0;
                        b[(1, c)] = 0.0;
                    }
                }
                if i == j {
                    for c in 0..2 {
                        if fixed[i][c] {
                            b[(c, c)] = 1.0;
                        }
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * self.n_rows, 2 * self.n_cols);
        for i in 0..self.n_rows {
            for (j, b) in self.row(i) {
                for r in 0..2 {
                    for c in 0..2 {
                        m[(2 * i + r, 2 * j + c)] += b[(r, c)];
                    }
                }
            }
        }
        m
    }
}

/// Scalar sparse CSR matrix; applied blockwise to vectors of 2-blocks.
#[derive(Clone, Debug)]
pub struct ScalarCsr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl ScalarCsr {
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|&(j, _)| j);
            for (j, v) in r {
                debug_assert!(j < n_cols);
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        ScalarCsr { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        ScalarCsr::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn mul_blocks(&self, x: &[Vec2]) -> Vec<Vec2> {
        debug_assert_eq!(x.len(), self.n_cols);
        let mut y = vec![Vec2::zeros(); self.n_rows];
        for i in 0..self.n_rows {
            for (j, w) in self.row(i) {
                y[i] += w * x[j];
            }
        }
        y
    }

    pub fn mul_blocks_transpose(&self, x: &[Vec2]) -> Vec<Vec2> {
        debug_assert_eq!(x.len(), self.n_rows);
        let mut y = vec![Vec2::zeros(); self.n_cols];
        for i in 0..self.n_rows {
            for (j, w) in self.row(i) {
                y[j] += w * x[i];
            }
        }
        y
    }
}

/// Galerkin triple product P^T A P for a scalar transfer operator P
/// (n_fine x n_coarse) acting blockwise.
pub fn triple_product(p: &ScalarCsr, a: &BlockCsr) -> BlockCsr {
    assert_eq!(a.n_rows, p.n_rows);
    assert_eq!(a.n_cols, p.n_rows);
    let nc = p.n_cols;
    // Transpose adjacency of P (flat CSC layout, counting sort): for each
    // coarse row, the fine rows feeding it.
    let nnz = p.col_idx.len();
    let mut tp_ptr = vec![0usize; nc + 1];
    for &ci in &p.col_idx {
        tp_ptr[ci + 1] += 1;
    }
    for k in 0..nc {
        tp_ptr[k + 1] += tp_ptr[k];
    }
    let mut tp_row = vec![0usize; nnz];
    let mut tp_val = vec![0f64; nnz];
    let mut cursor = tp_ptr.clone();
    for i in 0..p.n_rows {
        for (ci, wi) in p.row(i) {
            let slot = cursor[ci];
            cursor[ci] += 1;
            tp_row[slot] = i;
            tp_val[slot] = wi;
        }
    }
    // One coarse row at a time, scattered into a reusable dense buffer.
    let mut buf = vec![Mat2::zeros(); nc];
    let mut mark = vec![false; nc];
    let mut touched: Vec<usize> = Vec::new();
    let mut row_ptr = Vec::with_capacity(nc + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for ci in 0..nc {
        touched.clear();
        for slot in tp_ptr[ci]..tp_ptr[ci + 1] {
            let (i, wi) = (tp_row[slot], tp_val[slot]);
            for (j, b) in a.row(i) {
                for (cj, wj) in p.row(j) {
                    if !mark[cj] {
                        mark[cj] = true;
                        touched.push(cj);
                        buf[cj] = Mat2::zeros();
                    }
                    buf[cj] += (wi * wj) * b;
                }
            }
        }
        touched.sort_unstable();
        for &cj in &touched {
            col_idx.push(cj);
            values.push(buf[cj]);
            mark[cj] = false;
        }
        row_ptr.push(col_idx.len());
    }
    BlockCsr { n_rows: nc, n_cols: nc, row_ptr, col_idx, values }
}

// --- block vector helpers ---

pub fn bv_zeros(n: usize) -> Vec<Vec2> {
    vec![Vec2::zeros(); n]
}

pub fn bv_dot(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub fn bv_axpy(y: &mut [Vec2], alpha: f64, x: &[Vec2]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn bv_scale(y: &mut [Vec2], alpha: f64) {
    for yi in y.iter_mut() {
        *yi *= alpha;
    }
}

pub fn bv_sub(a: &[Vec2], b: &[Vec2]) -> Vec<Vec2> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn bv_add(a: &[Vec2], b: &[Vec2]) -> Vec<Vec2> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn bv_norm(a: &[Vec2]) -> f64 {
    bv_dot(a, a).sqrt()
}

/// Energy norm sqrt(x^T A x).
pub fn energy_norm(a: &BlockCsr, x: &[Vec2]) -> f64 {
    bv_dot(x, &a.mul_vec(x)).max(0.0).sqrt()
}

/// Dense Cholesky solve of a block system; used on the coarsest multigrid
/// level and in small oracle computations.
pub fn dense_solve(a: &BlockCsr, rhs: &[Vec2]) -> Option<Vec<Vec2>> {
    DenseChol::new(a).map(|c| c.solve(rhs))
}

/// Cached dense Cholesky factorization of a block matrix, so repeated
/// coarsest-level solves do not refactorize.
pub struct DenseChol {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n: usize,
}

impl DenseChol {
    pub fn new(a: &BlockCsr) -> Option<Self> {
        let chol = a.to_dense().cholesky()?;
        Some(DenseChol { chol, n: a.n_rows })
    }

    pub fn solve(&self, rhs: &[Vec2]) -> Vec<Vec2> {
        debug_assert_eq!(rhs.len(), self.n);
        let mut b = DVector::zeros(2 * rhs.len());
        for (i, v) in rhs.iter().enumerate() {
            b[2 * i] = v.x;
            b[2 * i + 1] = v.y;
        }
        let x = self.chol.solve(&b);
        (0..rhs.len()).map(|i| Vec2::new(x[2 * i], x[2 * i + 1])).collect()
    }
}

/// Conjugate gradients with diagonal preconditioning; adequate for the
/// well-conditioned mass solves.
pub fn pcg_solve(a: &BlockCsr, rhs: &[Vec2], rel_tol: f64, max_iter: usize) -> Vec<Vec2> {
    let n = rhs.len();
    let mut x = bv_zeros(n);
    let mut r = rhs.to_vec();
    let rhs_norm = bv_norm(rhs);
    if rhs_norm == 0.0 {
        return x;
    }
    let diag_inv: Vec<Mat2> = (0..n)
        .map(|i| a.diag_block(i).try_inverse().unwrap_or_else(Mat2::identity))
        .collect();
    let apply_prec = |r: &[Vec2]| -> Vec<Vec2> { r.iter().enumerate().map(|(i, v)| diag_inv[i] * v).collect() };
    let mut z = apply_prec(&r);
    let mut p = z.clone();
    let mut rz = bv_dot(&r, &z);
    for _ in 0..max_iter {
        let ap = a.mul_vec(&p);
        let pap = bv_dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        bv_axpy(&mut x, alpha, &p);
        bv_axpy(&mut r, -alpha, &ap);
        if bv_norm(&r) <= rel_tol * rhs_norm {
            break;
        }
        z = apply_prec(&r);
        let rz_new = bv_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}
