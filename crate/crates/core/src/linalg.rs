//! Small dense linear-algebra helpers shared by the basis and fitting code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue threshold used for numerical rank decisions.
pub(crate) const RANK_TOL: f64 = 1e-9;

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigen-decomposition with eigenvalues sorted ascending (vectors permuted to match).
pub(crate) fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Numerical rank of a symmetric positive semidefinite matrix.
pub(crate) fn psd_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let (vals, _) = sym_eigen_sorted(m);
    let max = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > RANK_TOL * max).count()
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Row-wise Kronecker (tensor) product: row i is `kron(a.row(i), b.row(i))`.
pub(crate) fn row_kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (pa, pb) = (a.ncols(), b.ncols());
    DMatrix::from_fn(n, pa * pb, |i, c| a[(i, c / pb)] * b[(i, c % pb)])
}

pub(crate) fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    DMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// Householder reflector `H` (p×p, symmetric orthogonal) with `H c ∝ e_0`.
pub(crate) fn householder_for(c: &DVector<f64>) -> DMatrix<f64> {
    let p = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let mut h = DMatrix::identity(p, p);
    if vv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vv);
    }
    h
}

pub(crate) fn column_sums(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum()))
}

/// Moore–Penrose style inverse of a symmetric PSD matrix restricted to its
/// `rank` leading eigen-directions.
pub(crate) fn truncated_pinv(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let (vals, vecs) = sym_eigen_sorted(m);
    let mut out = DMatrix::zeros(n, n);
    for k in (n - rank.min(n))..n {
        let v = vals[k];
        if v > 0.0 {
            let u = vecs.column(k);
            out += (u * u.transpose()) / v;
        }
    }
    out
}
