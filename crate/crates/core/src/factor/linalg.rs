use nalgebra::{DMatrix, DVector};

/// Two-way within transform: subtract row and column means, add back the grand mean.
pub fn within(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = m.shape();
    let row: Vec<f64> = (0..n).map(|i| m.row(i).sum() / t as f64).collect();
    let col: Vec<f64> = (0..t).map(|j| m.column(j).sum() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, t, |i, j| m[(i, j)] - row[i] - col[j] + grand)
}

/// Unit and time effects of `m` under the convention that unit effects sum
/// to zero and time effects carry the grand mean.
pub fn twoway_effects(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, t) = m.shape();
    let row: Vec<f64> = (0..n).map(|i| m.row(i).sum() / t as f64).collect();
    let col: Vec<f64> = (0..t).map(|j| m.column(j).sum() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    (row.iter().map(|r| r - grand).collect(), col)
}

/// Frobenius inner product.
pub fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Leading `r` principal components of `e` (N x T), normalized so that
/// `F'F / T = I` and `Lambda'Lambda` is diagonal. Each factor column is signed
/// so its largest-magnitude entry is positive.
///
/// Uses an SVD of `e`, or the eigendecomposition of the T x T Gram matrix
/// when T < N.
pub fn leading_factors(e: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, t) = e.shape();
    if r == 0 {
        return (DMatrix::zeros(t, 0), DMatrix::zeros(n, 0));
    }
    let tf = t as f64;
    let mut f = if t < n {
        let gram = e.transpose() * e;
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        DMatrix::from_fn(t, r, |i, k| eig.eigenvectors[(i, order[k])] * tf.sqrt())
    } else {
        let svd = e.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        DMatrix::from_fn(t, r, |i, k| v_t[(order[k], i)] * tf.sqrt())
    };
    for k in 0..r {
        let col = f.column(k);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            f.column_mut(k).neg_mut();
        }
    }
    let lambda = e * &f / tf;
    (f, lambda)
}

/// Size of the change between the column spaces of two T x r factor
/// matrices normalized to `F'F / T = I` (Frobenius norm of the sines of the
/// principal angles).
pub fn subspace_change(old: &DMatrix<f64>, new: &DMatrix<f64>) -> f64 {
    if old.ncols() == 0 {
        return 0.0;
    }
    let t = old.nrows() as f64;
    let qo = old / t.sqrt();
    let qn = new / t.sqrt();
    let proj = &qo * (qo.transpose() * &qn);
    (qn - proj).norm()
}

/// Solve the symmetric positive definite system `a x = b`; `None` when `a`
/// is numerically singular.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.diagonal().iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let eig_min = a.clone().symmetric_eigenvalues().min();
    if eig_min <= 1e-12 * scale {
        return None;
    }
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Least squares coefficients of each column of `y` on the columns of `z`.
/// Returns `k x m` (k = columns of z, m = columns of y), or `None` if `z'z` is singular.
pub fn least_squares(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ztz = z.transpose() * z;
    let scale = ztz.diagonal().iter().copied().fold(0.0, f64::max);
    if z.ncols() == 0 {
        return Some(DMatrix::zeros(0, y.ncols()));
    }
    if !(scale > 0.0) || ztz.clone().symmetric_eigenvalues().min() <= 1e-12 * scale {
        return None;
    }
    let chol = ztz.cholesky()?;
    Some(chol.solve(&(z.transpose() * y)))
}
