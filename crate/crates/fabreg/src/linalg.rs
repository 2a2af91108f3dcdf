//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the hyperplane orthogonal to `u` in R^p, as the
/// trailing p−1 columns of the Householder reflection mapping `u` onto the
/// first axis. Requires `u` nonzero; returns a p×(p−1) matrix.
pub(crate) fn householder_complement(u: &DVector<f64>) -> DMatrix<f64> {
    let p = u.len();
    assert!(p >= 1);
    let norm = u.norm();
    assert!(norm > 0.0, "householder_complement requires a nonzero vector");
    if p == 1 {
        return DMatrix::zeros(1, 0);
    }
    let mut v = u.clone();
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let denom = v.dot(&v);
    // H = I − 2 v vᵀ / (vᵀ v); columns 2..p of H are orthonormal and ⟂ u.
    let mut out = DMatrix::zeros(p, p - 1);
    for k in 1..p {
        let scale = 2.0 * v[k] / denom;
        for i in 0..p {
            let e = if i == k { 1.0 } else { 0.0 };
            out[(i, k - 1)] = e - scale * v[i];
        }
    }
    out
}

/// Orthonormal basis of the orthogonal complement of range(X) in R^n for a
/// full-column-rank n×k matrix X, via a full Householder QR. Returns an
/// n×(n−k) matrix with orthonormal columns G satisfying XᵀG = 0.
pub(crate) fn orthonormal_complement(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = (x.nrows(), x.ncols());
    assert!(n > k, "complement requires more rows than columns");
    let mut a = x.clone();
    // Householder vectors of the QR sweep, one per column.
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for col in 0..k {
        let tail = n - col;
        let mut v = DVector::zeros(tail);
        for i in 0..tail {
            v[i] = a[(col + i, col)];
        }
        let norm = v.norm();
        if norm == 0.0 {
            reflectors.push(DVector::zeros(tail));
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * norm;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
        }
        // Apply H = I − 2vvᵀ to the remaining block of `a`.
        for j in col..k {
            let mut dot = 0.0;
            for i in 0..tail {
                dot += v[i] * a[(col + i, j)];
            }
            let dot = 2.0 * dot;
            for i in 0..tail {
                a[(col + i, j)] -= dot * v[i];
            }
        }
        reflectors.push(v);
    }
    // Q = H_1 H_2 ··· H_k; the trailing n−k columns of Q span the complement.
    let mut g = DMatrix::zeros(n, n - k);
    for j in 0..(n - k) {
        g[(k + j, j)] = 1.0;
    }
    for col in (0..k).rev() {
        let v = &reflectors[col];
        let tail = n - col;
        for j in 0..(n - k) {
            let mut dot = 0.0;
            for i in 0..tail {
                dot += v[i] * g[(col + i, j)];
            }
            let dot = 2.0 * dot;
            for i in 0..tail {
                g[(col + i, j)] -= dot * v[i];
            }
        }
    }
    g
}

/// Inverse of an upper-triangular matrix by back substitution.
pub(crate) fn upper_triangular_inverse(r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = r.nrows();
    assert_eq!(p, r.ncols());
    let mut inv = DMatrix::zeros(p, p);
    for j in 0..p {
        if r[(j, j)] == 0.0 {
            return None;
        }
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += r[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    Some(inv)
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvector columns permuted to match).
pub(crate) fn symmetric_eigen_desc(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = m.symmetric_eigen();
    let k = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let values = DVector::from_fn(k, |i, _| se.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(se.eigenvectors.nrows(), k);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest absolute entry of `m − I`.
pub(crate) fn max_dev_from_identity(m: &DMatrix<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((m[(i, j)] - target).abs());
        }
    }
    dev
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn householder_complement_is_orthonormal_and_orthogonal_to_u() {
        let u = DVector::from_vec(vec![0.3, -1.2, 0.05, 2.0]);
        let v = householder_complement(&u);
        assert_eq!(v.ncols(), 3);
        let gram = v.transpose() * &v;
        assert!(max_dev_from_identity(&gram) < 1e-14);
        let proj = v.transpose() * &u;
        assert!(proj.amax() < 1e-14 * u.norm());
    }

    #[test]
    fn orthonormal_complement_spans_null_space() {
        let x = DMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) as f64).cos() + i as f64 * 0.1);
        let g = orthonormal_complement(&x);
        assert_eq!(g.shape(), (8, 5));
        let gram = g.transpose() * &g;
        assert!(max_dev_from_identity(&gram) < 1e-13);
        let cross = x.transpose() * &g;
        assert!(cross.amax() < 1e-12);
    }

    #[test]
    fn triangular_inverse_matches_direct_solve() {
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -0.5, 0.0, 3.0, 0.7, 0.0, 0.0, 1.5]);
        let inv = upper_triangular_inverse(&r).unwrap();
        let prod = &r * &inv;
        assert!(max_dev_from_identity(&prod) < 1e-14);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 4.0]);
        let (vals, vecs) = symmetric_eigen_desc(m.clone());
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((recon - m).amax() < 1e-12);
    }
}
