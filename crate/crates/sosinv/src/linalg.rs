//! Dense linear-algebra kernels used by the interior-point solver.
//!
//! All matrices are row-major `&[f64]` slices with an explicit side length;
//! symmetric matrices are stored full (both triangles) so congruence
//! transforms can run straight through the GEMM kernel.  The blocked Cholesky
//! routes its trailing updates through `matrixmultiply`, which is what makes
//! Schur-complement factorizations of a few thousand rows practical on one
//! core.

use nalgebra::DMatrix;

/// `C = alpha * op(A) * op(B) + beta * C` with row-major storage.
///
/// `a` is `m x k` after the optional transpose, `b` is `k x n`, `c` is `m x n`
/// with row stride `ldc`.  `lda`/`ldb` are the row strides of the *stored*
/// (untransposed) matrices.
#[allow(clippy::too_many_arguments)]
pub fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    ta: bool,
    b: &[f64],
    ldb: usize,
    tb: bool,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        dgemm_raw(m, k, n, alpha, a.as_ptr(), lda, ta, b.as_ptr(), ldb, tb, beta, c.as_mut_ptr(), ldc);
    }
}

/// In-place lower Cholesky factorization of a symmetric positive definite
/// matrix stored full row-major; on success the lower triangle holds `L` with
/// `A = L * L^T` (the strict upper triangle is left untouched).
///
/// Returns the failing pivot index if a non-positive pivot is met.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), usize> {
    const NB: usize = 96;
    debug_assert_eq!(a.len(), n * n);
    let base = a.as_mut_ptr();
    let mut j = 0;
    while j < n {
        let jb = NB.min(n - j);
        // Left-looking updates against the already-factored panel A[:, 0..j].
        // Raw pointers into one buffer: the read regions (columns 0..j) and the
        // written regions (columns j..j+jb) touch disjoint elements.
        if j > 0 {
            unsafe {
                // diagonal block: A[j..j+jb, j..j+jb] -= P * P^T, P = A[j..j+jb, 0..j]
                let p = base.add(j * n) as *const f64;
                dgemm_raw(jb, j, jb, -1.0, p, n, false, p, n, true, 1.0, base.add(j * n + j), n);
                // subdiagonal block: A[j+jb.., j..j+jb] -= Q * P^T
                if j + jb < n {
                    let q = base.add((j + jb) * n) as *const f64;
                    dgemm_raw(n - j - jb, j, jb, -1.0, q, n, false, p, n, true, 1.0, base.add((j + jb) * n + j), n);
                }
            }
        }
        unblocked_cholesky(a, n, j, jb).map_err(|p| j + p)?;
        if j + jb < n {
            // S := S * L11^{-T} via an explicit small triangular inverse
            let mut l11_inv = vec![0.0; jb * jb];
            for r in 0..jb {
                for c in 0..=r {
                    l11_inv[r * jb + c] = a[(j + r) * n + j + c];
                }
            }
            invert_lower_in_place(&mut l11_inv, jb);
            let rows = n - j - jb;
            let mut s_copy = vec![0.0; rows * jb];
            for r in 0..rows {
                s_copy[r * jb..(r + 1) * jb]
                    .copy_from_slice(&a[(j + jb + r) * n + j..(j + jb + r) * n + j + jb]);
            }
            unsafe {
                dgemm_raw(
                    rows,
                    jb,
                    jb,
                    1.0,
                    s_copy.as_ptr(),
                    jb,
                    false,
                    l11_inv.as_ptr(),
                    jb,
                    true,
                    0.0,
                    base.add((j + jb) * n + j),
                    n,
                );
            }
        }
        j += jb;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
unsafe fn dgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    lda: usize,
    ta: bool,
    b: *const f64,
    ldb: usize,
    tb: bool,
    beta: f64,
    c: *mut f64,
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if tb { (1, ldb as isize) } else { (ldb as isize, 1) };
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, ldc as isize, 1);
}

/// Unblocked Cholesky of the `jb x jb` diagonal block starting at `(j0, j0)`.
fn unblocked_cholesky(a: &mut [f64], n: usize, j0: usize, jb: usize) -> Result<(), usize> {
    for r in 0..jb {
        for c in 0..=r {
            let mut s = a[(j0 + r) * n + j0 + c];
            for k in 0..c {
                s -= a[(j0 + r) * n + j0 + k] * a[(j0 + c) * n + j0 + k];
            }
            if r == c {
                if s <= 0.0 || !s.is_finite() {
                    return Err(r);
                }
                a[(j0 + r) * n + j0 + r] = s.sqrt();
            } else {
                a[(j0 + r) * n + j0 + c] = s / a[(j0 + c) * n + j0 + c];
            }
        }
    }
    Ok(())
}

/// Invert a lower-triangular matrix in place (row-major, full storage with
/// garbage allowed above the diagonal; the strict upper part is zeroed).
pub fn invert_lower_in_place(l: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            l[i * n + j] = 0.0;
        }
    }
    for i in 0..n {
        let d = 1.0 / l[i * n + i];
        l[i * n + i] = d;
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * l[k * n + j];
            }
            l[i * n + j] = -d * s;
        }
    }
}

/// Solve `L x = b` in place (forward substitution), `L` lower triangular.
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * b[j];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `L^T x = b` in place (backward substitution), `L` lower triangular.
pub fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[j * n + i] * b[j];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `(L L^T) x = b` in place given the Cholesky factor.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_solve(l, n, b);
    backward_solve(l, n, b);
}

/// Eigendecomposition of a symmetric matrix: values plus row-major matrix of
/// eigenvectors (column `j` of `vectors` is the eigenvector for `values[j]`).
pub struct EigH {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

pub fn sym_eig(a: &[f64], n: usize) -> EigH {
    debug_assert_eq!(a.len(), n * n);
    let m = DMatrix::from_row_slice(n, n, a);
    let se = m.symmetric_eigen();
    let mut vectors = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            vectors[i * n + j] = se.eigenvectors[(i, j)];
        }
    }
    EigH { values: se.eigenvalues.as_slice().to_vec(), vectors }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(n, n, a);
    m.symmetric_eigenvalues().iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(n, n, a);
    m.symmetric_eigenvalues().iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
}
