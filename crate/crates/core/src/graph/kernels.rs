//! Dense kernels. Summation order is fixed so results are bit-reproducible.

const LANES: usize = 8;

/// Dot product with eight independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let (xa, xb) = (
            &a[c * LANES..(c + 1) * LANES],
            &b[c * LANES..(c + 1) * LANES],
        );
        for l in 0..LANES {
            acc[l] = xa[l].mul_add(xb[l], acc[l]);
        }
    }
    let mut tail = 0.0;
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (s01 + s23) + tail
}

/// `out = M V` where `V` holds `k` vectors of length `cols` back to back and
/// `out` receives `k` results of length `rows` back to back.
pub(crate) fn matmat(m: &[f64], rows: usize, cols: usize, v: &[f64], k: usize, out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols * k);
    debug_assert_eq!(out.len(), rows * k);
    // SAFETY: the strides describe the slices exactly, as checked above.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            cols,
            k,
            1.0,
            m.as_ptr(),
            cols as isize,
            1,
            v.as_ptr(),
            1,
            cols as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            rows as isize,
        );
    }
}

/// `adj_m += A V^T`, with the `k` adjoints `A` (length `rows`) and vectors
/// `V` (length `cols`) each stored back to back.
pub(crate) fn outer_acc_multi(
    a: &[f64],
    v: &[f64],
    k: usize,
    rows: usize,
    cols: usize,
    adj_m: &mut [f64],
) {
    debug_assert_eq!(a.len(), rows * k);
    debug_assert_eq!(v.len(), cols * k);
    debug_assert_eq!(adj_m.len(), rows * cols);
    let vr: Vec<&[f64]> = v.chunks_exact(cols).collect();
    for (r, row) in adj_m.chunks_exact_mut(cols).enumerate() {
        let mut j = 0;
        while j + 4 <= k {
            let (a0, a1, a2, a3) = (
                a[j * rows + r],
                a[(j + 1) * rows + r],
                a[(j + 2) * rows + r],
                a[(j + 3) * rows + r],
            );
            let (v0, v1, v2, v3) = (vr[j], vr[j + 1], vr[j + 2], vr[j + 3]);
            for c in 0..cols {
                row[c] += a0 * v0[c] + a1 * v1[c] + a2 * v2[c] + a3 * v3[c];
            }
            j += 4;
        }
        for j in j..k {
            axpy(a[j * rows + r], vr[j], row);
        }
    }
}

/// `out = M^T A` for `k` adjoints stored back to back; `out` receives `k`
/// vectors of length `cols`.
pub(crate) fn matmat_t(m: &[f64], rows: usize, cols: usize, a: &[f64], k: usize, out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(a.len(), rows * k);
    debug_assert_eq!(out.len(), cols * k);
    // SAFETY: the strides describe the slices exactly, as checked above.
    unsafe {
        matrixmultiply::dgemm(
            cols,
            rows,
            k,
            1.0,
            m.as_ptr(),
            1,
            cols as isize,
            a.as_ptr(),
            1,
            rows as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            cols as isize,
        );
    }
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Whether [`matvec`] takes its sparse path for `v`.
pub(crate) fn is_sparse(v: &[f64]) -> bool {
    v.iter().filter(|&&x| x != 0.0).count() * 4 <= v.len()
}

/// Indices of nonzero entries when `v` is sparse enough to be worth it.
fn sparse_support(v: &[f64]) -> Option<Vec<usize>> {
    let nnz = v.iter().filter(|&&x| x != 0.0).count();
    if nnz * 4 <= v.len() {
        Some(
            v.iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, _)| i)
                .collect(),
        )
    } else {
        None
    }
}

/// `out = M v` for row-major `M` (`rows x cols`).
pub(crate) fn matvec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    if let Some(support) = sparse_support(v) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &c in &support {
            let vc = v[c];
            for (r, o) in out.iter_mut().enumerate() {
                *o += m[r * cols + c] * vc;
            }
        }
    } else {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&m[r * cols..(r + 1) * cols], v);
        }
    }
}

/// `adj_m += adj_y v^T`.
pub(crate) fn outer_acc(adj_y: &[f64], v: &[f64], cols: usize, adj_m: &mut [f64]) {
    if let Some(support) = sparse_support(v) {
        for (r, &a) in adj_y.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &mut adj_m[r * cols..(r + 1) * cols];
            for &c in &support {
                row[c] += a * v[c];
            }
        }
    } else {
        for (r, &a) in adj_y.iter().enumerate() {
            if a != 0.0 {
                axpy(a, v, &mut adj_m[r * cols..(r + 1) * cols]);
            }
        }
    }
}

/// `adj_v += M^T adj_y`.
pub(crate) fn matvec_t_acc(m: &[f64], cols: usize, adj_y: &[f64], adj_v: &mut [f64]) {
    for (r, &a) in adj_y.iter().enumerate() {
        if a != 0.0 {
            axpy(a, &m[r * cols..(r + 1) * cols], adj_v);
        }
    }
}

/// Pairwise (tree) summation; the reduction order depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().fold(0.0, |a, &b| a + b),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_matvec_agree() {
        let (rows, cols) = (3, 9);
        let m: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut v = vec![0.0; cols];
        v[4] = 1.5;
        let mut sparse = vec![0.0; rows];
        matvec(&m, rows, cols, &v, &mut sparse);
        for r in 0..rows {
            assert_eq!(sparse[r], m[r * cols + 4] * 1.5);
        }
        let dense: Vec<f64> = (0..cols).map(|i| i as f64 + 1.0).collect();
        let mut out = vec![0.0; rows];
        matvec(&m, rows, cols, &dense, &mut out);
        for r in 0..rows {
            let naive: f64 = (0..cols).map(|c| m[r * cols + c] * dense[c]).sum();
            assert!((out[r] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
