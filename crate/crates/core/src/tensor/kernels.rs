use super::Real;

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0 as Real; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: Real, x: &[Real], y: &mut [Real]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const MR: usize = 4;
const NR: usize = 4;

/// `out += a (m×k) · b (k×n)`. Every output element is accumulated as
/// `out + a[i][0]·b[0][j] + a[i][1]·b[1][j] + …` in that order, whatever the
/// blocking, so results do not depend on the matrix shape.
pub fn matmul_into(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let mut i0 = 0;
    while i0 + MR <= m {
        let mut j0 = 0;
        while j0 + NR <= n {
            let mut acc = [[0.0 as Real; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
            }
            for p in 0..k {
                let bv: &[Real; NR] = b[p * n + j0..p * n + j0 + NR].try_into().expect("NR columns");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * k + p];
                    for c in 0..NR {
                        row[c] += av * bv[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(row);
            }
            j0 += NR;
        }
        edge(a, b, out, i0..i0 + MR, j0..n, k, n);
        i0 += MR;
    }
    edge(a, b, out, i0..m, 0..n, k, n);
}

fn edge(
    a: &[Real],
    b: &[Real],
    out: &mut [Real],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
    n: usize,
) {
    for i in rows {
        for j in cols.clone() {
            let mut s = out[i * n + j];
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

fn transpose(x: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// `out += a (m×k) · bᵀ` where `b` is stored as n×k.
pub fn matmul_nt_into(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    matmul_into(a, &transpose(b, n, k), out, m, k, n);
}

/// `out += aᵀ · c` where `a` is m×k and `c` is m×n; `out` is k×n.
pub(crate) fn matmul_tn_into(a: &[Real], c: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    matmul_into(&transpose(a, m, k), c, out, k, m, n);
}
