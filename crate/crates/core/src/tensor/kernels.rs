//! Dense kernels shared by the forward and backward passes. All loops use a
//! fixed summation order so results are bit-reproducible.

use super::Scalar;

/// `out += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        let ai = &a[i * k..(i + 1) * k];
        for (l, &av) in ai.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let bl = &b[l * m..(l + 1) * m];
            for (o, &bv) in row.iter_mut().zip(bl) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_nt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    n: usize,
    k: usize,
    m: usize,
) {
    for i in 0..n {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += a[k×n]ᵀ · b[k×m]`
pub(crate) fn matmul_tn_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    k: usize,
    n: usize,
    m: usize,
) {
    for l in 0..k {
        let al = &a[l * n..(l + 1) * n];
        let bl = &b[l * m..(l + 1) * m];
        for (i, &av) in al.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in row.iter_mut().zip(bl) {
                *o += av * bv;
            }
        }
    }
}

/// Eight-lane dot product; the lane split keeps the order fixed while
/// letting the compiler vectorize.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ac = &a[c * LANES..(c + 1) * LANES];
        let bc = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (s01 + s23) + tail
}
