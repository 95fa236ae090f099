//! Raw row-major matrix kernels shared by the graph ops and plain tensor
//! math. All three accumulate (`out +=`), which is what the reverse pass
//! needs; forward callers pass a zeroed buffer.

use super::Scalar;

/// `out += a[m,k] . b[k,n]`
pub(crate) fn mat_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// `out += a[m,n] . b[k,n]^T` (dot products of rows), giving `[m, k]`.
pub(crate) fn mat_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                acc = acc + arow[j] * brow[j];
            }
            out[i * k + p] = out[i * k + p] + acc;
        }
    }
}

/// `out += a[m,k]^T . b[m,n]`, giving `[k, n]`.
pub(crate) fn mat_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}
