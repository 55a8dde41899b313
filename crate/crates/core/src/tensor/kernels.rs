// Row-major dense kernels. Every output row depends only on the matching
// input row and the shared right operand, accumulated in a fixed order, so
// stacking extra rows never changes the bits of existing ones.

use super::Scalar;

/// `a[m,k] · b[k,n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&a_ik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if a_ik == T::zero() {
                continue;
            }
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ik * b_kj;
            }
        }
    }
    out
}

/// `a[m,k] · b[n,k]ᵀ`
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(k)) {
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            *o = acc;
        }
    }
    out
}

/// `a[m,k]ᵀ · b[m,n]`, giving `[k,n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (&a_ik, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            if a_ik == T::zero() {
                continue;
            }
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ik * b_ij;
            }
        }
    }
    out
}

pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Softmax over one row. Masked entries (`mask[j] == false`) are excluded
/// from the normalizer and come out as exactly zero.
pub(crate) fn softmax_row<T: Scalar>(row: &[T], mask: Option<&[bool]>, out: &mut [T]) -> bool {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for (j, (&v, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        if keep(j) {
            let e = (v - max).exp();
            *o = e;
            sum = sum + e;
        } else {
            *o = T::zero();
        }
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
    true
}

/// Gaussian CDF.
pub(crate) fn phi<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf())
}

/// Gaussian density.
pub(crate) fn gauss_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::of(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::of(0.5)).exp()
}

/// Splits a shape around `axis` into (outer, axis_len, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), ab);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 2), ab);
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut out = [0.0; 3];
        assert!(softmax_row(&[1.0, 5.0, 1.0], Some(&[true, false, true]), &mut out));
        assert_eq!(out, [0.5, 0.0, 0.5]);
        assert!(!softmax_row(&[1.0, 2.0], Some(&[false, false]), &mut out[..2]));
    }
}
