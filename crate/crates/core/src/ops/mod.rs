//! Dense primitives with explicit backward passes.
//!
//! Every forward function has a matching `*_backward` that takes the upstream
//! gradient and returns (or accumulates) the gradients of its inputs. There is
//! no tape: composites in the higher-level modules call these in reverse order.

mod conv;
mod elementwise;
mod linear;
mod pool;

pub use conv::{conv2d, conv2d_backward, conv2d_output_size, ConvGrads};
pub use elementwise::{
    add, channel_l2, channel_l2_backward, channel_mean, channel_mean_backward, mul, mul_backward,
    relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, sub,
};
pub use linear::{fc, fc_backward, FcGrads};
pub use pool::{
    dilated_maxpool_time, dilated_maxpool_time_backward, global_avg_pool, global_avg_pool_backward,
    maxpool2d, maxpool2d_backward, pooled_length, MaxPool2d, MaxPoolTime,
};

use crate::scalar::Scalar;

/// `C ← A·B + beta·C` for row/column-strided matrices stored in slices.
///
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`; each comes with its
/// `(row_stride, col_stride)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    beta: T,
    c: &mut [T],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, s: (usize, usize)| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(last(m, n, sc) < c.len(), "gemm: C view out of bounds");
    if k > 0 {
        assert!(last(m, k, sa) < a.len(), "gemm: A view out of bounds");
        assert!(last(k, n, sb) < b.len(), "gemm: B view out of bounds");
    }
    // SAFETY: the asserts above keep every addressed element inside its slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy<T: Scalar>(dst: &mut [T], alpha: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
