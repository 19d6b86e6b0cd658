use alloc::format;

use super::gemm;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a zero-padded convolution along one axis.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride >= 1 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

struct Geometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if input.rank() != 3 || weight.rank() != 4 || input.shape()[0] != weight.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let [c_out, c_in, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    if kh != kw || kh % 2 == 0 {
        return Err(invalid("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(invalid("conv2d", "stride must be >= 1"));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let oh = conv2d_output_size(h, kh, stride, padding);
    let ow = conv2d_output_size(w, kh, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Geometry {
            c_in,
            c_out,
            h,
            w,
            k: kh,
            oh,
            ow,
        }),
        _ => Err(invalid(
            "conv2d",
            format!("kernel {kh} does not fit input {h}x{w} with padding {padding}"),
        )),
    }
}

impl Geometry {
    /// Output rows per im2col block, keeping the unfolded block near 128 KiB of `f32`.
    fn block_rows(&self) -> usize {
        let per_row = self.c_in * self.k * self.k * self.ow;
        (32 * 1024 / per_row.max(1)).clamp(1, self.oh.max(1))
    }
}

/// Range of output columns `ox` whose tap `kx` lands inside the input row, for stride 1.
#[inline]
fn valid_cols(kx: usize, padding: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kx);
    let hi = ow.min((w + padding).saturating_sub(kx));
    (lo, hi.max(lo))
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is `[C_in, H, W]`, `weight` is `[C_out, C_in, k, k]`, `bias` is
/// `[C_out]` (or `None` for a bias-free convolution).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: weight.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    let plane = g.oh * g.ow;
    let mut out = match bias {
        Some(b) => Tensor::from_fn(&[g.c_out, g.oh, g.ow], |i| b.data()[i / plane]),
        None => Tensor::zeros(&[g.c_out, g.oh, g.ow]),
    };
    let kk = g.c_in * g.k * g.k;
    let rows = g.block_rows();
    let mut cols = alloc::vec![T::ZERO; kk * rows * g.ow];
    let od = out.data_mut();
    for oy0 in (0..g.oh).step_by(rows) {
        let oy1 = (oy0 + rows).min(g.oh);
        let nb = (oy1 - oy0) * g.ow;
        im2col(input.data(), &g, stride, padding, oy0, oy1, &mut cols);
        gemm(
            g.c_out,
            kk,
            nb,
            weight.data(),
            (kk, 1),
            &cols,
            (nb, 1),
            T::ONE,
            &mut od[oy0 * g.ow..],
            (plane, 1),
        );
    }
    Ok(out)
}

/// Unfolds output rows `oy0..oy1` into `cols`, laid out `[c_in·k·k, (oy1 − oy0)·ow]`
/// with rows in weight order `(c, ky, kx)`. Out-of-image taps are zero.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], g: &Geometry, stride: usize, padding: usize, oy0: usize, oy1: usize, cols: &mut [T]) {
    let nb = (oy1 - oy0) * g.ow;
    let mut r = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst_row = &mut cols[r * nb..(r + 1) * nb];
                for (bi, oy) in (oy0..oy1).enumerate() {
                    let dst = &mut dst_row[bi * g.ow..(bi + 1) * g.ow];
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kx, padding, g.w, g.ow);
                        dst[..lo].fill(T::ZERO);
                        dst[hi..].fill(T::ZERO);
                        if hi > lo {
                            let s0 = lo + kx - padding;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            *d = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { T::ZERO };
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `dx`, accumulating.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, stride: usize, padding: usize, oy0: usize, oy1: usize, dx: &mut [T]) {
    let nb = (oy1 - oy0) * g.ow;
    let mut r = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src_row = &cols[r * nb..(r + 1) * nb];
                for (bi, oy) in (oy0..oy1).enumerate() {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &src_row[bi * g.ow..(bi + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kx, padding, g.w, g.ow);
                        if hi > lo {
                            let d0 = lo + kx - padding;
                            for (d, &v) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Gradients of a convolution with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass of [`conv2d`]. The input gradient is only computed when
/// `need_input` is set, since the first layer of a network never needs it.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: alloc::vec![g.c_out, g.oh, g.ow],
            right: grad_out.shape().to_vec(),
        });
    }
    let plane = g.oh * g.ow;
    let kk = g.c_in * g.k * g.k;
    let mut d_w = Tensor::zeros(weight.shape());
    let mut d_in = need_input.then(|| Tensor::zeros(input.shape()));
    let d_b = Tensor::from_fn(&[g.c_out], |o| grad_out.data()[o * plane..(o + 1) * plane].iter().copied().sum());
    let rows = g.block_rows();
    let mut cols = alloc::vec![T::ZERO; kk * rows * g.ow];
    let mut d_cols = if need_input { alloc::vec![T::ZERO; kk * rows * g.ow] } else { alloc::vec::Vec::new() };
    let dy = grad_out.data();
    for oy0 in (0..g.oh).step_by(rows) {
        let oy1 = (oy0 + rows).min(g.oh);
        let nb = (oy1 - oy0) * g.ow;
        let dy_blk = &dy[oy0 * g.ow..];
        im2col(input.data(), &g, stride, padding, oy0, oy1, &mut cols);
        // dW += dY_blk · colsᵀ
        gemm(g.c_out, nb, kk, dy_blk, (plane, 1), &cols, (1, nb), T::ONE, d_w.data_mut(), (kk, 1));
        if let Some(di) = d_in.as_mut() {
            // dcols = Wᵀ · dY_blk
            gemm(kk, g.c_out, nb, weight.data(), (1, kk), dy_blk, (plane, 1), T::ZERO, &mut d_cols, (nb, 1));
            col2im(&d_cols, &g, stride, padding, oy0, oy1, di.data_mut());
        }
    }
    Ok(ConvGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 5], |i| i as f64 * 0.5 - 2.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f32>::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.at(&[0, 1, 1]), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(&[0, r, c]), 4.0);
        }
        assert_eq!(y.at(&[0, 0, 1]), 6.0);
    }

    #[test]
    fn same_padding_preserves_size() {
        let x = Tensor::<f32>::zeros(&[3, 224, 224]);
        let w = Tensor::zeros(&[8, 3, 7, 7]);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[8])), 1, 3).unwrap();
        assert_eq!(y.shape(), &[8, 224, 224]);
    }

    #[test]
    fn output_size_formula() {
        assert_eq!(conv2d_output_size(10, 3, 2, 1), Some(5));
        assert_eq!(conv2d_output_size(2, 5, 1, 0), None);
        let x = Tensor::<f64>::from_fn(&[2, 7, 6], |i| (i % 5) as f64);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| (i % 4) as f64 - 1.5);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 4, 3]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 5, 5]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("[2, 5, 5]") && msg.contains("[4, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn strided_matches_naive() {
        let x = Tensor::<f64>::from_fn(&[2, 6, 7], |i| ((i * 7919) % 13) as f64 - 6.0);
        let w = Tensor::from_fn(&[2, 2, 3, 3], |i| ((i * 31) % 7) as f64 - 3.0);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        for o in 0..2 {
            for oy in 0..y.shape()[1] {
                for ox in 0..y.shape()[2] {
                    let mut s = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 6 && ix >= 0 && ix < 7 {
                                    s += w.at(&[o, c, ky, kx]) * x.at(&[c, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    assert_eq!(y.at(&[o, oy, ox]), s);
                }
            }
        }
    }
}
