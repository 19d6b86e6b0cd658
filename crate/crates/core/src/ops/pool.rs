use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of output rows of a dilated pooling window over `n` rows, or `None`
/// when the window does not fit.
pub fn pooled_length(n: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return None;
    }
    let span = (kernel - 1) * dilation + 1;
    (span <= n).then(|| (n - span) / stride + 1)
}

/// Result of [`dilated_maxpool_time`]: pooled rows plus the source time index
/// of every output element, used to route gradients back.
#[derive(Debug, Clone)]
pub struct MaxPoolTime<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
    pub source_len: usize,
}

/// Dilated max pooling along the time axis of a `[N, d]` sequence.
///
/// Output row `j` is the per-feature maximum over rows
/// `j*stride + i*dilation` for `0 <= i < kernel`. Ties keep the earliest row.
pub fn dilated_maxpool_time<T: Scalar>(
    seq: &Tensor<T>,
    kernel: usize,
    stride: usize,
    dilation: usize,
) -> Result<MaxPoolTime<T>> {
    if seq.rank() != 2 {
        return Err(invalid("dilated_maxpool_time", format!("expected [N, d], got {:?}", seq.shape())));
    }
    let (n, d) = (seq.shape()[0], seq.shape()[1]);
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(invalid("dilated_maxpool_time", "kernel, stride and dilation must be >= 1"));
    }
    let len = pooled_length(n, kernel, stride, dilation).ok_or(Error::WindowTooLarge {
        window: (kernel - 1) * dilation + 1,
        len: n,
    })?;
    let x = seq.data();
    let mut out = Vec::with_capacity(len * d);
    let mut argmax = Vec::with_capacity(len * d);
    for j in 0..len {
        for f in 0..d {
            let mut best_t = j * stride;
            let mut best = x[best_t * d + f];
            for i in 1..kernel {
                let t = j * stride + i * dilation;
                let v = x[t * d + f];
                if v > best {
                    best = v;
                    best_t = t;
                }
            }
            out.push(best);
            argmax.push(best_t);
        }
    }
    Ok(MaxPoolTime {
        output: Tensor::new(&[len, d], out)?,
        argmax,
        source_len: n,
    })
}

/// Routes `grad_out` (`[L, d]`) to the argmax rows of the source sequence.
pub fn dilated_maxpool_time_backward<T: Scalar>(
    pooled: &MaxPoolTime<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    pooled.output.check_same("dilated_maxpool_time_backward", grad_out)?;
    let d = pooled.output.shape()[1];
    let mut grad = Tensor::zeros(&[pooled.source_len, d]);
    let gd = grad.data_mut();
    for (idx, (&t, &g)) in pooled.argmax.iter().zip(grad_out.data()).enumerate() {
        gd[t * d + idx % d] += g;
    }
    Ok(grad)
}

/// Non-overlapping 2x2 spatial max pooling of a `[C, H, W]` map (floor on odd sizes).
#[derive(Debug, Clone)]
pub struct MaxPool2d<T> {
    pub output: Tensor<T>,
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<MaxPool2d<T>> {
    if x.rank() != 3 || x.shape()[1] < 2 || x.shape()[2] < 2 {
        return Err(invalid("maxpool2d", format!("expected [C, H>=2, W>=2], got {:?}", x.shape())));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best_i = base;
                for i in [base + 1, base + w, base + w + 1] {
                    if xd[i] > xd[best_i] {
                        best_i = i;
                    }
                }
                out.push(xd[best_i]);
                argmax.push(best_i);
            }
        }
    }
    Ok(MaxPool2d {
        output: Tensor::new(&[c, oh, ow], out)?,
        argmax,
        input_shape: x.shape().to_vec(),
    })
}

pub fn maxpool2d_backward<T: Scalar>(pooled: &MaxPool2d<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    pooled.output.check_same("maxpool2d_backward", grad_out)?;
    let mut grad = Tensor::zeros(&pooled.input_shape);
    let gd = grad.data_mut();
    for (&i, &g) in pooled.argmax.iter().zip(grad_out.data()) {
        gd[i] += g;
    }
    Ok(grad)
}

/// Spatial mean of each channel: `[C, H, W] -> [C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(invalid("global_avg_pool", format!("expected [C, H, W], got {:?}", x.shape())));
    }
    let inv = T::ONE / T::from_usize(x.shape()[1] * x.shape()[2]);
    Ok(Tensor::from_fn(&[x.shape()[0]], |c| x.slab(c).iter().copied().sum::<T>() * inv))
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input_shape.len() != 3 || grad_out.shape() != [input_shape[0]] {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool_backward",
            left: input_shape.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let plane = input_shape[1] * input_shape[2];
    let inv = T::ONE / T::from_usize(plane);
    Ok(Tensor::from_fn(input_shape, |i| grad_out.data()[i / plane] * inv))
}
