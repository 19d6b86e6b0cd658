use alloc::format;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn zip_with<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    a.check_same(op, b)?;
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, &y)| *x = f(*x, y));
    Ok(out)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Gradients of `a ⊙ b`: `(g ⊙ b, g ⊙ a)`.
pub fn mul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((mul(grad, b)?, mul(grad, a)?))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Gradient mask uses the pre-activation input; zero at the kink.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("relu_backward", x, grad, |v, g| if v > T::ZERO { g } else { T::ZERO })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

/// Takes the sigmoid *output*.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sigmoid_backward", y, grad, |s, g| g * s * (T::ONE - s))
}

/// Numerically stable softmax of a vector (max subtracted first).
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let m = x.data().iter().copied().fold(x.data()[0], T::max);
    let mut out = x.map(|v| (v - m).exp());
    let z = out.sum();
    out.scale(T::ONE / z);
    out
}

/// Takes the softmax *output*: `dx = y ⊙ (g − ⟨g, y⟩)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.check_same("softmax_backward", grad)?;
    let inner: T = y.data().iter().zip(grad.data()).map(|(&a, &b)| a * b).sum();
    zip_with("softmax_backward", y, grad, |s, g| s * (g - inner))
}

fn check_chw<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() != 3 {
        return Err(invalid(op, format!("expected [C, H, W], got {:?}", x.shape())));
    }
    Ok((x.shape()[0], x.shape()[1] * x.shape()[2]))
}

/// Per-pixel mean over channels: `[C, H, W] -> [1, H, W]`.
pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, plane) = check_chw("channel_mean", x)?;
    let mut out = Tensor::zeros(&[1, x.shape()[1], x.shape()[2]]);
    for ch in 0..c {
        super::axpy(out.data_mut(), T::ONE, &x.data()[ch * plane..(ch + 1) * plane]);
    }
    out.scale(T::ONE / T::from_usize(c));
    Ok(out)
}

pub fn channel_mean_backward<T: Scalar>(input_shape: &[usize], grad: &Tensor<T>) -> Result<Tensor<T>> {
    let c = input_shape[0];
    let plane = grad.len();
    let inv = T::ONE / T::from_usize(c);
    Ok(Tensor::from_fn(input_shape, |i| grad.data()[i % plane] * inv))
}

/// Per-pixel Euclidean norm over channels, `sqrt(Σ_c x_c² + eps)`: `[C, H, W] -> [1, H, W]`.
///
/// The `eps` inside the root keeps the value and its gradient finite where all
/// channels vanish.
pub fn channel_l2<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (c, plane) = check_chw("channel_l2", x)?;
    let mut acc = Tensor::full(&[1, x.shape()[1], x.shape()[2]], eps);
    let xd = x.data();
    for ch in 0..c {
        for (a, &v) in acc.data_mut().iter_mut().zip(&xd[ch * plane..(ch + 1) * plane]) {
            *a += v * v;
        }
    }
    Ok(acc.map(T::sqrt))
}

/// Takes the input and the norm output: `dx_c = x_c / y · g`.
pub fn channel_l2_backward<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, plane) = check_chw("channel_l2_backward", x)?;
    y.check_same("channel_l2_backward", grad)?;
    let scale: alloc::vec::Vec<T> = y.data().iter().zip(grad.data()).map(|(&n, &g)| g / n).collect();
    let mut out = x.clone();
    for ch in 0..c {
        for (v, &s) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    Ok(out)
}
