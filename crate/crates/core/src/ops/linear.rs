use super::{axpy, dot};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully-connected layer: `weight · x (+ bias)`, with `x: [n]`, `weight: [p, n]`.
pub fn fc<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if x.rank() != 1 || weight.rank() != 2 || weight.shape()[1] != x.len() {
        return Err(Error::ShapeMismatch {
            op: "fc",
            left: weight.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let (p, n) = (weight.shape()[0], weight.shape()[1]);
    if let Some(b) = bias {
        if b.shape() != [p] {
            return Err(Error::ShapeMismatch {
                op: "fc bias",
                left: weight.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    let w = weight.data();
    Ok(Tensor::from_fn(&[p], |r| {
        let v = dot(&w[r * n..(r + 1) * n], x.data());
        match bias {
            Some(b) => v + b.data()[r],
            None => v,
        }
    }))
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    /// Equal to the upstream gradient; meaningful only when a bias exists.
    pub bias: Tensor<T>,
}

pub fn fc_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>> {
    if x.rank() != 1 || weight.rank() != 2 || weight.shape() != [grad_out.len(), x.len()] || grad_out.rank() != 1 {
        return Err(Error::ShapeMismatch {
            op: "fc_backward",
            left: weight.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let (p, n) = (weight.shape()[0], weight.shape()[1]);
    let mut d_x = Tensor::zeros(&[n]);
    let mut d_w = Tensor::zeros(&[p, n]);
    for (r, &g) in grad_out.data().iter().enumerate() {
        axpy(d_x.data_mut(), g, &weight.data()[r * n..(r + 1) * n]);
        axpy(&mut d_w.data_mut()[r * n..(r + 1) * n], g, x.data());
    }
    Ok(FcGrads {
        input: d_x,
        weight: d_w,
        bias: grad_out.clone(),
    })
}
