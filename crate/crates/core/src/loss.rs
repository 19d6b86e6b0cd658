use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `−log softmax(scores)[label]` in log-sum-exp form, with its gradient
/// `softmax(scores) − onehot(label)`.
pub fn cross_entropy<T: Scalar>(scores: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let c = scores.len();
    if label >= c {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let s = scores.data();
    let m = s.iter().copied().fold(s[0], T::max);
    let lse = m + s.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    let mut grad = ops::softmax(scores);
    grad.data_mut()[label] -= T::ONE;
    Ok((lse - s[label], grad))
}
