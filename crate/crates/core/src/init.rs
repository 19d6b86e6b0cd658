use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform init with variance `gain² / fan_in`, where `fan_in` is the product
/// of every extent after the first.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], gain: f64, rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let bound = gain * libm::sqrt(3.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)))
}

pub(crate) fn rng_from_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
