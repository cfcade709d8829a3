use rand::Rng;

use crate::tensor::Tensor;

/// He-normal initialization: N(0, 2 / fan_in).
pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
