use rand::Rng;

use super::Tensor;

/// Glorot-style uniform init: U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, s)
}

/// U(-s, s) entries.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], s: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-s..s))
}
