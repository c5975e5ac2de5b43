use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Largest relative error between the reverse-mode gradient of a scalar
/// function and central differences, over every coordinate of every input.
/// The relative error of a pair `(a, b)` is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut shifted = points.to_vec();
    for (i, point) in points.iter().enumerate() {
        for j in 0..point.len() {
            let orig = point.data()[j];
            shifted[i].data_mut()[j] = orig + eps;
            let plus = eval(&shifted)?;
            shifted[i].data_mut()[j] = orig - eps;
            let minus = eval(&shifted)?;
            shifted[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), eps)
}
