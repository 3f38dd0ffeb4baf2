//! Central finite-difference gradient checking.

use super::{NumError, Tape, Tensor, Var};

/// Largest relative error between analytic and central-difference gradients.
///
/// `build` must construct a scalar on the given tape from the supplied input
/// leaves. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error<F>(inputs: &[Tensor], h: f64, floor: f64, build: F) -> Result<f64, NumError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, NumError>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|v| grads.get(*v)).collect()
    };
    let eval = |perturbed: &[Tensor]| -> Result<f64, NumError> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(build(&tape, &vars)?.item())
    };
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
