//! Central finite-difference gradient verification (double precision).

use alloc::vec::Vec;

use super::{Graph, Var};
use crate::{Error, Result, Tensor};

/// `|a − n| / (|a| + |n| + 1e−12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Maximum relative error between the tape gradient of `f` at `x` and the
/// central difference `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let errs = grad_check_many(|g, vars| f(g, vars[0]), core::slice::from_ref(x), h)?;
    Ok(errs[0])
}

/// Like [`grad_check`] for a function of several tensors; returns the
/// maximum relative error per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| Error::contract("grad_check", "function must return a scalar"))
    };

    let mut worst = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter gradient");
        let mut max_err = 0.0f64;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_err = max_err.max(relative_error(analytic.data()[i], numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}
