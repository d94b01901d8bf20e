//! Finite-difference helpers backing the gradient-correctness tests.

use super::model::SurrogateModel;
use super::train::{batch_loss, TrainSample};
use crate::error::Result;

/// Central-difference gradient of the batch loss with respect to every model
/// parameter. Only usable on small models.
pub fn fd_param_grads(
    model: &SurrogateModel,
    batch: &[&TrainSample],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut work = model.clone();
    let n = work.params_flat.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = work.params_flat[i];
        work.params_flat[i] = orig + eps;
        let hi = batch_loss(&work, batch)?;
        work.params_flat[i] = orig - eps;
        let lo = batch_loss(&work, batch)?;
        work.params_flat[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

/// Worst relative disagreement between two gradient vectors, with a floor so
/// near-zero components compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function of the four process parameters.
pub fn fd_input_grads<F>(mut f: F, params: &crate::params::ProcessParams, eps: [f64; 4]) -> Result<[f64; 4]>
where
    F: FnMut(&crate::params::ProcessParams) -> Result<f64>,
{
    let base = params.as_array();
    let mut out = [0.0; 4];
    for i in 0..4 {
        let mut hi = base;
        hi[i] += eps[i];
        let mut lo = base;
        lo[i] -= eps[i];
        let fhi = f(&crate::params::ProcessParams::from_array(hi))?;
        let flo = f(&crate::params::ProcessParams::from_array(lo))?;
        out[i] = (fhi - flo) / (2.0 * eps[i]);
    }
    Ok(out)
}
