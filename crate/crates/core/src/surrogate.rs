//! The interface control, calibration, and the demo drive surrogates through:
//! a forward prediction plus a pullback that turns a gradient with respect to
//! the field into a gradient with respect to the process parameters.

use crate::error::Result;
use crate::fno::SurrogateModel;
use crate::params::ProcessParams;
use crate::plane::{PlaneGrid, PlaneSection};

/// One plane's parameter-to-field map with reverse-mode support.
pub trait PlaneSurrogate: Send + Sync {
    fn grid(&self) -> &PlaneGrid;

    fn predict(&self, params: &ProcessParams) -> Result<PlaneSection>;

    /// Prediction plus a one-shot pullback: feed it dL/dT per node, get
    /// dL/d(P, V, T_sub, α).
    #[allow(clippy::type_complexity)]
    fn predict_grad<'a>(
        &'a self,
        params: &ProcessParams,
    ) -> Result<(PlaneSection, Box<dyn FnOnce(&[f64]) -> Result<[f64; 4]> + 'a>)>;
}

impl PlaneSurrogate for SurrogateModel {
    fn grid(&self) -> &PlaneGrid {
        &self.grid
    }

    fn predict(&self, params: &ProcessParams) -> Result<PlaneSection> {
        self.forward(params)
    }

    fn predict_grad<'a>(
        &'a self,
        params: &ProcessParams,
    ) -> Result<(PlaneSection, Box<dyn FnOnce(&[f64]) -> Result<[f64; 4]> + 'a>)> {
        let (section, cache) = self.forward_cached(params)?;
        let pull = move |d_field: &[f64]| self.backward(&cache, d_field, None);
        Ok((section, Box::new(pull)))
    }
}

/// The two plane surrogates the pipeline composes.
#[derive(Clone, Copy)]
pub struct SurrogatePair<'a> {
    pub xy: &'a dyn PlaneSurrogate,
    pub xz: &'a dyn PlaneSurrogate,
}

/// Value of a scalar functional of the predicted field and its gradient with
/// respect to (P, V, T_sub, α). Hard functionals are rejected inside
/// [`crate::features::FieldFunctional::value_and_grad`].
pub fn input_gradients(
    surrogate: &dyn PlaneSurrogate,
    params: &ProcessParams,
    functional: &crate::features::FieldFunctional,
) -> Result<(f64, [f64; 4])> {
    let (section, pull) = surrogate.predict_grad(params)?;
    let (value, d_field) = functional.value_and_grad(&section)?;
    Ok((value, pull(&d_field)?))
}
