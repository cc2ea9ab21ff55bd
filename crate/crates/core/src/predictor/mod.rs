//! Clean-sample predictors.

pub mod factorized;
pub mod mlp;
pub mod tabular;

pub use factorized::{FactorizedModel, ModelConfig, PredictorOutput};
pub use mlp::{Activation, MlpParams};
pub use tabular::{tabular_predictor_fit, Axis, TabularGrid, TabularSample};

use crate::error::Result;
use crate::haar::{FreqState, ImageShape};

/// Anything that maps noisy bands at time `t` to a clean-sample estimate.
pub trait CleanPredictor: Sync {
    fn shape(&self) -> ImageShape;

    /// Predicts `x_hat` for every state in the batch, all at the same time.
    fn predict_clean(&self, states: &[FreqState], t: f64, cond: Option<usize>) -> Result<Vec<FreqState>>;
}
