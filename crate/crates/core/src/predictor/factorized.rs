//! Structure predictor followed by a detail refiner.
//!
//! `l_hat = f(l_t, t, c)` sees only the low band. `h_hat = g(h_t, l_hat, t, c)`
//! sees the high band and the predicted low band. By default `l_hat` enters the
//! refiner as a constant during the reverse pass, so high-band loss never
//! reaches the structure network.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;

use super::mlp::{Activation, MlpGrads, MlpParams, Tape};
use super::CleanPredictor;
use crate::error::{Error, Result};
use crate::haar::{idwt2, FreqState, ImageShape, Pixels};

pub const TIME_EMBED_DIM: usize = 4;

/// `(t, sin 2 pi t, cos 2 pi t, t^2)`.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let a = 2.0 * std::f64::consts::PI * t;
    [t, a.sin(), a.cos(), t * t]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub shape: ImageShape,
    pub hidden: Vec<usize>,
    /// Number of class labels; one extra slot is reserved for "no condition".
    pub num_classes: usize,
    pub activation: Activation,
    pub stop_gradient: bool,
}

impl ModelConfig {
    pub fn new(shape: ImageShape) -> Self {
        Self {
            shape,
            hidden: vec![64, 64],
            num_classes: 0,
            activation: Activation::Tanh,
            stop_gradient: true,
        }
    }

    pub fn cond_width(&self) -> usize {
        self.num_classes + 1
    }

    pub fn structure_widths(&self) -> Vec<usize> {
        let n_low = self.shape.low_len();
        let mut w = vec![n_low + TIME_EMBED_DIM + self.cond_width()];
        w.extend(&self.hidden);
        w.push(n_low);
        w
    }

    pub fn detail_widths(&self) -> Vec<usize> {
        let (n_low, n_high) = (self.shape.low_len(), self.shape.high_len());
        let mut w = vec![n_high + n_low + TIME_EMBED_DIM + self.cond_width()];
        w.extend(&self.hidden);
        w.push(n_high);
        w
    }
}

/// Output of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub l_hat: Array3<f64>,
    pub h_hat: Array3<f64>,
    pub x_hat: Pixels,
}

impl PredictorOutput {
    pub fn bands(&self) -> FreqState {
        FreqState {
            low: self.l_hat.clone(),
            high: self.h_hat.clone(),
        }
    }
}

/// Batched forward results and the tapes needed for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `(batch, n_low)`.
    pub l_hat: Array2<f64>,
    /// `(batch, n_high)`.
    pub h_hat: Array2<f64>,
    structure_tape: Tape,
    detail_tape: Tape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub structure: MlpGrads,
    pub detail: MlpGrads,
}

impl ModelGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.structure.flatten();
        v.extend(self.detail.flatten());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedModel {
    config: ModelConfig,
    pub structure: MlpParams,
    pub detail: MlpParams,
}

impl FactorizedModel {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let structure = MlpParams::init(&config.structure_widths(), config.activation, rng)?;
        let detail = MlpParams::init(&config.detail_widths(), config.activation, rng)?;
        Ok(Self {
            config,
            structure,
            detail,
        })
    }

    pub fn from_parts(config: ModelConfig, structure: MlpParams, detail: MlpParams) -> Result<Self> {
        if structure.widths() != config.structure_widths() || detail.widths() != config.detail_widths() {
            return Err(Error::Dimension(format!(
                "network widths {:?}/{:?} do not match configuration {:?}/{:?}",
                structure.widths(),
                detail.widths(),
                config.structure_widths(),
                config.detail_widths()
            )));
        }
        Ok(Self {
            config,
            structure,
            detail,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.structure.num_params() + self.detail.num_params()
    }

    /// Structure parameters followed by detail parameters.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.structure.flatten();
        v.extend(self.detail.flatten());
        v
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let (a, b) = values.split_at(self.structure.num_params());
        self.structure.set_flat(a)?;
        self.detail.set_flat(b)
    }

    fn condition_slot(&self, cond: Option<usize>) -> Result<usize> {
        match cond {
            None => Ok(self.config.num_classes),
            Some(c) if c < self.config.num_classes => Ok(c),
            Some(c) => Err(Error::Dimension(format!(
                "label {c} out of range for {} classes",
                self.config.num_classes
            ))),
        }
    }

    /// Batched forward pass. `frozen_l_hat`, when given, replaces the predicted
    /// low band as the refiner's conditioning input.
    pub fn forward_batch(
        &self,
        states: &[FreqState],
        ts: &[f64],
        conds: &[Option<usize>],
        frozen_l_hat: Option<ArrayView2<f64>>,
    ) -> Result<ForwardPass> {
        let batch = states.len();
        if ts.len() != batch || conds.len() != batch {
            return Err(Error::Dimension("batch components differ in length".into()));
        }
        let shape = self.config.shape;
        let (n_low, n_high) = (shape.low_len(), shape.high_len());
        let cw = self.config.cond_width();

        let mut s_in = Array2::zeros((batch, n_low + TIME_EMBED_DIM + cw));
        for (i, state) in states.iter().enumerate() {
            if state.image_shape()? != shape {
                return Err(Error::Dimension(format!(
                    "state shape {} does not match model shape {shape}",
                    state.image_shape()?
                )));
            }
            let mut row = s_in.row_mut(i);
            for (k, &v) in state.low_slice().iter().enumerate() {
                row[k] = v;
            }
            for (k, v) in time_embedding(ts[i]).into_iter().enumerate() {
                row[n_low + k] = v;
            }
            row[n_low + TIME_EMBED_DIM + self.condition_slot(conds[i])?] = 1.0;
        }
        let (l_hat, structure_tape) = self.structure.forward(s_in.view())?;

        let cond_l = frozen_l_hat.unwrap_or(l_hat.view());
        if cond_l.dim() != (batch, n_low) {
            return Err(Error::Dimension("frozen low band has the wrong shape".into()));
        }
        let mut d_in = Array2::zeros((batch, n_high + n_low + TIME_EMBED_DIM + cw));
        d_in.slice_mut(s![.., n_high..n_high + n_low]).assign(&cond_l);
        d_in.slice_mut(s![.., n_high + n_low..])
            .assign(&s_in.slice(s![.., n_low..]));
        for (i, state) in states.iter().enumerate() {
            let mut row = d_in.row_mut(i);
            for (k, &v) in state.high_slice().iter().enumerate() {
                row[k] = v;
            }
        }
        let (h_hat, detail_tape) = self.detail.forward(d_in.view())?;
        Ok(ForwardPass {
            l_hat,
            h_hat,
            structure_tape,
            detail_tape,
        })
    }

    /// Reverse pass from gradients on `l_hat` and `h_hat`.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_l_hat: ArrayView2<f64>,
        grad_h_hat: ArrayView2<f64>,
    ) -> Result<ModelGrads> {
        let (detail, d_input) = self.detail.backward(&pass.detail_tape, grad_h_hat)?;
        let n_high = self.config.shape.high_len();
        let n_low = self.config.shape.low_len();
        let structure_out_grad = if self.config.stop_gradient {
            grad_l_hat.to_owned()
        } else {
            &grad_l_hat + &d_input.slice(s![.., n_high..n_high + n_low])
        };
        let (structure, _) = self
            .structure
            .backward(&pass.structure_tape, structure_out_grad.view())?;
        Ok(ModelGrads { structure, detail })
    }

    /// Single-sample prediction.
    pub fn predict(&self, state: &FreqState, t: f64, cond: Option<usize>) -> Result<PredictorOutput> {
        let pass = self.forward_batch(std::slice::from_ref(state), &[t], &[cond], None)?;
        let bands = self.unpack(&pass, 0)?;
        let x_hat = idwt2(&bands)?;
        Ok(PredictorOutput {
            l_hat: bands.low,
            h_hat: bands.high,
            x_hat,
        })
    }

    /// Row `i` of a forward pass as a band state.
    pub fn unpack(&self, pass: &ForwardPass, i: usize) -> Result<FreqState> {
        let shape = self.config.shape;
        let low = Array3::from_shape_vec(shape.low_dims(), pass.l_hat.row(i).to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let high = Array3::from_shape_vec(shape.high_dims(), pass.h_hat.row(i).to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(FreqState { low, high })
    }
}

impl CleanPredictor for FactorizedModel {
    fn shape(&self) -> ImageShape {
        self.config.shape
    }

    fn predict_clean(&self, states: &[FreqState], t: f64, cond: Option<usize>) -> Result<Vec<FreqState>> {
        let ts = vec![t; states.len()];
        let conds = vec![cond; states.len()];
        let pass = self.forward_batch(states, &ts, &conds, None)?;
        (0..states.len()).map(|i| self.unpack(&pass, i)).collect()
    }
}
