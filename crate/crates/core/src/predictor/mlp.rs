//! Small fully connected networks with a hand-written reverse pass.
//!
//! Inputs are batched row-wise: a forward pass maps a `(batch, in)` matrix to
//! `(batch, out)` and records every layer input on a [`Tape`]. Hidden layers
//! apply the activation; the last layer is affine.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer, `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    layers: Vec<Dense>,
    activation: Activation,
    id: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.activation == other.activation && self.layers == other.layers
    }
}

/// Layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    params_id: u64,
    inputs: Vec<Array2<f64>>,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.iter().map(Dense::len).sum());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Dimension(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.weight.ncols(),
                    i - 1,
                    layers[i - 1].weight.nrows()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            activation,
            id: fresh_id(),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Dimension(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                d.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
                d.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
                d
            })
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.weight.nrows()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        MlpGrads {
            layers: self.layers.clone(),
        }
        .flatten()
    }

    /// Overwrites every parameter; invalidates outstanding tapes.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        self.id = fresh_id();
        Ok(())
    }

    /// Mutable access to the layers; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.id = fresh_id();
        &mut self.layers
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.input_width() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            inputs.push(act);
            act = z;
        }
        Ok((
            act,
            Tape {
                params_id: self.id,
                inputs,
            },
        ))
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let view = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Dimension(e.to_string()))?;
        let (out, tape) = self.forward(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    /// Reverse pass. Parameter gradients are summed over the batch rows.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if tape.params_id != self.id || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        let batch = tape.inputs[0].nrows();
        if output_grad.dim() != (batch, self.output_width()) {
            return Err(Error::Dimension(format!(
                "output gradient has shape {:?}, expected ({batch}, {})",
                output_grad.dim(),
                self.output_width()
            )));
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &tape.inputs[i];
            grads.push(Dense {
                weight: delta.t().dot(a),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut back = delta.dot(&layer.weight);
            if i > 0 {
                // a is the activation output of layer i-1
                back.zip_mut_with(a, |g, &y| *g *= self.activation.derivative_from_output(y));
            }
            delta = back;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(widths: &[usize], seed: u64) -> MlpParams {
        MlpParams::init(widths, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut d = Dense::zeros(3, 3);
        d.weight = Array2::eye(3);
        let net = MlpParams::from_layers(vec![d], Activation::Tanh).unwrap();
        let (out, _) = net.forward_one(&[0.5, -2.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_input_and_biases_give_zero_output() {
        let mut net = random_net(&[4, 8, 8, 2], 1);
        for l in net.layers_mut() {
            l.bias.fill(0.0);
        }
        let (out, _) = net.forward_one(&[0.0; 4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_scalar_reimplementation() {
        let net = random_net(&[5, 7, 6, 3], 2);
        let x = [0.3, -0.1, 0.8, -1.2, 0.05];
        let (out, _) = net.forward_one(&x).unwrap();
        let mut act: Vec<f64> = x.to_vec();
        let n = net.layers().len();
        for (k, layer) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for r in 0..layer.weight.nrows() {
                let mut s = layer.bias[r];
                for c in 0..layer.weight.ncols() {
                    s += layer.weight[[r, c]] * act[c];
                }
                next.push(if k + 1 < n { s.tanh() } else { s });
            }
            act = next;
        }
        for (a, b) in out.iter().zip(&act) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let net = random_net(&[3, 4, 2], 3);
        assert!(matches!(net.forward_one(&[1.0, 2.0]), Err(Error::Dimension(_))));
        let bad = vec![Dense::zeros(3, 4), Dense::zeros(5, 2)];
        assert!(MlpParams::from_layers(bad, Activation::Tanh).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = random_net(&[3, 5, 2], 4);
        let (_, tape) = net.forward_one(&[0.1, 0.2, 0.3]).unwrap();
        let (g, gin) = net.backward(&tape, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient() {
        let d = Dense {
            weight: arr2(&[[1.0, -2.0], [0.5, 3.0]]),
            bias: arr1(&[0.0, 0.0]),
        };
        let net = MlpParams::from_layers(vec![d], Activation::Identity).unwrap();
        let x = [0.7, -0.4];
        let y = [1.0, 2.0];
        let (out, tape) = net.forward_one(&x).unwrap();
        let r: Vec<f64> = out.iter().zip(&y).map(|(o, t)| o - t).collect();
        let (g, _) = net
            .backward(&tape, Array2::from_shape_vec((1, 2), r.clone()).unwrap().view())
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.layers[0].weight[[i, j]] - r[i] * x[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stale_tape_is_detected() {
        let mut net = random_net(&[2, 3, 1], 5);
        let (_, tape) = net.forward_one(&[1.0, 1.0]).unwrap();
        let flat = net.flatten();
        net.set_flat(&flat).unwrap();
        assert!(matches!(
            net.backward(&tape, Array2::ones((1, 1)).view()),
            Err(Error::StaleTape)
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        let net = random_net(&[6, 9, 7, 4], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &MlpParams, input: &Array2<f64>| {
            let (o, _) = p.forward(input.view()).unwrap();
            0.5 * (&o - &target).mapv(|v| v * v).sum()
        };
        let (out, tape) = net.forward(x.view()).unwrap();
        let (g, gin) = net.backward(&tape, (&out - &target).view()).unwrap();
        let analytic = g.flatten();
        let base = net.flatten();
        let h = 1e-5;
        let mut probe = net.clone();
        for _ in 0..100 {
            let k = rng.random_range(0..base.len());
            let mut p = base.clone();
            p[k] += h;
            probe.set_flat(&p).unwrap();
            let up = loss(&probe, &x);
            p[k] -= 2.0 * h;
            probe.set_flat(&p).unwrap();
            let dn = loss(&probe, &x);
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(analytic[k].abs()).max(1e-6);
            assert!((fd - analytic[k]).abs() / scale < 1e-4, "param {k}");
        }
        for r in 0..3 {
            for c in 0..6 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert!((fd - gin[[r, c]]).abs() < 1e-8);
            }
        }
    }
}
