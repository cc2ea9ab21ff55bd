//! Optimizers and parameter averaging over flat parameter vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" | "adamw" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let moments = if config.kind == OptimizerKind::Adam {
            num_params
        } else {
            0
        };
        Self {
            config,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        let c = self.config;
        self.steps += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= c.lr * (g + c.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Dimension("optimizer state does not match parameters".into()));
                }
                let k = self.steps as i32;
                let bc1 = 1.0 - c.beta1.powi(k);
                let bc2 = 1.0 - c.beta2.powi(k);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                    self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    params[i] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * params[i]);
                }
            }
        }
        Ok(())
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: Vec<f64>,
}

impl Ema {
    pub fn new(decay: f64, params: &[f64]) -> Self {
        Self {
            decay,
            shadow: params.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[f64]) {
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = self.decay * *s + (1.0 - self.decay) * p;
        }
    }
}
