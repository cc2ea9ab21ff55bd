#![allow(dead_code)]

use fdfm::haar::ImageShape;
use fdfm::sampler::SampleConfig;
use fdfm::schedules::TimeSampler;
use fdfm::trainer::{DatasetKind, DatasetSpec, LrSchedule, TrainConfig};
use nalgebra::DMatrix;

/// Smoothed power schedule and its derivative, written out directly.
pub fn ref_g(gamma: f64, eps: f64, t: f64) -> (f64, f64) {
    if gamma == 1.0 {
        return (t, 1.0);
    }
    let z = (1.0 + eps).powf(gamma) - eps.powf(gamma);
    (
        ((t + eps).powf(gamma) - eps.powf(gamma)) / z,
        gamma * (t + eps).powf(gamma - 1.0) / z,
    )
}

/// Dense orthonormal Haar matrix mapping a flattened `(C, H, W)` image to the
/// flattened `[low, high]` band vector.
pub fn haar_matrix(shape: ImageShape) -> DMatrix<f64> {
    let (c, h, w) = shape.dims();
    let (h2, w2) = (h / 2, w / 2);
    let n = c * h * w;
    let quarter = c * h2 * w2;
    let pix = |ch: usize, i: usize, j: usize| (ch * h + i) * w + j;
    let mut m = DMatrix::zeros(n, n);
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let a = pix(ch, 2 * i, 2 * j);
                let b = pix(ch, 2 * i, 2 * j + 1);
                let cc = pix(ch, 2 * i + 1, 2 * j);
                let d = pix(ch, 2 * i + 1, 2 * j + 1);
                let cell = (ch * h2 + i) * w2 + j;
                // rows: LL, then LH, HL, HH stacked along channels
                let rows = [cell, quarter + cell, 2 * quarter + cell, 3 * quarter + cell];
                let signs = [
                    [1.0, 1.0, 1.0, 1.0],
                    [1.0, 1.0, -1.0, -1.0],
                    [1.0, -1.0, 1.0, -1.0],
                    [1.0, -1.0, -1.0, 1.0],
                ];
                for (r, s) in rows.iter().zip(signs) {
                    for (col, sign) in [a, b, cc, d].into_iter().zip(s) {
                        m[(*r, col)] = 0.5 * sign;
                    }
                }
            }
        }
    }
    m
}

/// Marginal velocity of a one-dimensional point mixture along a single band
/// with interpolation coefficient `g` and rate `gdot`.
pub fn ref_velocity_1d(points: &[f64], weights: &[f64], g: f64, gdot: f64, x: f64) -> f64 {
    let s = 1.0 - g;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&a, &w) in points.iter().zip(weights) {
        let eps = (x - g * a) / s;
        let p = w * (-0.5 * eps * eps).exp();
        num += p * gdot * (a - eps);
        den += p;
    }
    num / den
}

/// Marginal density (up to the common Gaussian constant) of the same band.
pub fn ref_density_1d(points: &[f64], weights: &[f64], g: f64, x: f64) -> f64 {
    let s = 1.0 - g;
    points
        .iter()
        .zip(weights)
        .map(|(&a, &w)| {
            let eps = (x - g * a) / s;
            w * (-0.5 * eps * eps).exp() / s
        })
        .sum()
}

pub const E2E_SAMPLES: usize = 10_000;
pub const E2E_WEIGHT: f64 = 0.3;

/// Training and sampling configuration for the end-to-end mixture check.
pub fn frozen_end_to_end() -> (TrainConfig, SampleConfig) {
    let mut ds = DatasetSpec::new(DatasetKind::PointMixture, ImageShape::new(1, 2, 2).unwrap());
    ds.atom_scale = 0.5;
    ds.mixture_weight = E2E_WEIGHT;
    let mut c = TrainConfig::new(ds);
    c.hidden = vec![64, 64];
    c.batch_size = 256;
    c.steps = 20_000;
    c.optimizer.lr = 1e-2;
    c.lr_schedule = LrSchedule::Cosine;
    c.ema = true;
    c.ema_decay = 0.99;
    c.time_sampler = TimeSampler::new(1.0, 1.0).unwrap();
    c.seed = 0;
    let s = SampleConfig {
        steps: 100,
        seed: 0,
        ..Default::default()
    };
    (c, s)
}
