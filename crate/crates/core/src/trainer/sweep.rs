//! Grid sweeps over schedule exponents and loss weighting.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{energy_distance, fit, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::haar::Pixels;
use crate::sampler::{sample, SampleConfig};

pub const GAMMA_PAIRS: [(f64, f64); 5] = [(0.9, 1.1), (0.95, 1.05), (1.0, 1.0), (1.05, 0.95), (1.1, 0.9)];
pub const OMEGAS: [f64; 5] = [0.0, 0.3, 0.5, 0.7, -0.7];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub omega: f64,
}

impl SweepCell {
    /// Every exponent pair crossed with every weighting strength.
    pub fn full_grid() -> Vec<SweepCell> {
        GAMMA_PAIRS
            .iter()
            .flat_map(|&(gamma_low, gamma_high)| {
                OMEGAS.iter().map(move |&omega| SweepCell {
                    gamma_low,
                    gamma_high,
                    omega,
                })
            })
            .collect()
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.gamma_low = self.gamma_low;
        c.gamma_high = self.gamma_high;
        c.omega = self.omega;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub energy_distance: Option<f64>,
    pub error: Option<String>,
}

/// Held-out draws from the training distribution, independent of the
/// training streams for the same seed.
pub fn reference_samples(dataset: &Dataset, n: usize, seed: u64) -> Vec<Pixels> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(99);
    (0..n).map(|_| dataset.draw(&mut rng).0).collect()
}

/// Fit, sample `n` images and compare them with `reference`.
pub fn evaluate(config: &TrainConfig, sampling: &SampleConfig, reference: &[Pixels]) -> Result<(f64, f64)> {
    let (trainer, metrics) = fit(config)?;
    let final_loss = metrics.losses.last().map_or(f64::NAN, |l| l.total);
    let model = trainer.sampling_model()?;
    let out = sample(&model, reference.len(), sampling, &config.schedule()?, None)?;
    Ok((final_loss, energy_distance(&out, reference)?))
}

/// One row per cell; a failing cell is recorded and the sweep continues.
pub fn run_sweep(
    base: &TrainConfig,
    cells: &[SweepCell],
    sampling: &SampleConfig,
    n_eval: usize,
) -> Result<Vec<SweepRow>> {
    if n_eval == 0 {
        return Err(Error::Config("sweeps need at least one evaluation sample".into()));
    }
    let reference = reference_samples(&base.dataset.build()?, n_eval, base.seed);
    Ok(cells
        .iter()
        .map(|cell| {
            let config = cell.apply(base);
            match evaluate(&config, sampling, &reference) {
                Ok((loss, ed)) => SweepRow {
                    cell: *cell,
                    seed: base.seed,
                    final_loss: Some(loss),
                    energy_distance: Some(ed),
                    error: None,
                },
                Err(e) => SweepRow {
                    cell: *cell,
                    seed: base.seed,
                    final_loss: None,
                    energy_distance: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "gamma_low",
        "gamma_high",
        "omega",
        "seed",
        "final_loss",
        "energy_distance",
        "status",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.cell.gamma_low.to_string(),
            r.cell.gamma_high.to_string(),
            r.cell.omega.to_string(),
            r.seed.to_string(),
            opt(r.final_loss),
            opt(r.energy_distance),
            r.error.clone().unwrap_or_else(|| "ok".into()),
        ])?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}
