//! Deterministic ODE sampling from noise (`t = 0`) to data (`t = 1`).
//!
//! Every update happens in wavelet coordinates; since the transform is
//! orthonormal and linear, stepping the bands is the same as stepping pixels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::haar::{dwt2, idwt2, FreqState, Pixels};
use crate::predictor::CleanPredictor;
use crate::schedules::{timeshift, HeteroSchedule};
use crate::transport::{implied_noise, xpred_to_velocity_capped, DEFAULT_T_MAX};

/// How one step advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `x_next = x_t + (t_next - t) v`.
    Euler,
    /// Recover the implied noise, then re-interpolate at `t_next`.
    Reinterp,
    /// `x_next = x_hat + (t_next - t) v`, the update line exactly as printed in
    /// the reference pseudocode.
    PaperLiteral,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Euler => "euler",
            Variant::Reinterp => "reinterp",
            Variant::PaperLiteral => "paper_literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(Variant::Euler),
            "reinterp" => Some(Variant::Reinterp),
            "paper_literal" => Some(Variant::PaperLiteral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub variant: Variant,
    pub t_max: f64,
    pub cfg_scale: f64,
    pub cfg_interval: (f64, f64),
    pub timeshift: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            variant: Variant::Euler,
            t_max: DEFAULT_T_MAX,
            cfg_scale: 1.0,
            cfg_interval: (0.15, 1.0),
            timeshift: 1.0,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampling needs at least one step".into()));
        }
        if !(self.t_max > 0.0 && self.t_max < 1.0) {
            return Err(Error::Config(format!("t_max must lie in (0, 1), got {}", self.t_max)));
        }
        if !(self.cfg_scale >= 1.0) {
            return Err(Error::Config(format!("cfg_scale must be >= 1, got {}", self.cfg_scale)));
        }
        let (lo, hi) = self.cfg_interval;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid CFG interval [{lo}, {hi}]")));
        }
        if !(self.timeshift >= 1.0) {
            return Err(Error::Config(format!("timeshift must be >= 1, got {}", self.timeshift)));
        }
        Ok(())
    }

    /// Warped time grid `0 = t_0 < ... < t_steps = 1`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        (0..=self.steps)
            .map(|k| timeshift(k as f64 / self.steps as f64, self.timeshift))
            .collect()
    }

    fn guidance_active(&self, t: f64) -> bool {
        self.cfg_scale != 1.0 && t >= self.cfg_interval.0 && t <= self.cfg_interval.1
    }
}

/// Classifier-free guidance on velocities. Outside the interval, or with
/// `scale == 1`, the conditional velocity is returned unchanged.
pub fn cfg_velocity(v_cond: &Pixels, v_uncond: &Pixels, scale: f64, t: f64, interval: (f64, f64)) -> Result<Pixels> {
    if scale == 1.0 || t < interval.0 || t > interval.1 {
        return Ok(v_cond.clone());
    }
    v_uncond.lincomb(1.0 - scale, v_cond, scale)
}

fn guide(cond: &FreqState, uncond: &FreqState, scale: f64) -> Result<FreqState> {
    uncond.lincomb((1.0 - scale, 1.0 - scale), cond, (scale, scale))
}

fn check_times(t: f64, t_next: f64) -> Result<()> {
    if !(0.0 <= t && t <= t_next && t_next <= 1.0) {
        return Err(Error::Domain(format!(
            "step must satisfy 0 <= t <= t_next <= 1, got t = {t}, t_next = {t_next}"
        )));
    }
    Ok(())
}

/// Clean predictions for a batch, with guidance applied when active.
fn guided_prediction<P: CleanPredictor + ?Sized>(
    predictor: &P,
    states: &[FreqState],
    t: f64,
    cfg: &SampleConfig,
    cond: Option<usize>,
) -> Result<(Vec<FreqState>, Option<Vec<FreqState>>)> {
    let xc = predictor.predict_clean(states, t, cond)?;
    if cond.is_some() && cfg.guidance_active(t) {
        let xu = predictor.predict_clean(states, t, None)?;
        return Ok((xc, Some(xu)));
    }
    Ok((xc, None))
}

/// Advances a batch of band states from `t` to `t_next`.
pub fn step_bands<P: CleanPredictor + ?Sized>(
    predictor: &P,
    states: &[FreqState],
    t: f64,
    t_next: f64,
    cfg: &SampleConfig,
    schedule: &HeteroSchedule,
    cond: Option<usize>,
) -> Result<Vec<FreqState>> {
    check_times(t, t_next)?;
    let (xc, xu) = guided_prediction(predictor, states, t, cfg, cond)?;
    let t_conv = t.min(cfg.t_max);
    let final_step = t_next > cfg.t_max;
    let dt = t_next - t;
    states
        .iter()
        .enumerate()
        .map(|(i, x_t)| {
            let x_hat = match &xu {
                Some(xu) => guide(&xc[i], &xu[i], cfg.cfg_scale)?,
                None => xc[i].clone(),
            };
            if final_step {
                return Ok(x_hat);
            }
            match cfg.variant {
                Variant::Reinterp => {
                    let eps = implied_noise(&x_hat, x_t, t_conv, schedule)?;
                    let c = schedule.eval(t_next)?;
                    x_hat.lincomb((c.g_low, c.g_high), &eps, (1.0 - c.g_low, 1.0 - c.g_high))
                }
                Variant::Euler | Variant::PaperLiteral => {
                    let v = match &xu {
                        Some(xu) => {
                            let vc = xpred_to_velocity_capped(&xc[i], x_t, t_conv, schedule, cfg.t_max)?;
                            let vu = xpred_to_velocity_capped(&xu[i], x_t, t_conv, schedule, cfg.t_max)?;
                            guide(&vc, &vu, cfg.cfg_scale)?
                        }
                        None => xpred_to_velocity_capped(&x_hat, x_t, t_conv, schedule, cfg.t_max)?,
                    };
                    let base = if cfg.variant == Variant::Euler { x_t } else { &x_hat };
                    base.lincomb((1.0, 1.0), &v, (dt, dt))
                }
            }
        })
        .collect()
}

/// Pixel-space single step.
pub fn step<P: CleanPredictor + ?Sized>(
    predictor: &P,
    x_t: &Pixels,
    t: f64,
    t_next: f64,
    cfg: &SampleConfig,
    schedule: &HeteroSchedule,
    cond: Option<usize>,
) -> Result<Pixels> {
    let next = step_bands(predictor, &[dwt2(x_t)], t, t_next, cfg, schedule, cond)?;
    idwt2(&next[0])
}

/// Integrates a batch along `grid`, calling `observe(t, states)` at every grid
/// time including the first.
pub fn integrate<P: CleanPredictor + ?Sized>(
    predictor: &P,
    mut states: Vec<FreqState>,
    grid: &[f64],
    cfg: &SampleConfig,
    schedule: &HeteroSchedule,
    cond: Option<usize>,
    mut observe: impl FnMut(f64, &[FreqState]),
) -> Result<Vec<FreqState>> {
    if let Some(&t0) = grid.first() {
        observe(t0, &states);
    }
    for w in grid.windows(2) {
        states = step_bands(predictor, &states, w[0], w[1], cfg, schedule, cond)?;
        observe(w[1], &states);
    }
    Ok(states)
}

/// Initial noise for element `index`; depends only on `(seed, index)`.
pub fn initial_noise(shape: crate::haar::ImageShape, seed: u64, index: usize) -> Pixels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    Pixels::gaussian(shape, 1.0, &mut rng)
}

const SAMPLE_CHUNK: usize = 256;

/// Draws `n` samples. Elements are processed in fixed chunks, so the result
/// does not depend on how many worker threads are available.
pub fn sample<P: CleanPredictor + ?Sized>(
    predictor: &P,
    n: usize,
    cfg: &SampleConfig,
    schedule: &HeteroSchedule,
    cond: Option<usize>,
) -> Result<Vec<Pixels>> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let shape = predictor.shape();
    let starts: Vec<usize> = (0..n).step_by(SAMPLE_CHUNK).collect();
    let chunks: Vec<Result<Vec<Pixels>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + SAMPLE_CHUNK).min(n);
            let init = (start..end).map(|i| dwt2(&initial_noise(shape, cfg.seed, i))).collect();
            let out = integrate(predictor, init, &grid, cfg, schedule, cond, |_, _| {})?;
            out.iter().map(idwt2).collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    for c in chunks {
        samples.extend(c?);
    }
    Ok(samples)
}
