//! The heterogeneous interpolation path between noise and data.
//!
//! In wavelet coordinates every band moves on its own schedule:
//! `b_t = g_b(t) data_b + (1 - g_b(t)) noise_b`, with conditional velocity
//! `g_b'(t) (data_b - noise_b)`. Because the transform is orthonormal the
//! pixel-space operator `G(t) = W^-1 diag(g_l I, g_h I) W` never needs to be
//! formed; it is applied as one scalar per band.

use crate::error::{Error, Result};
use crate::haar::{dwt2, idwt2, FreqState, Pixels};
use crate::schedules::HeteroSchedule;

/// Latest time at which a clean-sample prediction is converted to a velocity.
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-3;

/// One point on the path together with its regression target.
#[derive(Debug, Clone)]
pub struct TransportSample {
    pub t: f64,
    /// Noisy bands `(l_t, h_t)`.
    pub state: FreqState,
    /// `x_t` in pixel space.
    pub pixels: Pixels,
    /// Conditional velocity in wavelet coordinates.
    pub target_velocity: FreqState,
}

/// Interpolates `data` and `noise` at time `t`.
pub fn interpolate(data: &Pixels, noise: &Pixels, t: f64, schedule: &HeteroSchedule) -> Result<TransportSample> {
    if data.shape() != noise.shape() {
        return Err(Error::Dimension(format!(
            "data {} and noise {} differ in shape",
            data.shape(),
            noise.shape()
        )));
    }
    interpolate_bands(&dwt2(data), &dwt2(noise), t, schedule)
}

/// [`interpolate`] for inputs already in wavelet coordinates.
pub fn interpolate_bands(
    data: &FreqState,
    noise: &FreqState,
    t: f64,
    schedule: &HeteroSchedule,
) -> Result<TransportSample> {
    let c = schedule.eval(t)?;
    let state = data.lincomb((c.g_low, c.g_high), noise, (1.0 - c.g_low, 1.0 - c.g_high))?;
    let target_velocity = data.lincomb((c.gdot_low, c.gdot_high), noise, (-c.gdot_low, -c.gdot_high))?;
    let pixels = idwt2(&state)?;
    Ok(TransportSample {
        t,
        state,
        pixels,
        target_velocity,
    })
}

/// Per-band factor `g_b'(t) / (1 - g_b(t))` turning `x_hat - x_t` into a velocity.
pub fn velocity_gains(t: f64, schedule: &HeteroSchedule, t_max: f64) -> Result<(f64, f64)> {
    if t > t_max {
        return Err(Error::Singularity { t, t_max });
    }
    let c = schedule.eval(t)?;
    Ok((c.gdot_low / (1.0 - c.g_low), c.gdot_high / (1.0 - c.g_high)))
}

/// Converts a clean-sample prediction into a velocity,
/// `v_b = g_b'(t) / (1 - g_b(t)) (x_hat_b - state_b)`.
pub fn xpred_to_velocity(xhat: &FreqState, state: &FreqState, t: f64, schedule: &HeteroSchedule) -> Result<FreqState> {
    xpred_to_velocity_capped(xhat, state, t, schedule, DEFAULT_T_MAX)
}

/// [`xpred_to_velocity`] with an explicit singularity cutoff.
pub fn xpred_to_velocity_capped(
    xhat: &FreqState,
    state: &FreqState,
    t: f64,
    schedule: &HeteroSchedule,
    t_max: f64,
) -> Result<FreqState> {
    let (kl, kh) = velocity_gains(t, schedule, t_max)?;
    xhat.lincomb((kl, kh), state, (-kl, -kh))
}

/// Recovers the noise implied by a clean prediction,
/// `noise_b = (state_b - g_b x_hat_b) / (1 - g_b)`.
pub fn implied_noise(xhat: &FreqState, state: &FreqState, t: f64, schedule: &HeteroSchedule) -> Result<FreqState> {
    let c = schedule.eval(t)?;
    if c.g_low >= 1.0 || c.g_high >= 1.0 {
        return Err(Error::Singularity { t, t_max: t });
    }
    let (il, ih) = (1.0 / (1.0 - c.g_low), 1.0 / (1.0 - c.g_high));
    state.lincomb((il, ih), xhat, (-c.g_low * il, -c.g_high * ih))
}

/// Applies `G(t)` to a pixel tensor.
pub fn apply_g(x: &Pixels, t: f64, schedule: &HeteroSchedule) -> Result<Pixels> {
    let c = schedule.eval(t)?;
    idwt2(&dwt2(x).scale_bands(c.g_low, c.g_high))
}
