//! Frequency-aligned flow-matching loss.
//!
//! Both band terms are divided by the total coefficient count `n = n_l + n_h`
//! of the state, so that with `omega = 0` the total is exactly the pixel-space
//! velocity MSE and the weighted loss equals `v^T M(t) v / n` with
//! `M(t) = lambda_l W_l^T W_l + lambda_h W_h^T W_h`.

use crate::error::{Error, Result};
use crate::haar::{FreqState, Pixels};
use crate::schedules::FreqWeights;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub low_term: f64,
    pub high_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(low_term: f64, high_term: f64) -> Self {
        Self {
            low_term,
            high_term,
            total: low_term + high_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.low_term.is_finite() && self.high_term.is_finite()
    }

    /// Mean of several breakdowns, term by term.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let low = items.iter().map(|b| b.low_term).sum::<f64>() / n;
        let high = items.iter().map(|b| b.high_term).sum::<f64>() / n;
        LossBreakdown::new(low, high)
    }
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Band-weighted velocity loss for one sample.
pub fn fa_loss(v_pred: &FreqState, v_target: &FreqState, t: f64, weights: &FreqWeights) -> Result<LossBreakdown> {
    v_pred.check_same_shape(v_target)?;
    let n = (v_pred.low.len() + v_pred.high.len()) as f64;
    let (ll, lh) = weights.lambdas(t);
    let low = ll * sq_diff(v_pred.low_slice(), v_target.low_slice()) / n;
    let high = lh * sq_diff(v_pred.high_slice(), v_target.high_slice()) / n;
    Ok(LossBreakdown::new(low, high))
}

/// Gradient of [`fa_loss`]'s total with respect to `v_pred`:
/// `2 lambda_b / n (v_pred_b - v_target_b)`.
pub fn fa_loss_grad(v_pred: &FreqState, v_target: &FreqState, t: f64, weights: &FreqWeights) -> Result<FreqState> {
    v_pred.check_same_shape(v_target)?;
    let n = (v_pred.low.len() + v_pred.high.len()) as f64;
    let (ll, lh) = weights.lambdas(t);
    let (al, ah) = (2.0 * ll / n, 2.0 * lh / n);
    v_pred.lincomb((al, ah), v_target, (-al, -ah))
}

/// Unweighted pixel-space velocity MSE.
pub fn cfm_loss(v_pred: &Pixels, v_target: &Pixels) -> Result<f64> {
    if v_pred.shape() != v_target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {} and target {} differ in shape",
            v_pred.shape(),
            v_target.shape()
        )));
    }
    Ok(sq_diff(v_pred.as_slice(), v_target.as_slice()) / v_pred.shape().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{dwt2, ImageShape};
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(seed: u64) -> FreqState {
        let sh = ImageShape::new(1, 4, 4).unwrap();
        dwt2(&Pixels::gaussian(sh, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
    }

    #[test]
    fn perfect_prediction_is_free() {
        let v = random_state(1);
        let w = FreqWeights::new(0.7).unwrap();
        assert_eq!(fa_loss(&v, &v, 0.3, &w).unwrap(), LossBreakdown::default());
        let g = fa_loss_grad(&v, &v, 0.3, &w).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
    }

    #[test]
    fn uniform_weights_give_plain_mse() {
        let (a, b) = (random_state(2), random_state(3));
        let l = fa_loss(&a, &b, 0.8, &FreqWeights::uniform()).unwrap();
        let mse = sq_diff(&a.to_vec(), &b.to_vec()) / 16.0;
        assert!((l.total - mse).abs() < 1e-15);
        assert_eq!(l.total, l.low_term + l.high_term);
    }

    #[test]
    fn single_coefficient_gradient() {
        // a state with one low and three high coefficients; only low differs
        let mk = |v: f64| FreqState {
            low: Array3::from_elem((1, 1, 1), v),
            high: Array3::zeros((3, 1, 1)),
        };
        let delta = 0.25;
        let g = fa_loss_grad(&mk(delta), &mk(0.0), 0.5, &FreqWeights::uniform()).unwrap();
        // per-coefficient normalisation by n = 4
        assert!((g.low[[0, 0, 0]] * 4.0 - 2.0 * delta).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (p, q) = (random_state(4), random_state(5));
        let w = FreqWeights::new(-0.5).unwrap();
        let t = 0.35;
        let g = fa_loss_grad(&p, &q, t, &w).unwrap().to_vec();
        let sh = p.image_shape().unwrap();
        let base = p.to_vec();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let lp = fa_loss(&FreqState::from_vec(sh, &up).unwrap(), &q, t, &w).unwrap();
            let lm = fa_loss(&FreqState::from_vec(sh, &dn).unwrap(), &q, t, &w).unwrap();
            let fd = (lp.total - lm.total) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "coord {i}");
        }
    }

    #[test]
    fn pixel_mse_agrees_with_band_loss() {
        let sh = ImageShape::new(3, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Pixels::gaussian(sh, 1.0, &mut rng);
        let b = Pixels::gaussian(sh, 1.0, &mut rng);
        let pix = cfm_loss(&a, &b).unwrap();
        let band = fa_loss(&dwt2(&a), &dwt2(&b), 0.1, &FreqWeights::uniform()).unwrap();
        assert!((pix - band.total).abs() <= 1e-10 * pix);
        assert_eq!(cfm_loss(&a, &a).unwrap(), 0.0);
        assert!(cfm_loss(&a, &Pixels::zeros(ImageShape::new(3, 8, 4).unwrap())).is_err());
    }

    #[test]
    fn constant_regression_minimiser_is_the_mean() {
        // empirical cfm loss of a constant prediction c over targets y_i is
        // minimised at mean(y); compare against a perturbed constant
        let sh = ImageShape::new(1, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ys: Vec<Pixels> = (0..50).map(|_| Pixels::gaussian(sh, 1.0, &mut rng)).collect();
        let mut mean = Pixels::zeros(sh);
        for y in &ys {
            mean = mean.lincomb(1.0, y, 1.0 / ys.len() as f64).unwrap();
        }
        let risk = |c: &Pixels| ys.iter().map(|y| cfm_loss(c, y).unwrap()).sum::<f64>();
        let best = risk(&mean);
        for k in 0..4 {
            let mut bumped = mean.clone().into_array();
            bumped.as_slice_mut().unwrap()[k] += 1e-3;
            assert!(risk(&Pixels::new(bumped).unwrap()) > best);
        }
    }
}
