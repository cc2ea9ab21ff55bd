//! End-to-end self checks run by `fdfm verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::haar::{dwt2, idwt2, FreqState, ImageShape, Pixels};
use crate::oracle::{
    fit_velocity_table, marginal_velocity, mc_velocity_many, table_rms_distance, table_rms_error, PointMixture,
    PosteriorMeanPredictor,
};
use crate::predictor::{Axis, TabularGrid};
use crate::sampler::{integrate, SampleConfig, Variant};
use crate::schedules::{FreqWeights, HeteroSchedule, PowerSchedule};
use crate::transport::interpolate_bands;

/// A forward/inverse transform pair under test.
#[derive(Clone, Copy)]
pub struct TransformPair {
    pub forward: fn(&Pixels) -> FreqState,
    pub inverse: fn(&FreqState) -> Result<Pixels>,
}

impl TransformPair {
    pub fn haar() -> Self {
        Self {
            forward: dwt2,
            inverse: idwt2,
        }
    }

    /// Integer Haar lifting: unnormalised sums forward, divided by four on the
    /// way back. Inverts exactly but does not preserve energy.
    pub fn unnormalised() -> Self {
        fn fwd(x: &Pixels) -> FreqState {
            dwt2(x).scale_bands(2.0, 2.0)
        }
        fn inv(s: &FreqState) -> Result<Pixels> {
            idwt2(&s.scale_bands(0.5, 0.5))
        }
        Self {
            forward: fwd,
            inverse: inv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {} ({})", self.module, self.name, self.detail)
    }
}

type Check = fn(&TransformPair) -> Result<(bool, String)>;

fn images(n: usize, seed: u64) -> Vec<Pixels> {
    let shape = ImageShape::new(3, 8, 8).expect("valid shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Pixels::gaussian(shape, 1.0, &mut rng)).collect()
}

fn round_trip(tp: &TransformPair) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for x in images(256, 1) {
        worst = worst.max((tp.inverse)(&(tp.forward)(&x))?.max_abs_diff(&x));
    }
    Ok((worst <= 1e-12, format!("max abs error {worst:e}")))
}

fn parseval(tp: &TransformPair) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for x in images(256, 2) {
        let e = x.norm_sq();
        worst = worst.max(((tp.forward)(&x).norm_sq() - e).abs() / e);
    }
    Ok((worst <= 1e-10, format!("max relative error {worst:e}")))
}

fn schedule_contract(_: &TransformPair) -> Result<(bool, String)> {
    for gamma in [0.9, 0.95, 1.0, 1.05, 1.1] {
        let s = PowerSchedule::new(gamma, 0.01)?;
        if s.eval(0.0)?.0 != 0.0 || s.eval(1.0)?.0 != 1.0 {
            return Ok((false, format!("endpoints not exact for gamma {gamma}")));
        }
        let mut prev = -1.0;
        for i in 0..=10_000 {
            let g = s.eval(i as f64 / 10_000.0)?.0;
            if g <= prev {
                return Ok((false, format!("not increasing for gamma {gamma}")));
            }
            prev = g;
        }
    }
    let lin = PowerSchedule::new(1.0, 0.01)?;
    let exact = (0..=100).all(|i| {
        let t = i as f64 / 100.0;
        lin.eval(t).map(|p| p.0 == t).unwrap_or(false)
    });
    Ok((exact, "endpoints, monotonicity, linear case".into()))
}

fn velocity_bound(_: &TransformPair) -> Result<(bool, String)> {
    let sch = HeteroSchedule::new(0.95, 1.05, 0.01)?;
    let lg = sch.derivative_bound(1001);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = ImageShape::new(3, 4, 4)?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = Pixels::gaussian(shape, 1.0, &mut rng);
        let e = Pixels::gaussian(shape, 1.0, &mut rng);
        let t: f64 = rng.random();
        let v = interpolate_bands(&dwt2(&x), &dwt2(&e), t, &sch)?.target_velocity;
        worst = worst.max(v.norm_sq().sqrt() / (lg * (x.norm() + e.norm())));
    }
    Ok((worst <= 1.0, format!("max ratio to bound {worst:.4}")))
}

fn two_point() -> Result<PointMixture> {
    PointMixture::new(vec![vec![-1.0], vec![1.0]], vec![0.4, 0.6], 1)
}

fn weighting_invariance(_: &TransformPair) -> Result<(bool, String)> {
    let mix = two_point()?;
    let sch = HeteroSchedule::new(0.95, 1.05, 0.01)?;
    let grid = TabularGrid::new(vec![Axis::new(0.45, 0.55, 1)?, Axis::new(-1.05, 1.05, 21)?])?;
    let points: Vec<(f64, f64)> = (0..21).map(|i| (0.5, -1.0 + 0.1 * i as f64)).collect();
    let mut fields = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, omega) in [0.0, 0.7].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + k as u64);
        let f = fit_velocity_table(
            &mix,
            &sch,
            &FreqWeights::new(omega)?,
            &grid,
            (0.45, 0.55),
            400_000,
            &mut rng,
        )?;
        worst = worst.max(table_rms_error(&f, &mix, &sch, &points)?);
        fields.push(f);
    }
    let d = table_rms_distance(&fields[0], &fields[1], &points)?;
    Ok((
        worst <= 0.1 && d <= 0.15,
        format!("rms to oracle {worst:.4}, between weightings {d:.4}"),
    ))
}

fn oracle_agreement(_: &TransformPair) -> Result<(bool, String)> {
    let mix = two_point()?;
    let sch = HeteroSchedule::new(0.95, 1.05, 0.01)?;
    let queries: Vec<Vec<f64>> = (0..5).map(|i| vec![-0.8 + 0.4 * i as f64]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let est = mc_velocity_many(&mix, &queries, 0.5, &sch, 200_000, 0.02, &mut rng)?;
    let mut worst: f64 = 0.0;
    for (q, e) in queries.iter().zip(est) {
        let e = e?;
        let exact = marginal_velocity(&mix, q, 0.5, &sch)?;
        worst = worst.max((e.estimate[0] - exact[0]).abs() / e.stderr[0]);
    }
    Ok((worst <= 4.0, format!("max deviation {worst:.2} standard errors")))
}

fn sampler_convergence(_: &TransformPair) -> Result<(bool, String)> {
    let sch = HeteroSchedule::new(0.95, 1.05, 0.01)?;
    let shape = ImageShape::new(1, 2, 2)?;
    let x0 = Pixels::from_vec(shape, vec![0.4, -0.2, 0.7, 0.1])?;
    let mix = PointMixture::from_images(std::slice::from_ref(&x0), vec![1.0])?;
    let pred = PosteriorMeanPredictor::new(mix, sch, shape)?;
    let noise = Pixels::gaussian(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let (d, e) = (dwt2(&x0), dwt2(&noise));
    let t_end = 0.9;
    let exact = interpolate_bands(&d, &e, t_end, &sch)?.state;
    let mut errs = Vec::new();
    for steps in [10, 100] {
        let grid: Vec<f64> = (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
        let out = integrate(
            &pred,
            vec![e.clone()],
            &grid,
            &SampleConfig::default(),
            &sch,
            None,
            |_, _| {},
        )?;
        errs.push(out[0].sub(&exact)?.norm_sq().sqrt());
    }
    let reinterp = SampleConfig {
        variant: Variant::Reinterp,
        steps: 7,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let grid = reinterp.time_grid()?;
    integrate(
        &pred,
        vec![e.clone()],
        &grid[..grid.len() - 1],
        &reinterp,
        &sch,
        None,
        |t, s| {
            if let Ok(p) = interpolate_bands(&d, &e, t, &sch) {
                worst = worst.max(s[0].max_abs_diff(&p.state));
            }
        },
    )?;
    let ratio = errs[1] / errs[0];
    Ok((
        ratio < 0.2 && worst < 1e-10,
        format!("euler error ratio {ratio:.4}, re-interpolation error {worst:e}"),
    ))
}

pub const CHECKS: &[(&str, &str, Check)] = &[
    ("haar", "round trip", round_trip),
    ("haar", "Parseval", parseval),
    ("schedules", "power schedule contract", schedule_contract),
    ("transport", "velocity bound", velocity_bound),
    (
        "objective",
        "weighting invariance of the optimal velocity",
        weighting_invariance,
    ),
    ("oracle", "closed form agrees with Monte Carlo", oracle_agreement),
    ("sampler", "convergence", sampler_convergence),
];

/// Runs the checks in order and stops at the first failure, which is the last
/// entry returned.
pub fn run_checks(tp: &TransformPair, mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for &(module, name, check) in CHECKS {
        let (passed, detail) = match check(tp) {
            Ok(r) => r,
            Err(e) => (false, e.to_string()),
        };
        let o = CheckOutcome {
            module,
            name,
            passed,
            detail,
        };
        report(&o);
        out.push(o);
        if !passed {
            break;
        }
    }
    out
}
