//! Closed-form posterior means and marginal velocities for finite point
//! mixtures, plus a Monte Carlo cross-check.
//!
//! Vectors here live in band coordinates: the first `n_low` entries are
//! low-band coefficients, the rest high-band. Given an atom `x_i` the noisy
//! state is Gaussian, `x_t | x_i ~ N(G x_i, (I - G)^2)`, with `G` diagonal.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::haar::{dwt2, FreqState, ImageShape, Pixels};
use crate::predictor::tabular::{TabularAccumulator, TabularField, TabularGrid};
use crate::predictor::CleanPredictor;
use crate::schedules::{BandCoefficients, FreqWeights, HeteroSchedule};

/// Finite-support data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMixture {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    n_low: usize,
}

impl PointMixture {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, n_low: usize) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Config(
                "a mixture needs one weight per atom and at least one atom".into(),
            ));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) || n_low > d {
            return Err(Error::Dimension("atoms must share a positive dimension".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights, n_low })
    }

    /// Equal-weight mixture.
    pub fn uniform(points: Vec<Vec<f64>>, n_low: usize) -> Result<Self> {
        let n = points.len().max(1);
        Self::new(points, vec![1.0 / n as f64; n], n_low)
    }

    /// Mixture of images, stored as band vectors (low band first).
    pub fn from_images(atoms: &[Pixels], weights: Vec<f64>) -> Result<Self> {
        let shape = atoms
            .first()
            .ok_or_else(|| Error::Config("a mixture needs at least one atom".into()))?
            .shape();
        if atoms.iter().any(|a| a.shape() != shape) {
            return Err(Error::Dimension("atoms differ in shape".into()));
        }
        let points = atoms.iter().map(|a| dwt2(a).to_vec()).collect();
        Self::new(points, weights, shape.low_len())
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn n_low(&self) -> usize {
        self.n_low
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn coef(&self, c: &BandCoefficients, k: usize) -> (f64, f64) {
        if k < self.n_low {
            (c.g_low, c.gdot_low)
        } else {
            (c.g_high, c.gdot_high)
        }
    }

    fn check_query(&self, x_t: &[f64], t: f64) -> Result<()> {
        if x_t.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "query has {} coordinates, mixture has {}",
                x_t.len(),
                self.dim()
            )));
        }
        if t >= 1.0 {
            return Err(Error::Singularity { t, t_max: 1.0 });
        }
        Ok(())
    }

    /// Draws one atom index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.points.len() == 1 {
            return 0;
        }
        WeightedIndex::new(&self.weights)
            .expect("weights validated")
            .sample(rng)
    }
}

/// Posterior probabilities of each atom given `x_t`, computed in the log domain.
pub fn posterior_weights(mix: &PointMixture, x_t: &[f64], t: f64, sch: &HeteroSchedule) -> Result<Vec<f64>> {
    mix.check_query(x_t, t)?;
    let c = sch.eval(t)?;
    let logs: Vec<f64> = mix
        .points
        .iter()
        .zip(&mix.weights)
        .map(|(p, &w)| {
            if w == 0.0 {
                return f64::NEG_INFINITY;
            }
            let quad: f64 = p
                .iter()
                .zip(x_t)
                .enumerate()
                .map(|(k, (&xi, &xt))| {
                    let (g, _) = mix.coef(&c, k);
                    let r = (xt - g * xi) / (1.0 - g);
                    r * r
                })
                .sum();
            w.ln() - 0.5 * quad
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `E[x | x_t]`.
pub fn posterior_mean(mix: &PointMixture, x_t: &[f64], t: f64, sch: &HeteroSchedule) -> Result<Vec<f64>> {
    let w = posterior_weights(mix, x_t, t, sch)?;
    let mut mean = vec![0.0; mix.dim()];
    for (p, wi) in mix.points.iter().zip(&w) {
        for (m, &xi) in mean.iter_mut().zip(p) {
            *m += wi * xi;
        }
    }
    Ok(mean)
}

/// Marginal velocity `G'(E[x | x_t] - E[noise | x_t])`, where
/// `E[noise | x_t] = (I - G)^-1 (x_t - G E[x | x_t])`.
pub fn marginal_velocity(mix: &PointMixture, x_t: &[f64], t: f64, sch: &HeteroSchedule) -> Result<Vec<f64>> {
    let mean = posterior_mean(mix, x_t, t, sch)?;
    let c = sch.eval(t)?;
    Ok(mean
        .iter()
        .zip(x_t)
        .enumerate()
        .map(|(k, (&m, &xt))| {
            let (g, gdot) = mix.coef(&c, k);
            let noise = (xt - g * m) / (1.0 - g);
            gdot * (m - noise)
        })
        .collect())
}

/// Kernel regression estimate with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Kish effective sample size of the kernel weights.
    pub effective_samples: f64,
}

/// Smallest number of draws accepted by the Monte Carlo estimator.
pub const MIN_MC_DRAWS: usize = 10_000;

/// Nadaraya-Watson estimate of `E[dx_t/dt | x_t]` from simulated pairs, using a
/// Gaussian kernel of width `bandwidth` truncated at four widths.
pub fn mc_velocity<R: Rng + ?Sized>(
    mix: &PointMixture,
    x_t: &[f64],
    t: f64,
    sch: &HeteroSchedule,
    draws: usize,
    bandwidth: f64,
    rng: &mut R,
) -> Result<McEstimate> {
    mc_velocity_many(mix, std::slice::from_ref(&x_t.to_vec()), t, sch, draws, bandwidth, rng)?
        .pop()
        .expect("one query")
}

/// [`mc_velocity`] for several query points sharing one set of draws.
pub fn mc_velocity_many<R: Rng + ?Sized>(
    mix: &PointMixture,
    queries: &[Vec<f64>],
    t: f64,
    sch: &HeteroSchedule,
    draws: usize,
    bandwidth: f64,
    rng: &mut R,
) -> Result<Vec<Result<McEstimate>>> {
    if draws < MIN_MC_DRAWS {
        return Err(Error::Config(format!(
            "need at least {MIN_MC_DRAWS} draws, got {draws}"
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    for q in queries {
        mix.check_query(q, t)?;
    }
    let d = mix.dim();
    let c = sch.eval(t)?;
    let coefs: Vec<(f64, f64)> = (0..d).map(|k| mix.coef(&c, k)).collect();
    let cutoff = (4.0 * bandwidth).powi(2);
    let inv_h2 = 1.0 / (bandwidth * bandwidth);

    let nq = queries.len();
    let mut sw = vec![0.0; nq];
    let mut sw2 = vec![0.0; nq];
    let mut swy = vec![vec![0.0; d]; nq];
    let mut sw2y = vec![vec![0.0; d]; nq];
    let mut sw2yy = vec![vec![0.0; d]; nq];
    let mut xt = vec![0.0; d];
    let mut v = vec![0.0; d];
    for _ in 0..draws {
        let atom = &mix.points[mix.sample_index(rng)];
        for k in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            let (g, gdot) = coefs[k];
            xt[k] = g * atom[k] + (1.0 - g) * eps;
            v[k] = gdot * (atom[k] - eps);
        }
        for (qi, q) in queries.iter().enumerate() {
            let dist2: f64 = q.iter().zip(&xt).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 >= cutoff {
                continue;
            }
            let w = (-0.5 * dist2 * inv_h2).exp();
            sw[qi] += w;
            sw2[qi] += w * w;
            for k in 0..d {
                swy[qi][k] += w * v[k];
                sw2y[qi][k] += w * w * v[k];
                sw2yy[qi][k] += w * w * v[k] * v[k];
            }
        }
    }
    Ok((0..nq)
        .map(|qi| {
            if sw[qi] == 0.0 {
                return Err(Error::UndefinedEstimate);
            }
            let estimate: Vec<f64> = swy[qi].iter().map(|s| s / sw[qi]).collect();
            // sum w^2 (y - m)^2 / (sum w)^2
            let stderr = (0..d)
                .map(|k| {
                    let m = estimate[k];
                    let ss = sw2yy[qi][k] - 2.0 * m * sw2y[qi][k] + m * m * sw2[qi];
                    (ss.max(0.0)).sqrt() / sw[qi]
                })
                .collect();
            Ok(McEstimate {
                estimate,
                stderr,
                effective_samples: sw[qi] * sw[qi] / sw2[qi],
            })
        })
        .collect())
}

/// Fits a piecewise-constant velocity field over `(t, x_t)` for a
/// one-dimensional mixture, with `t` uniform on `t_range`. Each example's
/// squared error is weighted by the band weight of its coordinate at its time.
pub fn fit_velocity_table<R: Rng + ?Sized>(
    mix: &PointMixture,
    sch: &HeteroSchedule,
    weights: &FreqWeights,
    grid: &TabularGrid,
    t_range: (f64, f64),
    draws: usize,
    rng: &mut R,
) -> Result<TabularField> {
    if mix.dim() != 1 || grid.dim() != 2 {
        return Err(Error::Dimension(
            "velocity tables are fit over (t, x_t) for one-dimensional mixtures".into(),
        ));
    }
    let (t0, t1) = t_range;
    if !(0.0 <= t0 && t0 < t1 && t1 < 1.0) {
        return Err(Error::Domain(format!("bad time range [{t0}, {t1})")));
    }
    let low = mix.n_low() == 1;
    let mut acc = TabularAccumulator::new(grid.clone(), 1);
    for _ in 0..draws {
        let t = rng.random_range(t0..t1);
        let x = mix.points[mix.sample_index(rng)][0];
        let eps: f64 = rng.sample(StandardNormal);
        let c = sch.eval(t)?;
        let (g, gdot) = if low {
            (c.g_low, c.gdot_low)
        } else {
            (c.g_high, c.gdot_high)
        };
        let (ll, lh) = weights.lambdas(t);
        let w = if low { ll } else { lh };
        acc.add_weighted(&[t, g * x + (1.0 - g) * eps], &[gdot * (x - eps)], &[w])?;
    }
    Ok(acc.finish())
}

/// RMS distance between a fitted table and the closed-form field at the given
/// `(t, x_t)` points. Fails if any point falls in an undefined cell.
pub fn table_rms_error(
    field: &TabularField,
    mix: &PointMixture,
    sch: &HeteroSchedule,
    points: &[(f64, f64)],
) -> Result<f64> {
    let mut ss = 0.0;
    for &(t, x) in points {
        let fit = field.evaluate(&[t, x]).ok_or(Error::UndefinedEstimate)?;
        let exact = marginal_velocity(mix, &[x], t, sch)?;
        ss += (fit[0] - exact[0]).powi(2);
    }
    Ok((ss / points.len() as f64).sqrt())
}

/// RMS distance between two tables at the given points.
pub fn table_rms_distance(a: &TabularField, b: &TabularField, points: &[(f64, f64)]) -> Result<f64> {
    let mut ss = 0.0;
    for &(t, x) in points {
        let va = a.evaluate(&[t, x]).ok_or(Error::UndefinedEstimate)?;
        let vb = b.evaluate(&[t, x]).ok_or(Error::UndefinedEstimate)?;
        ss += (va[0] - vb[0]).powi(2);
    }
    Ok((ss / points.len() as f64).sqrt())
}

/// Posterior-mean predictor for a mixture of images: the Bayes-optimal
/// clean-sample estimate.
#[derive(Debug, Clone)]
pub struct PosteriorMeanPredictor {
    pub mixture: PointMixture,
    pub schedule: HeteroSchedule,
    pub shape: ImageShape,
}

impl PosteriorMeanPredictor {
    pub fn new(mixture: PointMixture, schedule: HeteroSchedule, shape: ImageShape) -> Result<Self> {
        if mixture.dim() != shape.len() || mixture.n_low() != shape.low_len() {
            return Err(Error::Dimension(format!(
                "mixture of dimension {} does not describe images of shape {shape}",
                mixture.dim()
            )));
        }
        Ok(Self {
            mixture,
            schedule,
            shape,
        })
    }
}

impl CleanPredictor for PosteriorMeanPredictor {
    fn shape(&self) -> ImageShape {
        self.shape
    }

    fn predict_clean(&self, states: &[FreqState], t: f64, _cond: Option<usize>) -> Result<Vec<FreqState>> {
        states
            .iter()
            .map(|s| {
                let m = posterior_mean(&self.mixture, &s.to_vec(), t, &self.schedule)?;
                FreqState::from_vec(self.shape, &m)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSource {
    Closed,
    Mc,
}

/// One row of an exported oracle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub t: f64,
    pub x_t: Vec<f64>,
    pub v: Vec<f64>,
    pub source: OracleSource,
    pub stderr: Option<Vec<f64>>,
}

/// Writes rows as CSV with columns `t, x_t_*, v_*, source, stderr_*`.
pub fn write_oracle_csv<W: Write>(out: W, rows: &[OracleRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.x_t.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|k| format!("x_t_{k}")));
    header.extend((0..d).map(|k| format!("v_{k}")));
    header.push("source".into());
    header.extend((0..d).map(|k| format!("stderr_{k}")));
    w.write_record(&header)?;
    for r in rows {
        if r.x_t.len() != d || r.v.len() != d {
            return Err(Error::Dimension("oracle rows differ in dimension".into()));
        }
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.x_t.iter().map(f64::to_string));
        rec.extend(r.v.iter().map(f64::to_string));
        rec.push(match r.source {
            OracleSource::Closed => "closed".into(),
            OracleSource::Mc => "mc".into(),
        });
        match &r.stderr {
            Some(s) => rec.extend(s.iter().map(f64::to_string)),
            None => rec.extend((0..d).map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<oracle csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> PointMixture {
        PointMixture::uniform(vec![vec![-1.0], vec![1.0]], 1).unwrap()
    }

    #[test]
    fn single_atom_posterior_is_the_atom() {
        let mix = PointMixture::uniform(vec![vec![0.3, -0.7]], 1).unwrap();
        let sch = HeteroSchedule::new(0.95, 1.05, 0.01).unwrap();
        for xt in [[5.0, -3.0], [0.0, 0.0]] {
            assert_eq!(posterior_mean(&mix, &xt, 0.8, &sch).unwrap(), vec![0.3, -0.7]);
        }
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let m = posterior_mean(&two_point(), &[0.0], 0.5, &HeteroSchedule::homogeneous()).unwrap();
        assert_eq!(m, vec![0.0]);
    }

    #[test]
    fn two_point_posterior_matches_hand_algebra() {
        // log odds of the +1 atom: ((0.3 + 0.5)^2 - (0.3 - 0.5)^2) / (2 * 0.25) = 1.2
        let w = posterior_weights(&two_point(), &[0.3], 0.5, &HeteroSchedule::homogeneous()).unwrap();
        assert!(((w[1] / w[0]).ln() - 1.2).abs() < 1e-14);
        let m = posterior_mean(&two_point(), &[0.3], 0.5, &HeteroSchedule::homogeneous()).unwrap();
        assert!((m[0] - 0.6f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn posterior_is_stable_near_one() {
        let sch = HeteroSchedule::homogeneous();
        let m = posterior_mean(&two_point(), &[0.9], 1.0 - 1e-9, &sch).unwrap();
        assert_eq!(m, vec![1.0]);
        assert!(matches!(
            posterior_mean(&two_point(), &[0.0], 1.0, &sch),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn single_atom_velocity_field() {
        let x0 = 0.4;
        let mix = PointMixture::uniform(vec![vec![x0]], 1).unwrap();
        let sch = HeteroSchedule::homogeneous();
        let (t, xt) = (0.3, -0.25);
        let v = marginal_velocity(&mix, &[xt], t, &sch).unwrap()[0];
        assert!((v - (x0 - (xt - t * x0) / (1.0 - t))).abs() < 1e-15);
    }

    #[test]
    fn on_path_velocity_is_conditional_velocity() {
        let sch = HeteroSchedule::new(0.95, 1.05, 0.01).unwrap();
        let atom = vec![0.5, -0.2, 0.9];
        let eps = [0.3, 1.1, -0.4];
        let mix = PointMixture::uniform(vec![atom.clone()], 2).unwrap();
        let t = 0.6;
        let c = sch.eval(t).unwrap();
        let coef = |k: usize| {
            if k < 2 {
                (c.g_low, c.gdot_low)
            } else {
                (c.g_high, c.gdot_high)
            }
        };
        let xt: Vec<f64> = (0..3)
            .map(|k| coef(k).0 * atom[k] + (1.0 - coef(k).0) * eps[k])
            .collect();
        let v = marginal_velocity(&mix, &xt, t, &sch).unwrap();
        for k in 0..3 {
            assert!((v[k] - coef(k).1 * (atom[k] - eps[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(PointMixture::new(vec![vec![0.0]], vec![0.9], 1).is_err());
        assert!(PointMixture::new(vec![], vec![], 0).is_err());
        assert!(PointMixture::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0.5, 0.5], 1).is_err());
        assert!(PointMixture::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5], 1).is_err());
    }

    #[test]
    fn mc_agrees_for_single_atom() {
        let mix = PointMixture::uniform(vec![vec![0.7]], 1).unwrap();
        let sch = HeteroSchedule::homogeneous();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = mc_velocity(&mix, &[0.2], 0.4, &sch, 200_000, 0.02, &mut rng).unwrap();
        let exact = marginal_velocity(&mix, &[0.2], 0.4, &sch).unwrap();
        assert!((est.estimate[0] - exact[0]).abs() <= 3.0 * est.stderr[0]);
    }

    #[test]
    fn mc_stderr_scales_with_draws() {
        let mix = two_point();
        let sch = HeteroSchedule::homogeneous();
        let q = [0.1];
        let small = mc_velocity(&mix, &q, 0.5, &sch, 10_000, 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let large = mc_velocity(&mix, &q, 0.5, &sch, 1_000_000, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ratio = small.stderr[0] / large.stderr[0];
        assert!((7.0..13.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mc_reports_empty_windows() {
        let mix = two_point();
        let sch = HeteroSchedule::homogeneous();
        let r = mc_velocity(
            &mix,
            &[40.0],
            0.5,
            &sch,
            10_000,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        assert!(matches!(r, Err(Error::UndefinedEstimate)));
        let few = mc_velocity(&mix, &[0.0], 0.5, &sch, 100, 0.01, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(matches!(few, Err(Error::Config(_))));
    }

    #[test]
    fn heterogeneous_two_dimensional_mc_agreement() {
        let mix = PointMixture::new(vec![vec![-1.0, 0.5], vec![1.0, -0.5]], vec![0.3, 0.7], 1).unwrap();
        let sch = HeteroSchedule::new(0.95, 1.05, 0.01).unwrap();
        let queries = vec![vec![0.0, 0.0], vec![0.4, -0.2], vec![-0.5, 0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = mc_velocity_many(&mix, &queries, 0.5, &sch, 1_000_000, 0.03, &mut rng).unwrap();
        for (q, e) in queries.iter().zip(est) {
            let e = e.unwrap();
            let exact = marginal_velocity(&mix, q, 0.5, &sch).unwrap();
            for k in 0..2 {
                assert!(
                    (e.estimate[k] - exact[k]).abs() <= 3.0 * e.stderr[k],
                    "{q:?} coord {k}: {} vs {} (se {})",
                    e.estimate[k],
                    exact[k],
                    e.stderr[k]
                );
            }
        }
    }

    #[test]
    fn csv_export_columns() {
        let rows = vec![
            OracleRow {
                t: 0.5,
                x_t: vec![0.1],
                v: vec![0.2],
                source: OracleSource::Closed,
                stderr: None,
            },
            OracleRow {
                t: 0.5,
                x_t: vec![0.1],
                v: vec![0.25],
                source: OracleSource::Mc,
                stderr: Some(vec![0.01]),
            },
        ];
        let mut buf = Vec::new();
        write_oracle_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_t_0,v_0,source,stderr_0");
        assert_eq!(lines[1], "0.5,0.1,0.2,closed,");
        assert_eq!(lines[2], "0.5,0.1,0.25,mc,0.01");
    }
}
