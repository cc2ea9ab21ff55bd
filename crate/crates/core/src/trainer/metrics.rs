//! Run metrics and the energy-distance sample comparison.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use super::LrSchedule;
use crate::error::{Error, Result};
use crate::objective::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    /// One entry per executed step.
    pub losses: Vec<LossBreakdown>,
    pub energy_distance: Option<f64>,
    pub wall_time_secs: f64,
    pub config_hash: String,
}

/// Per-run columns echoed on every metrics row. The `lr` column follows
/// `lr_schedule` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsContext {
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub total_steps: usize,
    pub omega: f64,
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "step",
    "low_term",
    "high_term",
    "total",
    "lr",
    "omega",
    "gamma_low",
    "gamma_high",
    "seed",
];

pub fn write_metrics_csv<W: Write>(out: W, losses: &[LossBreakdown], ctx: &MetricsContext) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for (step, l) in losses.iter().enumerate() {
        w.write_record([
            step.to_string(),
            l.low_term.to_string(),
            l.high_term.to_string(),
            l.total.to_string(),
            ctx.lr_schedule.lr(ctx.lr, step, ctx.total_steps).to_string(),
            ctx.omega.to_string(),
            ctx.gamma_low.to_string(),
            ctx.gamma_high.to_string(),
            ctx.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Distinct rows (compared bitwise) with multiplicities, in first-seen order.
fn group_rows<T: AsRef<[f64]>>(rows: &[T]) -> Vec<(&[f64], f64)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<(&[f64], f64)> = Vec::new();
    for r in rows {
        let r = r.as_ref();
        let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => out[i].1 += 1.0,
            None => {
                index.insert(key, out.len());
                out.push((r, 1.0));
            }
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_distance(a: &[(&[f64], f64)], b: &[(&[f64], f64)]) -> f64 {
    let na: f64 = a.iter().map(|p| p.1).sum();
    let nb: f64 = b.iter().map(|p| p.1).sum();
    let partial: Vec<f64> = a
        .par_iter()
        .map(|&(x, wx)| wx * b.iter().map(|&(y, wy)| wy * dist(x, y)).sum::<f64>())
        .collect();
    partial.iter().sum::<f64>() / (na * nb)
}

/// `2 E|A - B| - E|A - A'| - E|B - B'|` over all pairs, including each point
/// with itself, so identical multisets give exactly zero.
pub fn energy_distance<T: AsRef<[f64]> + Sync>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = a[0].as_ref().len();
    if a.iter().chain(b).any(|r| r.as_ref().len() != d) {
        return Err(Error::Dimension("energy distance needs rows of equal length".into()));
    }
    let (ga, gb) = (group_rows(a), group_rows(b));
    let ab = mean_distance(&ga, &gb);
    let aa = mean_distance(&ga, &ga);
    let bb = mean_distance(&gb, &gb);
    Ok(2.0 * ab - aa - bb)
}
