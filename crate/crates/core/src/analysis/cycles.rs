//! Limit-cycle detection on a sampled trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleConfig {
    /// Leading fraction of the trajectory discarded as transient.
    pub transient_fraction: f64,
    /// Tail states must stay farther than this fraction of the largest
    /// radius from their mean.
    pub annulus: f64,
    /// Share of tail samples that must recur within tolerance.
    pub recurrence_fraction: f64,
    /// Recurrence tolerance as a fraction of the mean radius.
    pub tolerance_fraction: f64,
    /// Radii below this are treated as a point.
    pub min_radius: f64,
}

impl Default for LimitCycleConfig {
    fn default() -> Self {
        Self {
            transient_fraction: 0.5,
            annulus: 0.25,
            recurrence_fraction: 0.9,
            tolerance_fraction: 0.05,
            min_radius: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitCycleStatus {
    Detected,
    NotDetected,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub status: LimitCycleStatus,
    pub detected: bool,
    pub period: Option<f64>,
    pub mean_radius: f64,
    pub transient_len: usize,
    /// Mean recurrence distance at the detected lag, relative to the radius.
    pub recurrence_residual: Option<f64>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn detect_limit_cycle(
    traj: &[Vec<f64>],
    dt: f64,
    cfg: &LimitCycleConfig,
) -> Result<LimitCycleReport> {
    if !(0.0..1.0).contains(&cfg.transient_fraction) || !(dt > 0.0) {
        return Err(Error::Config(
            "transient fraction must be in [0, 1) and dt positive".into(),
        ));
    }
    let transient_len = (traj.len() as f64 * cfg.transient_fraction).floor() as usize;
    let tail = &traj[transient_len.min(traj.len())..];
    let mut report = LimitCycleReport {
        status: LimitCycleStatus::Inconclusive,
        detected: false,
        period: None,
        mean_radius: 0.0,
        transient_len,
        recurrence_residual: None,
    };
    if tail.len() < 9 {
        return Ok(report);
    }
    let d = tail[0].len();
    let mut center = vec![0.0; d];
    for s in tail {
        for j in 0..d {
            center[j] += s[j] / tail.len() as f64;
        }
    }
    let radii: Vec<f64> = tail.iter().map(|s| dist(s, &center)).collect();
    let rmax = radii.iter().fold(0.0f64, |m, &r| m.max(r));
    let rmin = radii.iter().fold(f64::INFINITY, |m, &r| m.min(r));
    report.mean_radius = radii.iter().sum::<f64>() / radii.len() as f64;
    if rmax < cfg.min_radius || rmin <= cfg.annulus * rmax {
        report.status = LimitCycleStatus::NotDetected;
        return Ok(report);
    }

    let tol = cfg.tolerance_fraction * report.mean_radius;
    let max_lag = tail.len() / 3;
    let score = |lag: usize| -> (f64, f64) {
        let n = tail.len() - lag;
        let mut within = 0usize;
        let mut total = 0.0;
        for t in 0..n {
            let e = dist(&tail[t + lag], &tail[t]);
            total += e;
            if e < tol {
                within += 1;
            }
        }
        (within as f64 / n as f64, total / n as f64)
    };
    let mut first = None;
    for lag in 1..=max_lag {
        let (frac, _) = score(lag);
        if frac >= cfg.recurrence_fraction {
            first = Some(lag);
            break;
        }
    }
    let Some(first) = first else {
        report.status = LimitCycleStatus::Inconclusive;
        return Ok(report);
    };
    // Walk to the bottom of the recurrence valley that starts at `first`.
    let mut best = first;
    let mut best_mean = score(first).1;
    let mut lag = first + 1;
    while lag <= max_lag {
        let (frac, m) = score(lag);
        if frac < cfg.recurrence_fraction || m > best_mean {
            break;
        }
        best = lag;
        best_mean = m;
        lag += 1;
    }
    // Parabolic refinement of the valley bottom for a sub-sample period.
    let mut period = best as f64;
    if best > 1 && best < max_lag {
        let (l, c, r) = (score(best - 1).1, best_mean, score(best + 1).1);
        let denom = l - 2.0 * c + r;
        if denom > 0.0 {
            period += (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    report.status = LimitCycleStatus::Detected;
    report.detected = true;
    report.period = Some(period * dt);
    report.recurrence_residual = Some(best_mean / report.mean_radius);
    Ok(report)
}
