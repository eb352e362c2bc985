//! Integral smoothness metrics of sampled trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothnessOrder {
    L1,
    L2,
    Max,
}

/// `(Σ ‖dᵏV/dtᵏ‖ᵖ Δt)^{1/p}` from forward differences, or the largest norm
/// for `Max`. When `ranges` is given each coordinate is divided by its range
/// first.
pub fn smoothness_metric(
    traj: &[Vec<f64>],
    dt: f64,
    k: usize,
    p: SmoothnessOrder,
    ranges: Option<&[f64]>,
) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return Err(Error::Config(format!(
            "derivative order must be 1 or 2, got {k}"
        )));
    }
    if traj.len() < k + 1 {
        return Err(Error::Config(format!(
            "need at least {} samples for order {k}, got {}",
            k + 1,
            traj.len()
        )));
    }
    let d = traj[0].len();
    if let Some(r) = ranges {
        check_len("ranges", d, r.len())?;
    }
    let scale = |j: usize| ranges.map_or(1.0, |r| 1.0 / r[j]);
    let mut acc = 0.0f64;
    for i in 0..traj.len() - k {
        let mut sq = 0.0;
        for j in 0..d {
            let deriv = match k {
                1 => (traj[i + 1][j] - traj[i][j]) / dt,
                _ => (traj[i + 2][j] - 2.0 * traj[i + 1][j] + traj[i][j]) / (dt * dt),
            };
            sq += (deriv * scale(j)).powi(2);
        }
        let n = sq.sqrt();
        acc = match p {
            SmoothnessOrder::L1 => acc + n * dt,
            SmoothnessOrder::L2 => acc + n * n * dt,
            SmoothnessOrder::Max => acc.max(n),
        };
    }
    Ok(match p {
        SmoothnessOrder::L2 => acc.sqrt(),
        _ => acc,
    })
}

/// Per-dimension `max − min` over a set of trajectories, floored away from 0.
pub fn data_ranges<'a>(trajs: impl Iterator<Item = &'a [Vec<f64>]>) -> Vec<f64> {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for t in trajs {
        for s in t {
            if lo.is_empty() {
                lo = s.clone();
                hi = s.clone();
            }
            for j in 0..s.len() {
                lo[j] = lo[j].min(s[j]);
                hi[j] = hi[j].max(s[j]);
            }
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(l, h)| (h - l).max(1e-12))
        .collect()
}
