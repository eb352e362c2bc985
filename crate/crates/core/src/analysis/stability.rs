//! Lyapunov-style stability check by forward integration of perturbed starts.
//!
//! Distances are measured after dividing each coordinate by the data range,
//! and the tolerance levels are fractions of that range.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{integrate_batch, VectorField};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Random directions per radius.
    pub n_directions: usize,
    /// Radii per tolerance level, `j·ε/n_e` for `j = 1..=n_e`.
    pub n_radii: usize,
    /// Samples per integrated trajectory (T).
    pub horizon: usize,
    /// Tolerance levels as fractions of the range.
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub dt: f64,
    pub substeps: usize,
    /// Require at least `⌈n_radii/2⌉` samples inside the certified ball, so a
    /// vanishing `d*` cannot certify stability on its own.
    pub require_half: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StabilityConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self {
            n_directions: 10,
            n_radii: 10,
            horizon: 300,
            epsilons: vec![0.005, 0.01, 0.03, 0.05, 0.1],
            dt,
            substeps: 1,
            require_half: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_directions == 0
            || self.n_radii == 0
            || self.horizon < 2
            || self.epsilons.is_empty()
        {
            return Err(Error::Config(
                "stability check needs directions, radii, horizon >= 2 and levels".into(),
            ));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) || !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config(
                "stability levels, dt and substeps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonResult {
    pub epsilon: f64,
    pub passed: bool,
    /// Largest certified initial distance, if any.
    pub d_star: Option<f64>,
    /// `(d_ini, d_max)` per sample; diverged samples have `d_max = ∞`.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub stable: bool,
    pub per_epsilon: Vec<EpsilonResult>,
}

fn scaled_dist(a: &[f64], b: &[f64], ranges: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ranges)
        .map(|((x, y), r)| ((x - y) / r).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Largest `d_ini` such that every sample at or below it stays within `eps`,
/// provided at least `min_count` samples lie at or below it.
fn certify(samples: &mut [(f64, f64)], eps: f64, min_count: usize) -> Option<f64> {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut d_star = None;
    let mut admitted = 0;
    let mut i = 0;
    while i < samples.len() {
        // Samples sharing a radius are admitted together.
        let r = samples[i].0;
        let mut j = i;
        while j < samples.len() && samples[j].0 == r {
            j += 1;
        }
        if samples[i..j].iter().all(|s| s.1 < eps) {
            d_star = Some(r);
            admitted = j;
        } else {
            break;
        }
        i = j;
    }
    d_star.filter(|_| admitted >= min_count)
}

/// Certify `v_eq` stable iff every tolerance level passes.
pub fn check_stability<F: VectorField + ?Sized>(
    field: &F,
    v_eq: &[f64],
    ranges: &[f64],
    cfg: &StabilityConfig,
) -> Result<StabilityResult> {
    cfg.validate()?;
    let d = field.dim();
    check_len("equilibrium", d, v_eq.len())?;
    check_len("ranges", d, ranges.len())?;
    if ranges.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Degenerate(
            "data range must be positive in every dimension".into(),
        ));
    }
    let mut rng = rng_for(cfg.seed, "stability-directions");
    let mut starts = Vec::new();
    let mut d_ini = Vec::new();
    for &eps in &cfg.epsilons {
        for _ in 0..cfg.n_directions {
            let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            u.iter_mut().for_each(|x| *x /= n);
            for j in 1..=cfg.n_radii {
                let r = j as f64 * eps / cfg.n_radii as f64;
                for k in 0..d {
                    starts.push(v_eq[k] + ranges[k] * r * u[k]);
                }
                d_ini.push(r);
            }
        }
    }
    let out = integrate_batch(field, &starts, cfg.dt, cfg.horizon, cfg.substeps)?;
    let rows = out.rows;
    let mut d_max = vec![0.0f64; rows];
    for s in 0..cfg.horizon {
        for (r, dm) in d_max.iter_mut().enumerate() {
            let dist = scaled_dist(out.row(s, r), v_eq, ranges);
            *dm = dm.max(dist);
        }
    }
    for (r, dv) in out.diverged.iter().enumerate() {
        if dv.is_some() {
            d_max[r] = f64::INFINITY;
        }
    }
    let per_level = cfg.n_directions * cfg.n_radii;
    let mut per_epsilon = Vec::with_capacity(cfg.epsilons.len());
    for (li, &eps) in cfg.epsilons.iter().enumerate() {
        let mut samples: Vec<(f64, f64)> = (li * per_level..(li + 1) * per_level)
            .map(|r| (d_ini[r], d_max[r]))
            .collect();
        let min_count = if cfg.require_half {
            cfg.n_radii.div_ceil(2)
        } else {
            1
        };
        let d_star = certify(&mut samples, eps, min_count);
        per_epsilon.push(EpsilonResult {
            epsilon: eps,
            passed: d_star.is_some(),
            d_star,
            samples,
        });
    }
    Ok(StabilityResult {
        stable: per_epsilon.iter().all(|e| e.passed),
        per_epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LinearField;

    fn diag(a: f64, b: f64) -> LinearField {
        LinearField::new(vec![vec![a, 0.0], vec![0.0, b]], vec![0.2, -0.1]).unwrap()
    }

    #[test]
    fn contraction_is_stable() {
        let r = check_stability(
            &diag(-1.0, -1.0),
            &[0.2, -0.1],
            &[2.0, 2.0],
            &StabilityConfig::new(1.0 / 60.0, 1),
        )
        .unwrap();
        assert!(r.stable);
    }

    #[test]
    fn expansion_is_unstable() {
        let r = check_stability(
            &diag(1.0, 1.0),
            &[0.2, -0.1],
            &[2.0, 2.0],
            &StabilityConfig::new(1.0 / 60.0, 1),
        )
        .unwrap();
        assert!(!r.stable);
        assert!(r.per_epsilon.iter().all(|e| !e.passed));
    }

    #[test]
    fn saddle_is_unstable() {
        let r = check_stability(
            &diag(-1.0, 1.0),
            &[0.2, -0.1],
            &[2.0, 2.0],
            &StabilityConfig::new(1.0 / 60.0, 1),
        )
        .unwrap();
        assert!(!r.stable);
    }
}
