//! Equilibrium search: candidates from data (and a grid in higher
//! dimensions), damped Newton refinement, deduplication and stability.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::spectrum::{
    eigenvalues_small, jacobian_at, natural_frequencies, JacobianMethod, Matrix,
};
use super::stability::{check_stability, StabilityConfig, StabilityResult};
use crate::error::{check_len, Error, Result};
use crate::field::VectorField;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    Data,
    Grid,
    TailAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    /// Lowest-‖F̂‖ candidates taken from each source (C).
    pub candidates: usize,
    /// Grid points per dimension, used when `d > 2`.
    pub grid_size: usize,
    pub grid_cap: usize,
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    /// Roots closer than this fraction of the range are merged.
    pub merge_fraction: f64,
    pub jacobian: JacobianMethod,
    pub fd_step: f64,
    /// Imaginary parts below this are treated as real.
    pub frequency_tolerance: f64,
    pub stability: StabilityConfig,
}

impl EquilibriumConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self {
            candidates: 10,
            grid_size: 10,
            grid_cap: 10_000,
            newton_tolerance: 1e-8,
            newton_max_iterations: 100,
            merge_fraction: 0.01,
            jacobian: JacobianMethod::Analytic,
            fd_step: 1e-4,
            frequency_tolerance: 1e-6,
            stability: StabilityConfig::new(dt, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub v_eq: Vec<f64>,
    pub stable: bool,
    pub stability: StabilityResult,
    pub residual: f64,
    pub source: CandidateSource,
    pub jacobian: Matrix,
    pub eigenvalues: Vec<Complex64>,
    pub frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub equilibria: Vec<EquilibriumReport>,
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl EquilibriumSearch {
    /// The stable equilibrium with the smallest residual.
    pub fn primary_stable(&self) -> Option<&EquilibriumReport> {
        self.equilibria
            .iter()
            .filter(|e| e.stable)
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
    }
}

/// Mean of the last `n_tail` states of each trajectory.
pub fn tail_average_candidates(trajs: &[&[Vec<f64>]], n_tail: usize) -> Result<Vec<Vec<f64>>> {
    trajs
        .iter()
        .map(|t| {
            if n_tail == 0 || n_tail > t.len() {
                return Err(Error::Config(format!(
                    "tail of {n_tail} does not fit a trajectory of length {}",
                    t.len()
                )));
            }
            let d = t[0].len();
            let mut m = vec![0.0; d];
            for s in &t[t.len() - n_tail..] {
                for j in 0..d {
                    m[j] += s[j] / n_tail as f64;
                }
            }
            Ok(m)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton with Armijo backtracking on `½‖F‖²`.
pub fn newton_root<F: VectorField + ?Sized>(
    field: &F,
    start: &[f64],
    cfg: &EquilibriumConfig,
) -> Result<(Vec<f64>, f64)> {
    let d = field.dim();
    let mut v = start.to_vec();
    let mut f = field.eval(&v)?;
    let mut fnorm = norm(&f);
    for _ in 0..cfg.newton_max_iterations {
        if fnorm < cfg.newton_tolerance {
            break;
        }
        let j = jacobian_at(field, &v, cfg.jacobian, cfg.fd_step)
            .or_else(|_| jacobian_at(field, &v, JacobianMethod::CentralFd, cfg.fd_step))?;
        let jm = DMatrix::from_fn(d, d, |r, c| j[r][c]);
        let rhs = DVector::from_iterator(d, f.iter().map(|x| -x));
        let step = match jm.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => jm
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::NoConvergence(e.to_string()))?,
        };
        let phi0 = 0.5 * fnorm * fnorm;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ft = field.eval(&trial)?;
            let nt = norm(&ft);
            if nt.is_finite() && 0.5 * nt * nt <= (1.0 - 2e-4 * t) * phi0 {
                v = trial;
                f = ft;
                fnorm = nt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((v, fnorm))
}

/// Locate equilibria of `field` near the states in `data`.
pub fn find_equilibria<F: VectorField + ?Sized>(
    field: &F,
    data: &[&[Vec<f64>]],
    extra: &[(Vec<f64>, CandidateSource)],
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumSearch> {
    let d = field.dim();
    let states: Vec<&Vec<f64>> = data.iter().flat_map(|t| t.iter()).collect();
    if states.is_empty() {
        return Err(Error::Degenerate("no data states".into()));
    }
    let mut lo = states[0].clone();
    let mut hi = states[0].clone();
    for s in &states {
        check_len("data state", d, s.len())?;
        for j in 0..d {
            lo[j] = lo[j].min(s[j]);
            hi[j] = hi[j].max(s[j]);
        }
    }
    let ranges: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| (h - l).max(1e-12))
        .collect();

    let lowest = |pts: Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let mut out = vec![0.0; flat.len()];
        field.eval_batch(&flat, &mut out)?;
        let mut scored: Vec<(f64, usize)> = out.chunks(d).map(norm).zip(0..).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(cfg.candidates)
            .map(|(_, i)| pts[i].clone())
            .collect())
    };

    let mut candidates: Vec<(Vec<f64>, CandidateSource)> =
        lowest(states.iter().map(|s| (*s).clone()).collect())?
            .into_iter()
            .map(|c| (c, CandidateSource::Data))
            .collect();
    if d > 2 {
        let total = (cfg.grid_size as f64).powi(d as i32);
        let n_total = total.min(usize::MAX as f64) as usize;
        let idx: Vec<usize> = if n_total > cfg.grid_cap {
            let mut rng = rng_for(cfg.stability.seed, "equilibrium-grid");
            let mut v = sample(&mut rng, n_total, cfg.grid_cap).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n_total).collect()
        };
        let g = cfg.grid_size.max(2);
        let pts: Vec<Vec<f64>> = idx
            .into_iter()
            .map(|mut k| {
                (0..d)
                    .map(|j| {
                        let i = k % cfg.grid_size;
                        k /= cfg.grid_size;
                        lo[j] + (hi[j] - lo[j]) * i as f64 / (g - 1) as f64
                    })
                    .collect()
            })
            .collect();
        candidates.extend(lowest(pts)?.into_iter().map(|c| (c, CandidateSource::Grid)));
    }
    candidates.extend(extra.iter().cloned());

    let mut diagnostics = Vec::new();
    let mut roots: Vec<(Vec<f64>, f64, CandidateSource)> = Vec::new();
    for (c, src) in candidates {
        let (r, res) = newton_root(field, &c, cfg)?;
        if !(res < cfg.newton_tolerance) {
            diagnostics.push(format!("candidate {c:?} stalled at residual {res:.3e}"));
            continue;
        }
        if r.iter()
            .zip(lo.iter().zip(&hi))
            .any(|(x, (l, h))| x < l || x > h)
        {
            diagnostics.push(format!("root {r:?} lies outside the data bounds"));
            continue;
        }
        let dup = roots.iter().any(|(q, _, _)| {
            q.iter()
                .zip(&r)
                .zip(&ranges)
                .map(|((a, b), w)| ((a - b) / w).powi(2))
                .sum::<f64>()
                .sqrt()
                < cfg.merge_fraction
        });
        if !dup {
            roots.push((r, res, src));
        }
    }
    if roots.is_empty() {
        diagnostics.push("no candidate converged to a root inside the data bounds".into());
    }

    let mut equilibria = Vec::with_capacity(roots.len());
    for (v, residual, source) in roots {
        let stability = check_stability(field, &v, &ranges, &cfg.stability)?;
        let jacobian = jacobian_at(field, &v, cfg.jacobian, cfg.fd_step)
            .or_else(|_| jacobian_at(field, &v, JacobianMethod::CentralFd, cfg.fd_step))?;
        let eigenvalues = if d <= 4 {
            eigenvalues_small(&jacobian)?
        } else {
            Vec::new()
        };
        let frequencies = natural_frequencies(&eigenvalues, cfg.frequency_tolerance);
        equilibria.push(EquilibriumReport {
            v_eq: v,
            stable: stability.stable,
            stability,
            residual,
            source,
            jacobian,
            eigenvalues,
            frequencies,
        });
    }
    Ok(EquilibriumSearch {
        equilibria,
        bounds_lo: lo,
        bounds_hi: hi,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_average_of_constant() {
        let t = vec![vec![0.4, -0.2]; 12];
        let c = tail_average_candidates(&[&t], 10).unwrap();
        assert!((c[0][0] - 0.4).abs() < 1e-15 && (c[0][1] + 0.2).abs() < 1e-15);
        assert!(tail_average_candidates(&[&t], 13).is_err());
    }
}
