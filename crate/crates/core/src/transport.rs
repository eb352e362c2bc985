//! Entropic optimal transport between uniformly weighted point clouds.
//!
//! Point sets are flat row-major buffers of `n × dim` values. The cost is the
//! squared Euclidean distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization.
    pub blur: f64,
    pub max_iterations: usize,
    /// Stop once no dual potential moves by more than this.
    pub tolerance: f64,
    /// Subtract the two self-transport terms.
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            blur: 0.05,
            max_iterations: 1000,
            tolerance: 1e-9,
            debiased: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "sinkhorn blur must be positive and iterations at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutput {
    pub value: f64,
    /// Gradient of the value with respect to the first point set.
    pub gradient: Vec<f64>,
    /// False when some inner problem hit the iteration cap.
    pub converged: bool,
    pub iterations: usize,
}

/// Converged dual problem between `x` and `y`.
struct Plan {
    value: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn cost_matrix(x: &[f64], y: &[f64], dim: usize) -> Vec<f64> {
    let (n, m) = (x.len() / dim, y.len() / dim);
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        for j in 0..m {
            c.push(sq_dist(xi, &y[j * dim..(j + 1) * dim]));
        }
    }
    c
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic OT with uniform weights. Uses multiplicative kernel updates when
/// the kernel cannot underflow and log-domain updates otherwise.
fn solve(c: &[f64], n: usize, m: usize, cfg: &SinkhornConfig) -> Plan {
    let eps = cfg.blur;
    let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
    let cmax = c.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    if cmax / eps < 500.0 {
        let k: Vec<f64> = c.iter().map(|&v| (-v / eps).exp()).collect();
        let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
        let mut u = vec![a; n];
        let mut v = vec![b; m];
        for it in 0..cfg.max_iterations {
            iterations = it + 1;
            for j in 0..m {
                let s: f64 = (0..n).map(|i| k[i * m + j] * u[i]).sum();
                v[j] = b / s;
            }
            let mut delta = 0.0f64;
            for i in 0..n {
                let s: f64 = k[i * m..(i + 1) * m]
                    .iter()
                    .zip(&v)
                    .map(|(kk, vv)| kk * vv)
                    .sum();
                u[i] = a / s;
                let fi = eps * (u[i] / a).ln();
                delta = delta.max((fi - f[i]).abs());
                f[i] = fi;
            }
            if delta < cfg.tolerance && it > 0 {
                converged = true;
                break;
            }
        }
        for j in 0..m {
            g[j] = eps * (v[j] / b).ln();
        }
    } else {
        for it in 0..cfg.max_iterations {
            iterations = it + 1;
            for j in 0..m {
                g[j] = -eps * logsumexp((0..n).map(|i| la + (f[i] - c[i * m + j]) / eps));
            }
            let mut delta = 0.0f64;
            for i in 0..n {
                let fi = -eps * logsumexp((0..m).map(|j| lb + (g[j] - c[i * m + j]) / eps));
                delta = delta.max((fi - f[i]).abs());
                f[i] = fi;
            }
            if delta < cfg.tolerance && it > 0 {
                converged = true;
                break;
            }
        }
    }
    let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Plan {
        value,
        f,
        g,
        converged,
        iterations,
    }
}

/// Solve OT(x, y) in a canonical orientation so that swapping the arguments
/// replays the same iterations on the transposed problem. The last iterate,
/// and hence the value, is then symmetric even when the cap is hit.
fn solve_oriented(
    x: &[f64],
    y: &[f64],
    c: &[f64],
    n: usize,
    m: usize,
    dim: usize,
    cfg: &SinkhornConfig,
) -> Plan {
    let swap = match n.cmp(&m) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => x
            .iter()
            .zip(y)
            .find(|(a, b)| a != b)
            .is_some_and(|(a, b)| a > b),
    };
    if !swap {
        return solve(c, n, m, cfg);
    }
    let ct = cost_matrix(y, x, dim);
    let p = solve(&ct, m, n, cfg);
    Plan {
        value: p.value,
        f: p.g,
        g: p.f,
        converged: p.converged,
        iterations: p.iterations,
    }
}

/// Add `scale · Σ_j π_ij · 2(x_i − y_j)` into `grad`.
fn add_plan_gradient(
    plan: &Plan,
    c: &[f64],
    x: &[f64],
    y: &[f64],
    dim: usize,
    eps: f64,
    scale: f64,
    grad: &mut [f64],
) {
    let (n, m) = (x.len() / dim, y.len() / dim);
    let lw = -((n * m) as f64).ln();
    for i in 0..n {
        for j in 0..m {
            let p = (lw + (plan.f[i] + plan.g[j] - c[i * m + j]) / eps).exp();
            if p == 0.0 {
                continue;
            }
            for k in 0..dim {
                grad[i * dim + k] += scale * p * 2.0 * (x[i * dim + k] - y[j * dim + k]);
            }
        }
    }
}

fn check_cloud(name: &str, pts: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || pts.is_empty() || pts.len() % dim != 0 {
        return Err(Error::Config(format!(
            "point set {name} must be a non-empty multiple of dimension {dim}"
        )));
    }
    if pts.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!(
            "point set {name} has non-finite entries"
        )));
    }
    Ok(pts.len() / dim)
}

/// Sinkhorn divergence between `a` and `b` and its gradient with respect to
/// `a`, taken at the converged potentials.
pub fn sinkhorn_divergence(
    a: &[f64],
    b: &[f64],
    dim: usize,
    cfg: &SinkhornConfig,
) -> Result<SinkhornOutput> {
    cfg.validate()?;
    let n = check_cloud("A", a, dim)?;
    let m = check_cloud("B", b, dim)?;
    let cab = cost_matrix(a, b, dim);
    let ab = solve_oriented(a, b, &cab, n, m, dim, cfg);
    let mut gradient = vec![0.0; a.len()];
    add_plan_gradient(&ab, &cab, a, b, dim, cfg.blur, 1.0, &mut gradient);
    let mut value = ab.value;
    let mut converged = ab.converged;
    let mut iterations = ab.iterations;
    if cfg.debiased {
        let caa = cost_matrix(a, a, dim);
        let aa = solve(&caa, n, n, cfg);
        let cbb = cost_matrix(b, b, dim);
        let bb = solve(&cbb, m, m, cfg);
        value -= 0.5 * (aa.value + bb.value);
        // `a` enters both arguments of OT(a, a), which doubles its gradient.
        add_plan_gradient(&aa, &caa, a, a, dim, cfg.blur, -1.0, &mut gradient);
        converged &= aa.converged && bb.converged;
        iterations = iterations.max(aa.iterations).max(bb.iterations);
    }
    if !converged {
        log::warn!(
            "sinkhorn hit the iteration cap ({}); using last iterate",
            cfg.max_iterations
        );
    }
    Ok(SinkhornOutput {
        value,
        gradient,
        converged,
        iterations,
    })
}

/// How reference samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    SeededUniform,
}

/// `n` seeded uniform samples in `[-1, 1]^d`, flat row-major.
pub fn uniform_reference(d: usize, n: usize, seed: u64) -> (Vec<f64>, ReferenceKind) {
    let mut rng = rng_for(seed, "uniform-reference");
    let pts = (0..d * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    (pts, ReferenceKind::SeededUniform)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_divergence_vanishes() {
        let (a, _) = uniform_reference(2, 20, 4);
        let out = sinkhorn_divergence(&a, &a, 2, &SinkhornConfig::default()).unwrap();
        assert!(out.value.abs() < 1e-8);
    }

    #[test]
    fn singletons_give_cost() {
        let out =
            sinkhorn_divergence(&[0.1, 0.2], &[0.5, -0.3], 2, &SinkhornConfig::default()).unwrap();
        assert!((out.value - (0.16 + 0.25)).abs() < 1e-6);
        assert!((out.gradient[0] - 2.0 * (0.1 - 0.5)).abs() < 1e-6);
    }

    #[test]
    fn log_domain_branch_is_used_for_small_blur() {
        let cfg = SinkhornConfig {
            blur: 1e-3,
            max_iterations: 20000,
            ..Default::default()
        };
        let out = sinkhorn_divergence(&[0.0, 1.0], &[1.0, 2.0], 1, &cfg).unwrap();
        assert!((out.value - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_ragged_input() {
        assert!(
            sinkhorn_divergence(&[0.0, 1.0, 2.0], &[0.0, 1.0], 2, &SinkhornConfig::default())
                .is_err()
        );
    }
}
