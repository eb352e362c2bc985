//! Divergence of nearby trajectories, coverage of the state domain and a
//! two-class split of coverage rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::rng_for;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `‖A(t) − B(t)‖ / ‖A(0) − B(0)‖`.
pub fn divergence_series(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_len("divergence trajectories", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Degenerate("empty trajectories".into()));
    }
    let d0 = dist(&a[0], &b[0]);
    if !(d0 > 0.0) {
        return Err(Error::Degenerate(
            "trajectories start at the same state".into(),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| dist(x, y) / d0).collect())
}

/// Fraction of the `n_bins^d` boxes of `[-1, 1]^d` visited up to each sample.
/// Out-of-domain states are clamped to the boundary boxes.
pub fn coverage_series(traj: &[Vec<f64>], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(Error::Config("need at least one bin".into()));
    }
    let d = traj.first().map_or(0, |s| s.len());
    let total = (n_bins as f64).powi(d as i32);
    let mut seen = std::collections::HashSet::new();
    let mut clamped = 0usize;
    let mut out = Vec::with_capacity(traj.len());
    for s in traj {
        check_len("coverage state", d, s.len())?;
        let key: Vec<usize> = s
            .iter()
            .map(|&x| {
                let u = (x + 1.0) / 2.0 * n_bins as f64;
                if !(0.0..=n_bins as f64).contains(&u) {
                    clamped += 1;
                }
                (u.floor().max(0.0) as usize).min(n_bins - 1)
            })
            .collect();
        seen.insert(key);
        out.push(seen.len() as f64 / total);
    }
    if clamped > 0 {
        log::warn!("coverage: clamped {clamped} coordinates outside [-1, 1]");
    }
    Ok(out)
}

/// `(c(T) − c(0)) / T` with T the number of steps.
pub fn coverage_increase_rate(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Config(
            "coverage series needs at least 2 samples".into(),
        ));
    }
    Ok((series[series.len() - 1] - series[0]) / (series.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans2 {
    /// Lower centroid first.
    pub centroids: [f64; 2],
    pub threshold: f64,
    pub inertia: f64,
}

impl KMeans2 {
    pub fn is_high(&self, v: f64) -> bool {
        v > self.threshold
    }
}

/// One-dimensional two-means, best of ten seeded restarts by inertia.
pub fn kmeans_2(values: &[f64]) -> Result<KMeans2> {
    let first = *values
        .first()
        .ok_or_else(|| Error::Degenerate("no values to cluster".into()))?;
    if values.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("all values are identical".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rng = rng_for(0, "kmeans-restarts");
    let mut best: Option<KMeans2> = None;
    for _ in 0..10 {
        let (mut a, mut b);
        loop {
            a = sorted[rng.random_range(0..sorted.len())];
            b = sorted[rng.random_range(0..sorted.len())];
            if a != b {
                break;
            }
        }
        let (mut c0, mut c1) = (a.min(b), a.max(b));
        for _ in 0..100 {
            let mid = 0.5 * (c0 + c1);
            let (lo, hi): (Vec<f64>, Vec<f64>) = sorted.iter().partition(|&&v| v <= mid);
            if lo.is_empty() || hi.is_empty() {
                break;
            }
            let n0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let n1 = hi.iter().sum::<f64>() / hi.len() as f64;
            if n0 == c0 && n1 == c1 {
                break;
            }
            c0 = n0;
            c1 = n1;
        }
        let threshold = 0.5 * (c0 + c1);
        let inertia = sorted
            .iter()
            .map(|&v| {
                if v <= threshold {
                    (v - c0).powi(2)
                } else {
                    (v - c1).powi(2)
                }
            })
            .sum();
        let cand = KMeans2 {
            centroids: [c0, c1],
            threshold,
            inertia,
        };
        if best.as_ref().is_none_or(|b| cand.inertia < b.inertia) {
            best = Some(cand);
        }
    }
    Ok(best.expect("ten restarts ran"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChaosClass {
    Regular,
    Chaotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub n_bins: usize,
    /// Near pairs start closer than this fraction of the range.
    pub near_fraction: f64,
    pub histogram_bins: usize,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self {
            n_bins: 10,
            near_fraction: 0.01,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearPair {
    pub a: usize,
    pub b: usize,
    pub class: ChaosClass,
    pub divergence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub coverage_rates: Vec<f64>,
    pub kmeans: KMeans2,
    pub classes: Vec<ChaosClass>,
    pub near_pairs: Vec<NearPair>,
    pub notes: Vec<String>,
    /// Final-sample mean divergence per class `[regular, chaotic]`.
    pub final_divergence: [Option<f64>; 2],
    /// Mean distance to the equilibrium in percent of the range, per class.
    pub mean_distance_to_equilibrium: [Option<f64>; 2],
    pub distance_histograms: [Histogram; 2],
}

fn scaled_pct(a: &[f64], b: &[f64], ranges: &[f64]) -> f64 {
    100.0
        * a.iter()
            .zip(b)
            .zip(ranges)
            .map(|((x, y), r)| ((x - y) / r).powi(2))
            .sum::<f64>()
            .sqrt()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Classify trajectories by coverage rate and assemble divergence and
/// distance statistics. `ranges` normalizes distances per dimension.
pub fn chaos_report(
    trajs: &[&[Vec<f64>]],
    v_eq: &[f64],
    ranges: &[f64],
    cfg: &ChaosConfig,
) -> Result<ChaosReport> {
    if trajs.len() < 2 {
        return Err(Error::Degenerate("need at least two trajectories".into()));
    }
    let d = v_eq.len();
    check_len("ranges", d, ranges.len())?;
    let len = trajs[0].len();
    if trajs.iter().any(|t| t.len() != len) {
        return Err(Error::Config("trajectories must share their length".into()));
    }
    let coverage_rates = trajs
        .iter()
        .map(|t| coverage_increase_rate(&coverage_series(t, cfg.n_bins)?))
        .collect::<Result<Vec<_>>>()?;
    let kmeans = kmeans_2(&coverage_rates)?;
    let classes: Vec<ChaosClass> = coverage_rates
        .iter()
        .map(|&r| {
            if kmeans.is_high(r) {
                ChaosClass::Chaotic
            } else {
                ChaosClass::Regular
            }
        })
        .collect();
    let idx = |c: ChaosClass| (c == ChaosClass::Chaotic) as usize;

    let mut near_pairs = Vec::new();
    let mut notes = Vec::new();
    for a in 0..trajs.len() {
        for b in a + 1..trajs.len() {
            let d0 = scaled_pct(&trajs[a][0], &trajs[b][0], ranges) / 100.0;
            if d0 > 0.0 && d0 < cfg.near_fraction {
                near_pairs.push(NearPair {
                    a,
                    b,
                    class: classes[a],
                    divergence: divergence_series(trajs[a], trajs[b])?,
                });
            }
        }
    }
    if near_pairs.is_empty() {
        notes.push("no near pairs found; divergence section is empty".into());
    }
    let mut final_div: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for p in &near_pairs {
        final_div[idx(p.class)].push(*p.divergence.last().expect("non-empty"));
    }

    let mut dists: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut per_traj: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (t, &c) in trajs.iter().zip(&classes) {
        let ds: Vec<f64> = t.iter().map(|s| scaled_pct(s, v_eq, ranges)).collect();
        per_traj[idx(c)].push(mean(&ds).unwrap_or(0.0));
        dists[idx(c)].extend(ds);
    }
    let max_d = dists
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1e-12);
    let nb = cfg.histogram_bins.max(1);
    let edges: Vec<f64> = (0..=nb).map(|i| max_d * i as f64 / nb as f64).collect();
    let hist = |v: &[f64]| {
        let mut counts = vec![0usize; nb];
        for &x in v {
            counts[((x / max_d * nb as f64) as usize).min(nb - 1)] += 1;
        }
        Histogram {
            edges: edges.clone(),
            counts,
        }
    };
    Ok(ChaosReport {
        coverage_rates,
        kmeans,
        final_divergence: [mean(&final_div[0]), mean(&final_div[1])],
        mean_distance_to_equilibrium: [mean(&per_traj[0]), mean(&per_traj[1])],
        distance_histograms: [hist(&dists[0]), hist(&dists[1])],
        classes,
        near_pairs,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_examples() {
        let k = kmeans_2(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0]).unwrap();
        assert_eq!(k.centroids, [0.0, 10.0]);
        assert_eq!(k.threshold, 5.0);
        assert!(kmeans_2(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn coverage_counts_boxes() {
        let t = vec![vec![0.05, 0.05]; 5];
        let c = coverage_series(&t, 10).unwrap();
        assert!(c.iter().all(|&v| v == 0.01));
        let t = vec![vec![-0.95, -0.95], vec![0.05, 0.05], vec![0.95, 0.95]];
        assert!((coverage_series(&t, 10).unwrap()[2] - 0.03).abs() < 1e-12);
        assert_eq!(coverage_increase_rate(&[0.2, 0.2, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn identical_starts_rejected() {
        let a = vec![vec![0.0], vec![1.0]];
        assert!(divergence_series(&a, &a).is_err());
    }
}
