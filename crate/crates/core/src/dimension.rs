//! Levina–Bickel maximum-likelihood intrinsic dimension.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub raw: f64,
    pub rounded: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// `(k, mean estimate over points)` for every k in range.
    pub per_k: Vec<(usize, f64)>,
    pub n_points: usize,
    /// Zero-distance neighbor pairs that were skipped.
    pub excluded_pairs: usize,
}

/// Sorted distances to the `k` nearest other points of each point, ties
/// broken by index. Exact brute force.
pub fn nearest_neighbors(points: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    Ok(neighbors_skipping_duplicates(points, k, false)?.0)
}

/// Like [`nearest_neighbors`], optionally skipping neighbors at distance 0.
/// Returns the neighbor lists and the number of skipped pairs.
fn neighbors_skipping_duplicates(
    points: &[Vec<f64>],
    k: usize,
    skip_zero: bool,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = points.len();
    if k >= n {
        return Err(Error::Config(format!(
            "k = {k} must be below the number of points {n}"
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Config("points have inconsistent dimension".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if skip_zero && d2 == 0.0 {
                skipped += 1;
                continue;
            }
            cand.push((d2, j));
        }
        let take = k.min(cand.len());
        if take == 0 {
            out.push(Vec::new());
            continue;
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if take < cand.len() {
            cand.select_nth_unstable_by(take - 1, cmp);
        }
        let mut best = cand[..take].to_vec();
        best.sort_by(cmp);
        out.push(best.into_iter().map(|(d2, _)| d2.sqrt()).collect());
    }
    Ok((out, skipped / 2))
}

/// Intrinsic dimension averaged over points and over `k ∈ [k_min, k_max]`.
pub fn levina_bickel(points: &[Vec<f64>], k_min: usize, k_max: usize) -> Result<DimensionEstimate> {
    if k_min < 3 || k_max < k_min {
        return Err(Error::Config(format!(
            "need 3 <= k_min <= k_max, got [{k_min}, {k_max}]"
        )));
    }
    if points.len() <= k_max + 1 {
        return Err(Error::Config(format!(
            "need more than k_max + 1 = {} points, got {}",
            k_max + 1,
            points.len()
        )));
    }
    let (nn, excluded) = neighbors_skipping_duplicates(points, k_max, true)?;
    if excluded > 0 {
        log::warn!("levina-bickel: skipped {excluded} duplicate neighbor pairs");
    }
    let usable: Vec<&Vec<f64>> = nn.iter().filter(|d| d.len() == k_max).collect();
    if usable.is_empty() {
        return Err(Error::Degenerate("all points are duplicates".into()));
    }
    let mut per_k = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let mut total = 0.0;
        for d in &usable {
            let tk = d[k - 1];
            let s: f64 = d[..k - 1].iter().map(|tj| (tk / tj).ln()).sum();
            total += (k as f64 - 2.0) / s;
        }
        per_k.push((k, total / usable.len() as f64));
    }
    let raw = per_k.iter().map(|(_, m)| m).sum::<f64>() / per_k.len() as f64;
    if !(raw > 0.0 && raw.is_finite()) {
        return Err(Error::Degenerate(format!(
            "estimate is not positive: {raw}"
        )));
    }
    Ok(DimensionEstimate {
        raw,
        rounded: raw.round() as usize,
        k_min,
        k_max,
        per_k,
        n_points: usable.len(),
        excluded_pairs: excluded,
    })
}

/// [`levina_bickel`] on at most `cap` points drawn without replacement.
pub fn levina_bickel_capped(
    points: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    cap: usize,
    seed: u64,
) -> Result<DimensionEstimate> {
    if points.len() <= cap {
        return levina_bickel(points, k_min, k_max);
    }
    let mut rng = rng_for(seed, "dimension-subsample");
    let mut idx = sample(&mut rng, points.len(), cap).into_vec();
    idx.sort_unstable();
    let sub: Vec<Vec<f64>> = idx.into_iter().map(|i| points[i].clone()).collect();
    levina_bickel(&sub, k_min, k_max)
}
