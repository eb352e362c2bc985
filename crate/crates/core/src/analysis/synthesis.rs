//! Damped dynamics `F̂_γ(V) = F̂(V) − γ(V − V_eq)`.

use serde::{Deserialize, Serialize};

use super::spectrum::Matrix;
use crate::error::{check_len, Error, Result};
use crate::field::{integrate_batch, VectorField};

pub struct DampedField<F> {
    pub inner: F,
    pub v_eq: Vec<f64>,
    pub gamma: f64,
}

pub fn damped_field<F: VectorField>(inner: F, v_eq: &[f64], gamma: f64) -> Result<DampedField<F>> {
    check_len("equilibrium", inner.dim(), v_eq.len())?;
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!(
            "damping must be non-negative, got {gamma}"
        )));
    }
    Ok(DampedField {
        inner,
        v_eq: v_eq.to_vec(),
        gamma,
    })
}

impl<F: VectorField> VectorField for DampedField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.eval_into(v, out)?;
        for ((o, x), e) in out.iter_mut().zip(v).zip(&self.v_eq) {
            *o -= self.gamma * (x - e);
        }
        Ok(())
    }

    fn eval_batch(&self, vs: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.eval_batch(vs, out)?;
        let d = self.dim();
        for (i, (o, x)) in out.iter_mut().zip(vs).enumerate() {
            *o -= self.gamma * (x - self.v_eq[i % d]);
        }
        Ok(())
    }

    fn analytic_jacobian(&self, v: &[f64]) -> Option<Result<Matrix>> {
        self.inner.analytic_jacobian(v).map(|j| {
            j.map(|mut m| {
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] -= self.gamma;
                }
                m
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub gamma: f64,
    /// Mean distance to `V_eq` at the final sample.
    pub terminal_distance: f64,
    /// Mean distance to `V_eq` at every sample.
    pub mean_distance: Vec<f64>,
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

/// Integrate the damped field for each γ from every start.
pub fn synthesize<F: VectorField>(
    field: &F,
    v_eq: &[f64],
    gammas: &[f64],
    starts: &[Vec<f64>],
    dt: f64,
    n_samples: usize,
    substeps: usize,
) -> Result<Vec<SynthesisRun>> {
    let d = field.dim();
    let flat: Vec<f64> = starts.iter().flatten().copied().collect();
    if starts.is_empty() || flat.len() != starts.len() * d {
        return Err(Error::Config(
            "synthesis needs starts of the field dimension".into(),
        ));
    }
    gammas
        .iter()
        .map(|&g| {
            let damped = damped_field(field, v_eq, g)?;
            let out = integrate_batch(&damped, &flat, dt, n_samples, substeps)?;
            let mut mean_distance = Vec::with_capacity(n_samples);
            for s in 0..n_samples {
                let tot: f64 = (0..out.rows)
                    .map(|r| {
                        if out.diverged[r].is_some_and(|k| k <= s) {
                            f64::INFINITY
                        } else {
                            out.row(s, r)
                                .iter()
                                .zip(v_eq)
                                .map(|(a, b)| (a - b).powi(2))
                                .sum::<f64>()
                                .sqrt()
                        }
                    })
                    .sum();
                mean_distance.push(tot / out.rows as f64);
            }
            let trajectories = (0..out.rows)
                .map(|r| (0..n_samples).map(|s| out.row(s, r).to_vec()).collect())
                .collect();
            Ok(SynthesisRun {
                gamma: g,
                terminal_distance: *mean_distance.last().expect("n_samples >= 1"),
                mean_distance,
                trajectories,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LinearField;

    #[test]
    fn zero_damping_is_identity() {
        let f = LinearField::new(vec![vec![0.0, 1.0], vec![-4.0, 0.0]], vec![0.1, 0.0]).unwrap();
        let g = damped_field(&f, &[0.1, 0.0], 0.0).unwrap();
        assert_eq!(f.eval(&[0.5, 0.3]).unwrap(), g.eval(&[0.5, 0.3]).unwrap());
        let g = damped_field(&f, &[0.1, 0.0], 3.0).unwrap();
        assert_eq!(g.eval(&[0.1, 0.0]).unwrap(), f.eval(&[0.1, 0.0]).unwrap());
    }
}
