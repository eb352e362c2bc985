//! Fixed-step classical Runge–Kutta kernels.

use crate::error::{Error, Result};

/// Scratch buffers for one RK4 step of an `n`-dimensional system.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Advance `y` in place by one RK4 step of size `h`.
///
/// The state slice may hold several independent systems side by side; `f`
/// sees the whole slice, which is how batched fields are stepped.
pub fn rk4_step<F>(f: &mut F, y: &mut [f64], h: f64, ws: &mut Rk4Workspace) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    if ws.k1.len() != n {
        *ws = Rk4Workspace::new(n);
    }
    f(y, &mut ws.k1)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * h * ws.k1[i];
    }
    f(&ws.tmp, &mut ws.k2)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * h * ws.k2[i];
    }
    f(&ws.tmp, &mut ws.k3)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + h * ws.k3[i];
    }
    f(&ws.tmp, &mut ws.k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
    Ok(())
}

/// Integrate from `y0`, returning `n_samples` states spaced `dt` apart
/// (the first one is `y0`). Each interval uses `substeps` RK4 steps.
pub fn integrate<F>(
    mut f: F,
    y0: &[f64],
    dt: f64,
    n_samples: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    validate_grid(dt, n_samples, substeps)?;
    let h = dt / substeps as f64;
    let mut ws = Rk4Workspace::new(y0.len());
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(n_samples);
    out.push(y.clone());
    for step in 1..n_samples {
        for _ in 0..substeps {
            rk4_step(&mut f, &mut y, h, &mut ws)?;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        out.push(y.clone());
    }
    Ok(out)
}

pub(crate) fn validate_grid(dt: f64, n_samples: usize, substeps: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    if n_samples < 1 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if substeps < 1 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    Ok(())
}
