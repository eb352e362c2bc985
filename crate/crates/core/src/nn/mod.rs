//! Dense MLP kernel: batched forward pass, reverse-mode gradients, exact
//! Jacobians and Adam.
//!
//! Parameters live in one flat vector; for each layer the row-major weight
//! matrix (`outputs × inputs`) is followed by its bias.

mod adam;
mod gemm;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
use gemm::{gemm, View};

use crate::error::{check_len, Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
    Relu,
    #[serde(rename = "none")]
    Identity,
}

impl Activation {
    fn tag(self) -> char {
        match self {
            Activation::Sine => 's',
            Activation::Relu => 'r',
            Activation::Identity => 'n',
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sine => z.sin(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sine => z.cos(),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }
}

/// Specs for a chain of widths, with `hidden` on every layer but the last.
pub fn chain(widths: &[usize], hidden: Activation, last: Activation) -> Vec<LayerSpec> {
    let n = widths.len().saturating_sub(1);
    (0..n)
        .map(|i| {
            LayerSpec::new(
                widths[i],
                widths[i + 1],
                if i + 1 == n { last } else { hidden },
            )
        })
        .collect()
}

/// Compact architecture string, e.g. `64-128s-2n`.
pub fn fingerprint(specs: &[LayerSpec]) -> String {
    let mut s = specs
        .first()
        .map(|l| l.inputs.to_string())
        .unwrap_or_default();
    for l in specs {
        s.push('-');
        s.push_str(&l.outputs.to_string());
        s.push(l.activation.tag());
    }
    s
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("an MLP needs at least one layer".into()));
    }
    for (i, l) in specs.iter().enumerate() {
        if l.inputs == 0 || l.outputs == 0 {
            return Err(Error::Config(format!("layer {i} has zero width")));
        }
        if i > 0 && specs[i - 1].outputs != l.inputs {
            return Err(Error::Config(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                l.inputs,
                i - 1,
                specs[i - 1].outputs
            )));
        }
    }
    Ok(())
}

/// Initialization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Frequency scale of the first sine layer.
    pub omega0: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { omega0: 30.0 }
    }
}

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: Vec<f64>,
    #[serde(skip, default = "next_stamp")]
    stamp: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            params: self.params.clone(),
            stamp: self.stamp,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs && self.params == other.params
    }
}

fn param_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(|l| l.outputs * (l.inputs + 1)).sum()
}

impl Mlp {
    /// Seeded initialization. The first sine layer draws weights from
    /// `U(±ω0/fan_in)`, later sine layers and ReLU layers from
    /// `U(±√(6/fan_in))`, linear layers from `U(±√(3/fan_in))`; biases from
    /// `U(±1/√fan_in)`.
    pub fn new(specs: &[LayerSpec], seed: u64, init: &InitConfig) -> Result<Self> {
        let mut m = Self::zeros(specs)?;
        let mut rng = rng_for(seed, "mlp-init");
        let mut off = 0;
        for (i, l) in specs.iter().enumerate() {
            let fan_in = l.inputs as f64;
            let bound = match l.activation {
                Activation::Sine if i == 0 => init.omega0 / fan_in,
                Activation::Sine | Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Identity => (3.0 / fan_in).sqrt(),
            };
            let nw = l.inputs * l.outputs;
            for p in &mut m.params[off..off + nw] {
                *p = rng.random_range(-bound..=bound);
            }
            off += nw;
            let bb = 1.0 / fan_in.sqrt();
            for p in &mut m.params[off..off + l.outputs] {
                *p = rng.random_range(-bb..=bb);
            }
            off += l.outputs;
        }
        Ok(m)
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_chain(specs)?;
        Ok(Self {
            specs: specs.to_vec(),
            params: vec![0.0; param_count(specs)],
            stamp: next_stamp(),
        })
    }

    pub fn from_flat(specs: &[LayerSpec], params: Vec<f64>) -> Result<Self> {
        validate_chain(specs)?;
        check_len("flat parameters", param_count(specs), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Degenerate("non-finite parameter".into()));
        }
        Ok(Self {
            specs: specs.to_vec(),
            params,
            stamp: next_stamp(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.specs)
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn flat_params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = next_stamp();
        &mut self.params
    }

    /// `(weights, bias)` slices for layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let off = self.offset(i);
        let l = self.specs[i];
        let nw = l.inputs * l.outputs;
        (
            &self.params[off..off + nw],
            &self.params[off + nw..off + nw + l.outputs],
        )
    }

    fn offset(&self, i: usize) -> usize {
        param_count(&self.specs[..i])
    }

    /// Forward pass over `rows` inputs stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<ForwardCache> {
        check_len("mlp batch input", rows * self.input_dim(), x.len())?;
        let mut acts = Vec::with_capacity(self.specs.len() + 1);
        let mut pres = Vec::with_capacity(self.specs.len());
        acts.push(x.to_vec());
        for (i, l) in self.specs.iter().enumerate() {
            let (w, b) = self.layer(i);
            let mut z = Vec::with_capacity(rows * l.outputs);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            gemm(
                1.0,
                View::rm(&acts[i], rows, l.inputs),
                View::rm_t(w, l.outputs, l.inputs),
                1.0,
                &mut z,
            );
            let a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            pres.push(z);
            acts.push(a);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            fingerprint: self.fingerprint(),
            rows,
            acts,
            pres,
        })
    }

    /// Forward pass of a single input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(x, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Batched evaluation without keeping intermediates.
    pub fn predict_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        check_len("mlp batch input", rows * self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        for (i, l) in self.specs.iter().enumerate() {
            let (w, b) = self.layer(i);
            let mut z = Vec::with_capacity(rows * l.outputs);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            gemm(
                1.0,
                View::rm(&cur, rows, l.inputs),
                View::rm_t(w, l.outputs, l.inputs),
                1.0,
                &mut z,
            );
            for v in z.iter_mut() {
                *v = l.activation.apply(*v);
            }
            cur = z;
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(x, 1)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::StaleCache(format!(
                "cache built for {} used with {}",
                cache.fingerprint,
                self.fingerprint()
            )));
        }
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        Ok(())
    }

    /// Reverse pass. Adds parameter gradients into `grads` (when given) and
    /// returns the gradient with respect to the batch input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        let rows = cache.rows;
        check_len("mlp output gradient", rows * self.output_dim(), dy.len())?;
        if let Some(g) = grads.as_deref() {
            check_len("gradient buffer", self.num_params(), g.len())?;
        }
        let mut delta = dy.to_vec();
        for i in (0..self.specs.len()).rev() {
            let l = self.specs[i];
            for (d, &z) in delta.iter_mut().zip(&cache.pres[i]) {
                *d *= l.activation.derivative(z);
            }
            let off = self.offset(i);
            let nw = l.inputs * l.outputs;
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g.values[off..off + nw + l.outputs].split_at_mut(nw);
                gemm(
                    1.0,
                    View::rm_t(&delta, rows, l.outputs),
                    View::rm(&cache.acts[i], rows, l.inputs),
                    1.0,
                    gw,
                );
                for r in 0..rows {
                    for (gbj, dj) in gb
                        .iter_mut()
                        .zip(&delta[r * l.outputs..(r + 1) * l.outputs])
                    {
                        *gbj += dj;
                    }
                }
            }
            let (w, _) = self.layer(i);
            let mut dx = vec![0.0; rows * l.inputs];
            gemm(
                1.0,
                View::rm(&delta, rows, l.outputs),
                View::rm(w, l.outputs, l.inputs),
                0.0,
                &mut dx,
            );
            delta = dx;
        }
        Ok(delta)
    }

    /// Parameter and input gradients for output gradient `dy`.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut g = Gradients::zeros_like(self);
        let dx = self.backward_into(cache, dy, Some(&mut g))?;
        Ok((g, dx))
    }

    /// Exact Jacobian (`outputs × inputs`), one input-only reverse pass per
    /// output row.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_out = self.output_dim();
        // All rows share the same input, so a single batched pass suffices.
        let mut xs = Vec::with_capacity(n_out * x.len());
        check_len("jacobian input", self.input_dim(), x.len())?;
        for _ in 0..n_out {
            xs.extend_from_slice(x);
        }
        let cache = self.forward_batch(&xs, n_out)?;
        let mut dy = vec![0.0; n_out * n_out];
        for r in 0..n_out {
            dy[r * n_out + r] = 1.0;
        }
        let dx = self.backward_into(&cache, &dy, None)?;
        Ok(dx.chunks(x.len()).map(|c| c.to_vec()).collect())
    }
}

/// Intermediate values of a forward pass, tied to the parameters that
/// produced them.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    fingerprint: String,
    rows: usize,
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Gradient buffer in the same flat layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            values: vec![0.0; model.num_params()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rescale so the Euclidean norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }
}
