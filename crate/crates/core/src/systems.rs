//! Ground-truth dynamical systems used to generate training data.
//!
//! States are plain `f64` slices: spring mass `(x, v)`, single pendulum
//! `(θ, Ω)`, double pendulum `(θ1, θ2, Ω1, Ω2)` and the Hopf surrogate
//! `(x, y, z)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::spectrum::{eigenvalues_small, natural_frequencies};
use crate::error::{check_len, Error, Result};
use crate::ode;
use crate::rng::rng_for;

/// Mass matrices with a larger condition number are treated as singular.
pub const MAX_MASS_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringMassParams {
    pub mass: f64,
    pub stiffness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
}

/// Two uniform rectangular bars; `w1`, `w2` are the bar widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub w1: f64,
    pub w2: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfParams {
    pub mu: f64,
    pub omega: f64,
    pub a: f64,
}

impl Default for SpringMassParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            stiffness: 80.0,
        }
    }
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 0.5,
            gravity: 9.81,
        }
    }
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 0.205,
            l2: 0.179,
            w1: 0.038,
            w2: 0.038,
            gravity: 9.81,
        }
    }
}

impl Default for HopfParams {
    fn default() -> Self {
        Self {
            mu: 0.25,
            omega: 2.0 * std::f64::consts::PI,
            a: 1.0,
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl SpringMassParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("mass", self.mass)?;
        require_positive("stiffness", self.stiffness)
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("mass", self.mass)?;
        require_positive("length", self.length)?;
        require_positive("gravity", self.gravity)
    }
}

impl DoublePendulumParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("w1", self.w1),
            ("w2", self.w2),
            ("gravity", self.gravity),
        ] {
            require_positive(name, v)?;
        }
        Ok(())
    }

    /// Moment of inertia of the first bar about its centre.
    pub fn inertia1(&self) -> f64 {
        self.m1 * (self.l1 * self.l1 + self.w1 * self.w1) / 12.0
    }

    pub fn inertia2(&self) -> f64 {
        self.m2 * (self.l2 * self.l2 + self.w2 * self.w2) / 12.0
    }

    /// Constant pieces of the configuration-dependent mass matrix:
    /// `(a11, a22, c)` with `M = [[a11, c cosΔ], [c cosΔ, a22]]`.
    fn mass_terms(&self) -> (f64, f64, f64) {
        let a11 = self.m1 * self.l1 * self.l1 / 4.0 + self.m2 * self.l1 * self.l1 + self.inertia1();
        let a22 = self.m2 * self.l2 * self.l2 / 4.0 + self.inertia2();
        let c = 0.5 * self.m2 * self.l1 * self.l2;
        (a11, a22, c)
    }
}

impl HopfParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("a", self.a)?;
        if !self.mu.is_finite() || !self.omega.is_finite() {
            return Err(Error::Config("mu and omega must be finite".into()));
        }
        Ok(())
    }
}

/// A state with its time stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub values: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, t: 0.0 }
    }
}

pub fn spring_mass_deriv(s: &[f64], p: &SpringMassParams, out: &mut [f64]) -> Result<()> {
    check_len("spring mass state", 2, s.len())?;
    out[0] = s[1];
    out[1] = -(p.stiffness / p.mass) * s[0];
    Ok(())
}

pub fn single_pendulum_deriv(s: &[f64], p: &PendulumParams, out: &mut [f64]) -> Result<()> {
    check_len("pendulum state", 2, s.len())?;
    out[0] = s[1];
    out[1] = -(3.0 * p.gravity / (2.0 * p.length)) * s[0].sin();
    Ok(())
}

pub fn double_pendulum_deriv(s: &[f64], p: &DoublePendulumParams, out: &mut [f64]) -> Result<()> {
    check_len("double pendulum state", 4, s.len())?;
    let (th1, th2, om1, om2) = (s[0], s[1], s[2], s[3]);
    let (a11, a22, c) = p.mass_terms();
    let (sd, cd) = (th1 - th2).sin_cos();
    let m12 = c * cd;

    let r1 = -c * sd * om2 * om2 - (0.5 * p.m1 + p.m2) * p.gravity * p.l1 * th1.sin();
    let r2 = c * sd * om1 * om1 - 0.5 * p.m2 * p.gravity * p.l2 * th2.sin();

    let det = a11 * a22 - m12 * m12;
    // Eigenvalues of the symmetric 2x2 matrix give its 2-norm condition number.
    let half_tr = 0.5 * (a11 + a22);
    let disc = (0.25 * (a11 - a22).powi(2) + m12 * m12).sqrt();
    let (lmax, lmin) = (half_tr + disc, half_tr - disc);
    if !(lmin > 0.0) || lmax / lmin > MAX_MASS_CONDITION {
        return Err(Error::Singular(lmax / lmin.max(f64::MIN_POSITIVE)));
    }
    out[0] = om1;
    out[1] = om2;
    out[2] = (a22 * r1 - m12 * r2) / det;
    out[3] = (a11 * r2 - m12 * r1) / det;
    Ok(())
}

/// Total energy with both arms horizontal as the zero of potential energy.
pub fn double_pendulum_energy(s: &[f64], p: &DoublePendulumParams) -> Result<f64> {
    check_len("double pendulum state", 4, s.len())?;
    let (th1, th2, om1, om2) = (s[0], s[1], s[2], s[3]);
    let (i1, i2) = (p.inertia1(), p.inertia2());
    let t1 = 0.5 * p.m1 * (p.l1 * p.l1 / 4.0) * om1 * om1 + 0.5 * i1 * om1 * om1;
    // Centre of the second bar moves with the tip of the first plus its own swing.
    let v2sq = p.l1 * p.l1 * om1 * om1
        + p.l2 * p.l2 / 4.0 * om2 * om2
        + p.l1 * p.l2 * om1 * om2 * (th1 - th2).cos();
    let t2 = 0.5 * p.m2 * v2sq + 0.5 * i2 * om2 * om2;
    let v = -(0.5 * p.m1 + p.m2) * p.gravity * p.l1 * th1.cos()
        - 0.5 * p.m2 * p.gravity * p.l2 * th2.cos();
    Ok(t1 + t2 + v)
}

pub fn hopf_deriv(s: &[f64], p: &HopfParams, out: &mut [f64]) -> Result<()> {
    check_len("hopf state", 3, s.len())?;
    let (x, y, z) = (s[0], s[1], s[2]);
    let r2 = x * x + y * y;
    out[0] = p.mu * x - p.omega * y - p.a * x * r2;
    out[1] = p.omega * x + p.mu * y - p.a * y * r2;
    out[2] = -z;
    Ok(())
}

/// A ground-truth system together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    SpringMass(SpringMassParams),
    SinglePendulum(PendulumParams),
    DoublePendulum(DoublePendulumParams),
    Hopf(HopfParams),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::SpringMass(_) => "spring_mass",
            System::SinglePendulum(_) => "single_pendulum",
            System::DoublePendulum(_) => "double_pendulum",
            System::Hopf(_) => "hopf",
        }
    }

    /// Default-parameter system from its name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "spring_mass" => System::SpringMass(Default::default()),
            "single_pendulum" => System::SinglePendulum(Default::default()),
            "double_pendulum" => System::DoublePendulum(Default::default()),
            "hopf" => System::Hopf(Default::default()),
            other => return Err(Error::Config(format!("unknown system `{other}`"))),
        })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::SpringMass(_) | System::SinglePendulum(_) => 2,
            System::DoublePendulum(_) => 4,
            System::Hopf(_) => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            System::SpringMass(p) => p.validate(),
            System::SinglePendulum(p) => p.validate(),
            System::DoublePendulum(p) => p.validate(),
            System::Hopf(p) => p.validate(),
        }
    }

    pub fn deriv(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("derivative output", s.len(), out.len())?;
        match self {
            System::SpringMass(p) => spring_mass_deriv(s, p, out),
            System::SinglePendulum(p) => single_pendulum_deriv(s, p, out),
            System::DoublePendulum(p) => double_pendulum_deriv(s, p, out),
            System::Hopf(p) => hopf_deriv(s, p, out),
        }
    }

    pub fn deriv_state(&self, s: &State) -> Result<Vec<f64>> {
        let mut out = vec![0.0; s.values.len()];
        self.deriv(&s.values, &mut out)?;
        Ok(out)
    }

    /// Total mechanical energy; `None` for the non-mechanical surrogate.
    pub fn energy(&self, s: &[f64]) -> Result<Option<f64>> {
        check_len("energy state", self.state_dim(), s.len())?;
        Ok(match self {
            System::SpringMass(p) => {
                Some(0.5 * p.stiffness * s[0] * s[0] + 0.5 * p.mass * s[1] * s[1])
            }
            System::SinglePendulum(p) => {
                // Uniform rod pivoted at one end.
                let inertia = p.mass * p.length * p.length / 3.0;
                Some(0.5 * inertia * s[1] * s[1] - 0.5 * p.mass * p.gravity * p.length * s[0].cos())
            }
            System::DoublePendulum(p) => Some(double_pendulum_energy(s, p)?),
            System::Hopf(_) => None,
        })
    }

    /// Indices of state components that are angles.
    pub fn angle_indices(&self) -> &'static [usize] {
        match self {
            System::SpringMass(_) | System::Hopf(_) => &[],
            System::SinglePendulum(_) => &[0],
            System::DoublePendulum(_) => &[0, 1],
        }
    }

    /// The stable equilibrium the analysis targets.
    pub fn rest_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// Initial-state box used for dataset generation.
    pub fn default_box(&self) -> StateBox {
        match self {
            System::SpringMass(p) => {
                let w = (p.stiffness / p.mass).sqrt();
                StateBox::symmetric(&[1.0, w])
            }
            System::SinglePendulum(_) => StateBox::symmetric(&[1.0, 5.0]),
            System::DoublePendulum(_) => StateBox::symmetric(&[1.8, 1.8, 2.0, 2.0]),
            System::Hopf(_) => StateBox::symmetric(&[1.0, 1.0, 1.0]),
        }
    }

    /// Characteristic angular rates per state component, used to make lifted
    /// observations dimensionless.
    pub fn feature_scales(&self) -> Vec<f64> {
        match self {
            System::SpringMass(p) => vec![1.0, (p.stiffness / p.mass).sqrt()],
            System::SinglePendulum(p) => vec![1.0, (1.5 * p.gravity / p.length).sqrt()],
            System::DoublePendulum(_) => vec![1.0, 1.0, 10.0, 10.0],
            System::Hopf(_) => vec![1.0, 1.0, 1.0],
        }
    }
}

/// Linearised angular frequencies at the rest state, largest first.
pub fn linear_frequencies(system: &System) -> Result<Vec<f64>> {
    Ok(match system {
        System::SpringMass(p) => vec![(p.stiffness / p.mass).sqrt()],
        System::SinglePendulum(p) => vec![(1.5 * p.gravity / p.length).sqrt()],
        System::Hopf(p) => vec![p.omega.abs()],
        System::DoublePendulum(_) => {
            let x0 = system.rest_state();
            let n = x0.len();
            let h = 1e-6;
            let mut jac = vec![vec![0.0; n]; n];
            let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
            for j in 0..n {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[j] += h;
                xm[j] -= h;
                system.deriv(&xp, &mut fp)?;
                system.deriv(&xm, &mut fm)?;
                for i in 0..n {
                    jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            natural_frequencies(&eigenvalues_small(&jac)?, 1e-6)
        }
    })
}

/// Axis-aligned box of initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn symmetric(half_widths: &[f64]) -> Self {
        Self {
            lo: half_widths.iter().map(|w| -w).collect(),
            hi: half_widths.to_vec(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        check_len("state box", dim, self.lo.len())?;
        check_len("state box", dim, self.hi.len())?;
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Config(format!(
                    "empty state box along axis {i}: [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform sample from `bx`, deterministic in `seed`.
pub fn sample_initial_state(system: &System, seed: u64, bx: &StateBox) -> Result<State> {
    bx.validate(system.state_dim())?;
    let mut rng = rng_for(seed, "initial-state");
    let values = bx
        .lo
        .iter()
        .zip(&bx.hi)
        .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..h) })
        .collect();
    Ok(State::new(values))
}

/// Uniformly sampled ground-truth time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system: System,
    pub dt: f64,
    pub t0: f64,
    pub seed: Option<u64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn state(&self, i: usize) -> State {
        State {
            values: self.states[i].clone(),
            t: self.time(i),
        }
    }
}

/// Integrate `system` from `initial` with classical RK4.
///
/// Returns `n_samples` states spaced `dt` apart, the first being `initial`;
/// each interval takes `substeps` internal steps.
pub fn simulate(
    system: &System,
    initial: &State,
    dt: f64,
    n_samples: usize,
    substeps: usize,
) -> Result<Trajectory> {
    system.validate()?;
    check_len("initial state", system.state_dim(), initial.values.len())?;
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "a trajectory needs at least 2 samples, got {n_samples}"
        )));
    }
    let states = ode::integrate(
        |y, dy| system.deriv(y, dy),
        &initial.values,
        dt,
        n_samples,
        substeps,
    )?;
    Ok(Trajectory {
        system: *system,
        dt,
        t0: initial.t,
        seed: None,
        states,
    })
}
