//! Lorenz-96 trajectory generation and the discrete tangent-linear propagators.
//!
//! The nonlinear model is integrated with a fixed-step RK4 scheme. Over each
//! assimilation window of length `delta` the resolvent of the variational
//! equation is advanced jointly with the state, evaluating the Jacobian at the
//! RK4 stage states, which yields one dense propagator per window.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Configuration of the Lorenz-96 run: dimension, forcing, step sizes,
/// spin-up length and the number of recorded propagator windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// State dimension; the cyclic index pattern needs at least 4.
    #[serde(rename = "n")]
    pub dim: usize,
    /// Forcing parameter.
    #[serde(rename = "F")]
    pub forcing: f64,
    /// Assimilation interval (model time) covered by one propagator.
    pub delta: f64,
    /// RK4 integrator step; `delta` must be an integer multiple of it.
    pub h: f64,
    /// Nonlinear transient discarded before recording, in units of `delta`.
    pub spinup_steps: usize,
    /// Number of propagator windows to record.
    #[serde(rename = "K")]
    pub windows: usize,
    /// Seed for the initial-condition perturbation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 10,
            forcing: 8.0,
            delta: 0.1,
            h: 0.01,
            spinup_steps: 5000,
            windows: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Number of RK4 substeps per window, after checking that `delta` is an
    /// integer multiple of `h`.
    pub fn substeps(&self) -> LabResult<usize> {
        if self.h <= 0.0 {
            return Err(LabError::Config(format!("integrator step h={} must be > 0", self.h)));
        }
        let ratio = self.delta / self.h;
        let m = ratio.round();
        if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.abs().max(1.0) {
            return Err(LabError::Config(format!(
                "delta={} is not an integer multiple of h={}",
                self.delta, self.h
            )));
        }
        Ok(m as usize)
    }

    pub fn validate(&self) -> LabResult<()> {
        if self.dim < 4 {
            return Err(LabError::InvalidDimension(format!(
                "Lorenz-96 needs dimension >= 4, got {}",
                self.dim
            )));
        }
        self.substeps()?;
        Ok(())
    }
}

/// Ordered tangent-linear maps along one trajectory.
///
/// `mats[j]` propagates perturbations from step `j` to step `j + 1`, and
/// `states[j]` is the underlying trajectory point at step `j`, so there are
/// `windows` matrices and `windows + 1` states.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorSequence {
    pub mats: Vec<DMatrix<f64>>,
    pub states: Vec<DVector<f64>>,
    pub config: ModelConfig,
}

impl PropagatorSequence {
    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    /// Checks length consistency, finiteness and numerical invertibility of
    /// every propagator.
    pub fn validate(&self) -> LabResult<()> {
        if self.states.len() != self.mats.len() + 1 {
            return Err(LabError::Format(format!(
                "length mismatch: {} propagators but {} states",
                self.mats.len(),
                self.states.len()
            )));
        }
        for (k, m) in self.mats.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(LabError::Degeneracy(format!("propagator {k} has non-finite entries")));
            }
            let min_sv = m.clone().svd(false, false).singular_values.min();
            if min_sv <= 0.0 {
                return Err(LabError::Degeneracy(format!(
                    "propagator {k} is numerically singular (min singular value {min_sv:.3e})"
                )));
            }
        }
        for (k, x) in self.states.iter().enumerate() {
            if !x.iter().all(|v| v.is_finite()) {
                return Err(LabError::Degeneracy(format!("state {k} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Product of stored propagators taking step `from` to step `to`
    /// (identity when `from == to`).
    pub fn product(&self, from: usize, to: usize) -> LabResult<DMatrix<f64>> {
        if from > to || to > self.len() {
            return Err(LabError::Config(format!(
                "propagator product window [{from}, {to}] out of range (length {})",
                self.len()
            )));
        }
        let n = self.config.dim;
        let mut acc = DMatrix::<f64>::identity(n, n);
        for j in from..to {
            acc = &self.mats[j] * acc;
        }
        Ok(acc)
    }
}

/// Lorenz-96 vector field with periodic boundary conditions.
pub fn l96_rhs(x: &DVector<f64>, forcing: f64) -> LabResult<DVector<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(LabError::InvalidDimension(format!(
            "Lorenz-96 needs dimension >= 4, got {n}"
        )));
    }
    let mut out = DVector::<f64>::zeros(n);
    for m in 0..n {
        let m1 = (m + n - 1) % n;
        let m2 = (m + n - 2) % n;
        let p1 = (m + 1) % n;
        out[m] = -x[m2] * x[m1] + x[m1] * x[p1] - x[m] + forcing;
    }
    Ok(out)
}

/// Jacobian of [`l96_rhs`]; each row has four nonzero entries with cyclic
/// column indices.
pub fn l96_jacobian(x: &DVector<f64>) -> LabResult<DMatrix<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(LabError::InvalidDimension(format!(
            "Lorenz-96 needs dimension >= 4, got {n}"
        )));
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for m in 0..n {
        let m1 = (m + n - 1) % n;
        let m2 = (m + n - 2) % n;
        let p1 = (m + 1) % n;
        jac[(m, m2)] += -x[m1];
        jac[(m, m1)] += x[p1] - x[m2];
        jac[(m, m)] += -1.0;
        jac[(m, p1)] += x[m1];
    }
    Ok(jac)
}

/// One classical RK4 step of the nonlinear model.
pub fn rk4_state_step(x: &DVector<f64>, h: f64, forcing: f64) -> LabResult<DVector<f64>> {
    if h <= 0.0 {
        return Err(LabError::Config(format!("integrator step h={h} must be > 0")));
    }
    let k1 = l96_rhs(x, forcing)?;
    let k2 = l96_rhs(&(x + &k1 * (h / 2.0)), forcing)?;
    let k3 = l96_rhs(&(x + &k2 * (h / 2.0)), forcing)?;
    let k4 = l96_rhs(&(x + &k3 * h), forcing)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Advances the state by `delta` and returns the resolvent of the variational
/// equation over the window.
///
/// State and resolvent are integrated jointly: each RK4 stage evaluates the
/// Jacobian at the corresponding stage state, so the resolvent sees the same
/// fourth-order trajectory as the state itself.
pub fn tangent_resolvent_step(
    x: &DVector<f64>,
    delta: f64,
    h: f64,
    forcing: f64,
) -> LabResult<(DVector<f64>, DMatrix<f64>)> {
    let cfg = ModelConfig {
        dim: x.len().max(4),
        forcing,
        delta,
        h,
        ..ModelConfig::default()
    };
    let substeps = cfg.substeps()?;
    let n = x.len();
    let mut state = x.clone();
    let mut resolvent = DMatrix::<f64>::identity(n, n);
    for _ in 0..substeps {
        let k1 = l96_rhs(&state, forcing)?;
        let a1 = l96_jacobian(&state)?;
        let s2 = &state + &k1 * (h / 2.0);
        let k2 = l96_rhs(&s2, forcing)?;
        let a2 = l96_jacobian(&s2)?;
        let s3 = &state + &k2 * (h / 2.0);
        let k3 = l96_rhs(&s3, forcing)?;
        let a3 = l96_jacobian(&s3)?;
        let s4 = &state + &k3 * h;
        let k4 = l96_rhs(&s4, forcing)?;
        let a4 = l96_jacobian(&s4)?;

        let g1 = &a1 * &resolvent;
        let g2 = &a2 * &(&resolvent + &g1 * (h / 2.0));
        let g3 = &a3 * &(&resolvent + &g2 * (h / 2.0));
        let g4 = &a4 * &(&resolvent + &g3 * h);

        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        resolvent += (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);
    }
    Ok((state, resolvent))
}

/// Generates the trajectory and the propagator sequence for `config`.
///
/// The initial condition is the equilibrium `F * 1` plus a small seeded
/// Gaussian perturbation; `spinup_steps` windows of nonlinear time are
/// discarded before recording so that statistics are attractor statistics.
pub fn generate_propagators(config: &ModelConfig) -> LabResult<PropagatorSequence> {
    config.validate()?;
    let n = config.dim;
    let substeps = config.substeps()?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut x = DVector::<f64>::from_element(n, config.forcing);
    for i in 0..n {
        x[i] += 1e-3 * rng.sample::<f64, _>(StandardNormal);
    }

    for _ in 0..config.spinup_steps * substeps {
        x = rk4_state_step(&x, config.h, config.forcing)?;
    }

    let mut states = Vec::with_capacity(config.windows + 1);
    let mut mats = Vec::with_capacity(config.windows);
    states.push(x.clone());
    for _ in 0..config.windows {
        let (next, resolvent) = tangent_resolvent_step(&x, config.delta, config.h, config.forcing)?;
        x = next;
        states.push(x.clone());
        mats.push(resolvent);
    }

    let seq = PropagatorSequence { mats, states, config: config.clone() };
    seq.validate()?;
    Ok(seq)
}
