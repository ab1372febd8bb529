//! Full-rank Kalman filter covariance recursion and observation designs.
//!
//! The forecast error covariance obeys the discrete Riccati recursion: an
//! analysis step conditions on the observations through the precision matrix
//! `Omega = H^T R^-1 H`, and a forecast step propagates through the dynamics
//! and re-injects model error. Everything here works through linear solves;
//! no matrix is ever inverted explicitly, and every update is symmetrized.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::lyapunov::LyapunovRun;
use crate::model::PropagatorSequence;

/// Symmetric positive semi-definite forecast or analysis error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance(pub DMatrix<f64>);

impl Covariance {
    /// Wraps a matrix after checking symmetry and finiteness.
    pub fn new(p: DMatrix<f64>) -> LabResult<Self> {
        if p.nrows() != p.ncols() {
            return Err(LabError::InvalidDimension(format!(
                "covariance must be square, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(LabError::Degeneracy("covariance has non-finite entries".into()));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-10 * p.amax().max(f64::MIN_POSITIVE) {
            return Err(LabError::Degeneracy(format!(
                "covariance asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        Ok(Covariance(p))
    }

    pub fn identity(n: usize) -> Self {
        Covariance(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Covariance(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Smallest eigenvalue; negative values beyond roundoff indicate a
    /// violated PSD invariant.
    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigen().eigenvalues.min()
    }
}

/// Factor `X` with `P = X X^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactor(pub DMatrix<f64>);

/// Observation information expressed in state space, `H^T R^-1 H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(pub DMatrix<f64>);

impl PrecisionMatrix {
    pub fn zeros(n: usize) -> Self {
        PrecisionMatrix(DMatrix::zeros(n, n))
    }
}

/// Model- and observation-error covariances with their eigenvalue extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_inf: f64,
    pub q_sup: f64,
    pub r_inf: f64,
    pub r_sup: f64,
}

impl NoiseModel {
    /// Validates `Q` PSD and `R` positive definite; a 0x0 `R` is accepted for
    /// unobserved runs, with vacuous observation bounds.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> LabResult<Self> {
        if q.nrows() != q.ncols() || r.nrows() != r.ncols() {
            return Err(LabError::InvalidDimension("noise covariances must be square".into()));
        }
        let q_eigs = q.clone().symmetric_eigen().eigenvalues;
        let q_min = q_eigs.min();
        let q_sup = q_eigs.max();
        if q_min < -1e-10 * q_sup.abs().max(1.0) {
            return Err(LabError::Degeneracy(format!(
                "model error covariance is indefinite (min eigenvalue {q_min:.3e})"
            )));
        }
        let (r_inf, r_sup) = if r.nrows() == 0 {
            (0.0, 0.0)
        } else {
            let r_eigs = r.clone().symmetric_eigen().eigenvalues;
            let r_min = r_eigs.min();
            if r_min <= 0.0 {
                return Err(LabError::Degeneracy(format!(
                    "observation error covariance is not positive definite (min eigenvalue {r_min:.3e})"
                )));
            }
            (r_min, r_eigs.max())
        };
        Ok(NoiseModel { q, r, q_inf: q_min.max(0.0), q_sup, r_inf, r_sup })
    }

    /// Isotropic noise `Q = q_scale * I_n`, `R = r_scale * I_d`.
    pub fn isotropic(n: usize, d: usize, q_scale: f64, r_scale: f64) -> LabResult<Self> {
        NoiseModel::new(
            DMatrix::identity(n, n) * q_scale,
            DMatrix::identity(d, d) * r_scale,
        )
    }
}

/// Kinds of per-step observation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Transpose of the leading `d` backward Lyapunov vectors.
    Blv,
    /// Transpose of the leading `d` forward Lyapunov vectors.
    Flv,
    /// Fresh random orthogonal `n x d` frame at every step.
    RandomOrthogonal,
    /// Leading `d` rows of the identity.
    FixedRows,
    /// Full identity observation.
    Full,
}

impl ObservationKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObservationKind::Blv => "blv",
            ObservationKind::Flv => "flv",
            ObservationKind::RandomOrthogonal => "random_orthogonal",
            ObservationKind::FixedRows => "fixed_rows",
            ObservationKind::Full => "full",
        }
    }
}

/// Rule producing the observation operator `H_k` at every step.
#[derive(Debug, Clone)]
pub struct ObservationDesign<'a> {
    pub kind: ObservationKind,
    pub d: usize,
    /// Lyapunov frames, required by the `Blv` and `Flv` kinds; frame indices
    /// are global propagator steps.
    pub source: Option<&'a LyapunovRun>,
    /// Seed for the random kind.
    pub seed: u64,
}

impl<'a> ObservationDesign<'a> {
    pub fn new(kind: ObservationKind, d: usize) -> Self {
        ObservationDesign { kind, d, source: None, seed: 0 }
    }

    pub fn with_frames(kind: ObservationKind, d: usize, source: &'a LyapunovRun) -> Self {
        ObservationDesign { kind, d, source: Some(source), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Running precision statistics and the Frobenius-norm series of one filter run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterStats {
    /// Running minimum of the smallest singular value of `X^T Omega X`.
    pub alpha: f64,
    /// Running maximum of the largest singular value of `X^T Omega X`.
    pub beta: f64,
    /// Running minimum after each assimilation step.
    pub alpha_series: Vec<f64>,
    /// Running maximum after each assimilation step.
    pub beta_series: Vec<f64>,
    /// `||P_k||_F` for every step of the run, including spin-up.
    pub frobenius_series: Vec<f64>,
    /// Mean of the series over the retained (post-spin-up) window.
    pub frobenius_mean: f64,
    /// Steps excluded from the mean at the start of the run.
    pub spinup: usize,
}

impl FilterStats {
    pub fn new() -> Self {
        FilterStats {
            alpha: f64::INFINITY,
            beta: 0.0,
            alpha_series: Vec::new(),
            beta_series: Vec::new(),
            frobenius_series: Vec::new(),
            frobenius_mean: 0.0,
            spinup: 0,
        }
    }
}

impl Default for FilterStats {
    fn default() -> Self {
        Self::new()
    }
}

/// Forms `H^T R^-1 H` by solving against the Cholesky factor of `R`.
pub fn precision_matrix(h: &DMatrix<f64>, r: &DMatrix<f64>) -> LabResult<PrecisionMatrix> {
    let d = h.nrows();
    let n = h.ncols();
    if r.nrows() != d || r.ncols() != d {
        return Err(LabError::InvalidDimension(format!(
            "R is {}x{} but H has {d} rows",
            r.nrows(),
            r.ncols()
        )));
    }
    if d == 0 {
        return Ok(PrecisionMatrix::zeros(n));
    }
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::Degeneracy("observation covariance R is not positive definite".into()))?;
    let r_inv_h = chol.solve(h);
    let mut omega = h.transpose() * r_inv_h;
    omega = (&omega + omega.transpose()) * 0.5;
    Ok(PrecisionMatrix(omega))
}

/// Analysis step `P^a = (I + P Omega)^-1 P`, computed by LU solve and
/// symmetrized.
pub fn analysis_update(p: &Covariance, omega: &PrecisionMatrix) -> LabResult<Covariance> {
    let n = p.dim();
    let gain = DMatrix::<f64>::identity(n, n) + &p.0 * &omega.0;
    let lu = gain.lu();
    let pa = lu.solve(&p.0).ok_or_else(|| {
        LabError::Conditioning("analysis solve failed: I + P*Omega is numerically singular".into())
    })?;
    let pa = (&pa + pa.transpose()) * 0.5;
    if !pa.iter().all(|v| v.is_finite()) {
        return Err(LabError::Conditioning("analysis produced non-finite covariance".into()));
    }
    Ok(Covariance(pa))
}

/// Forecast step `P = M P^a M^T + Q`, symmetrized.
pub fn forecast_update(pa: &Covariance, m: &DMatrix<f64>, q: &DMatrix<f64>) -> Covariance {
    let p = m * &pa.0 * m.transpose() + q;
    Covariance((&p + p.transpose()) * 0.5)
}

/// One full Riccati step: analysis followed by forecast.
pub fn riccati_step(
    p: &Covariance,
    m: &DMatrix<f64>,
    omega: &PrecisionMatrix,
    q: &DMatrix<f64>,
) -> LabResult<Covariance> {
    Ok(forecast_update(&analysis_update(p, omega)?, m, q))
}

/// Factor with `X X^T = P`.
///
/// Uses the Cholesky factor when `P` is numerically positive definite and
/// falls back to the symmetric eigendecomposition `X = V sqrt(L)` for
/// semi-definite input, clamping eigenvalues below `1e-12 * ||P||` to zero.
pub fn cholesky_factor(p: &Covariance) -> LabResult<CovFactor> {
    if let Some(chol) = p.0.clone().cholesky() {
        return Ok(CovFactor(chol.l()));
    }
    let eig = p.0.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let clamp = 1e-12 * scale;
    let mut root = DVector::<f64>::zeros(eig.eigenvalues.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-10 * scale.max(1.0) {
            return Err(LabError::Degeneracy(format!(
                "covariance is indefinite beyond tolerance (eigenvalue {lambda:.3e})"
            )));
        }
        root[i] = if lambda <= clamp { 0.0 } else { lambda.sqrt() };
    }
    Ok(CovFactor(&eig.eigenvectors * DMatrix::from_diagonal(&root)))
}

/// Folds the singular value extremes of `X^T Omega X` into running statistics.
pub fn alpha_beta_update(stats: &mut FilterStats, x: &CovFactor, omega: &PrecisionMatrix) {
    let s = x.0.transpose() * &omega.0 * &x.0;
    let s = (&s + s.transpose()) * 0.5;
    let eigs = s.symmetric_eigen().eigenvalues;
    let smallest = eigs.iter().fold(f64::INFINITY, |acc, &l| acc.min(l.abs()));
    let largest = eigs.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    stats.alpha = stats.alpha.min(smallest);
    stats.beta = stats.beta.max(largest);
}

fn mix_seed(seed: u64, k: usize) -> u64 {
    // SplitMix64 finalizer over (seed, step) so per-step draws are
    // independent of call order.
    let mut z = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Produces the observation operator for `design` at global step `k`.
pub fn make_observation(design: &ObservationDesign<'_>, k: usize, n: usize) -> LabResult<DMatrix<f64>> {
    let d = design.d;
    if d > n {
        return Err(LabError::Config(format!(
            "observation dimension {d} exceeds state dimension {n}"
        )));
    }
    match design.kind {
        ObservationKind::Full => Ok(DMatrix::identity(n, n)),
        ObservationKind::FixedRows => Ok(DMatrix::identity(d, n)),
        ObservationKind::Blv | ObservationKind::Flv => {
            let run = design.source.ok_or_else(|| {
                LabError::Config(format!("{} design needs Lyapunov frames", design.kind.label()))
            })?;
            if k >= run.frames.len() {
                return Err(LabError::Config(format!(
                    "step {k} outside the available frames (0..{})",
                    run.frames.len()
                )));
            }
            Ok(run.frames[k].leading(d).transpose())
        }
        ObservationKind::RandomOrthogonal => {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(design.seed, k));
            let g = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let qr = g.qr();
            let mut q = qr.q();
            let r = qr.r();
            for i in 0..d {
                if r[(i, i)] == 0.0 {
                    return Err(LabError::Degeneracy("random observation draw was rank deficient".into()));
                }
                if r[(i, i)] < 0.0 {
                    for row in 0..n {
                        q[(row, i)] = -q[(row, i)];
                    }
                }
            }
            Ok(q.transpose())
        }
    }
}

/// Runs the Riccati recursion over `spinup + k_avg` consecutive propagators
/// beginning at global step `start`.
///
/// Statistics `alpha` and `beta` are taken over every step; the Frobenius
/// mean is taken over the retained window only.
pub fn run_filter(
    props: &PropagatorSequence,
    start: usize,
    design: &ObservationDesign<'_>,
    noise: &NoiseModel,
    p0: &Covariance,
    spinup: usize,
    k_avg: usize,
) -> LabResult<FilterStats> {
    run_filter_recorded(props, start, design, noise, p0, spinup, k_avg, false).map(|(stats, _)| stats)
}

/// Same as [`run_filter`] but optionally recording the covariance at every
/// step, for bound verification.
#[allow(clippy::too_many_arguments)]
pub fn run_filter_recorded(
    props: &PropagatorSequence,
    start: usize,
    design: &ObservationDesign<'_>,
    noise: &NoiseModel,
    p0: &Covariance,
    spinup: usize,
    k_avg: usize,
    record: bool,
) -> LabResult<(FilterStats, Vec<Covariance>)> {
    let steps = spinup + k_avg;
    if k_avg == 0 {
        return Err(LabError::Config("retained window must be nonempty".into()));
    }
    if start + steps > props.len() {
        return Err(LabError::Config(format!(
            "filter needs {steps} propagators from step {start}, sequence has {}",
            props.len()
        )));
    }
    let n = props.config.dim;
    let mut stats = FilterStats { spinup, ..FilterStats::new() };
    let mut history = Vec::new();
    let mut p = p0.clone();
    let mut retained_sum = 0.0;
    for j in 0..steps {
        let global = start + j;
        stats.frobenius_series.push(p.frobenius());
        if j >= spinup {
            retained_sum += p.frobenius();
        }
        if record {
            history.push(p.clone());
        }
        let h = make_observation(design, global, n)?;
        let omega = precision_matrix(&h, &noise.r)?;
        let x = cholesky_factor(&p)?;
        alpha_beta_update(&mut stats, &x, &omega);
        stats.alpha_series.push(stats.alpha);
        stats.beta_series.push(stats.beta);
        let pa = analysis_update(&p, &omega)?;
        p = forecast_update(&pa, &props.mats[global], &noise.q);
    }
    stats.frobenius_series.push(p.frobenius());
    if record {
        history.push(p);
    }
    stats.frobenius_mean = retained_sum / k_avg as f64;
    Ok((stats, history))
}
