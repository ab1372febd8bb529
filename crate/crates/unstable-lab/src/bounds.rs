//! Gramians, recursive sandwich bounds and boundedness criteria.
//!
//! The filter covariance is pinched between two closed-form expressions
//! built from propagator products, weighted controllability sums and the
//! precision statistics of the run. This module assembles those expressions,
//! verifies the sandwich numerically, evaluates the necessary criterion
//! relating the leading instability to the observational precision, solves
//! the autonomous fixed-point problem with its per-eigenvector bounds, and
//! estimates how long a window is needed before finite-time growth rates
//! settle near their asymptotic exponents.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::kalman::{cholesky_factor, precision_matrix, riccati_step, Covariance, FilterStats};
use crate::lyapunov::{LyapunovRun, SpectrumEstimate};
use crate::model::PropagatorSequence;

/// Controllability, information and weighted controllability matrices over
/// one window, with their eigenvalue extremes.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub controllability: DMatrix<f64>,
    pub information: DMatrix<f64>,
    pub weighted: DMatrix<f64>,
    pub gamma: f64,
    /// Window endpoints `(j, k)`, both inclusive, in global steps.
    pub window: (usize, usize),
    /// `(min, max)` eigenvalues of each Gramian.
    pub controllability_eigs: (f64, f64),
    pub information_eigs: (f64, f64),
    pub weighted_eigs: (f64, f64),
}

impl GramianReport {
    /// Uniform complete observability holds on the window when the
    /// information matrix is positive definite.
    pub fn observable(&self) -> bool {
        self.information_eigs.0 > 0.0
    }

    /// Uniform complete controllability holds on the window when the
    /// controllability matrix is positive definite.
    pub fn controllable(&self) -> bool {
        self.controllability_eigs.0 > 0.0
    }
}

/// Necessary-criterion quantities for a time-varying run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    /// Leading exponent, per step.
    pub lambda1: f64,
    /// Running supremum of the squared leading singular value of
    /// `R^-1/2 H X`, which is the `beta` statistic of the run.
    pub sup_sigma1_sq: f64,
    /// `exp(2 lambda1) / (1 + sup_sigma1_sq)`.
    pub ratio: f64,
    pub satisfied: bool,
}

/// Bound check for one eigenvector of the transposed autonomous propagator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenBoundCheck {
    pub mu_re: f64,
    pub mu_im: f64,
    /// `ln |mu|`.
    pub lambda: f64,
    /// `v^H Q v`.
    pub q_value: f64,
    /// `v^H P_hat v`.
    pub p_value: f64,
    /// Margin `bound - v^H P_hat v` of the upper bound, present when its
    /// geometric condition holds.
    pub upper_margin: Option<f64>,
    /// Margin `v^H P_hat v - bound` of the lower bound, present when the
    /// series converges.
    pub lower_margin: Option<f64>,
}

/// Autonomous necessary criterion evaluated at the first eigenvector, in
/// descending modulus order, not annihilated by `Q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutonomousCriterion {
    /// 1-based position in the modulus-ordered eigenvalue list.
    pub mode_index: usize,
    pub lambda: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

/// Fixed point of the autonomous Riccati recursion with its precision
/// statistics and eigenvector bound checks.
#[derive(Debug, Clone)]
pub struct AutonomousReport {
    pub p_hat: Covariance,
    pub x_hat: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Frobenius residual of the fixed-point equation, relative to `||P_hat||`.
    pub residual: f64,
    pub iterations: usize,
    pub eigen_checks: Vec<EigenBoundCheck>,
    pub criterion: AutonomousCriterion,
}

/// Smallest uniform window for which sampled finite-time growth rates stay
/// within a slack of the asymptotic exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonWindowEstimate {
    /// 1-based mode index.
    pub mode: usize,
    pub epsilon: f64,
    /// Smallest such window; `None` when even the largest tested window fails.
    pub n_eps: Option<usize>,
    /// Largest window tested.
    pub w_max: usize,
    /// Exponent the rates are compared against.
    pub lambda: f64,
}

/// Closed-form asymptotic bound values for one mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvBoundValues {
    /// `None` encodes an infinite upper bound (geometric condition violated).
    pub upper: Option<f64>,
    pub lower: f64,
}

/// Per-step margins of the recursive sandwich bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichMargin {
    pub k: usize,
    /// Smallest eigenvalue of `P_k - lower_k`.
    pub lower_margin: f64,
    /// Smallest eigenvalue of `upper_k - P_k`.
    pub upper_margin: f64,
    /// `||P_k||_F`, the scale the margins should be compared against.
    pub scale: f64,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eigs = m.clone().symmetric_eigen().eigenvalues;
    (eigs.min(), eigs.max())
}

/// Weighted controllability sum over `l = j..=k` with weight
/// `(1/(1+gamma))^(k-l)`; the plain controllability matrix for `gamma = 0`.
pub fn weighted_controllability(
    props: &PropagatorSequence,
    q_of: &dyn Fn(usize) -> DMatrix<f64>,
    gamma: f64,
    k: usize,
    j: usize,
) -> LabResult<DMatrix<f64>> {
    if gamma < 0.0 {
        return Err(LabError::Config(format!("weight gamma = {gamma} must be non-negative")));
    }
    if j > k {
        return Err(LabError::Config(format!("window start {j} exceeds end {k}")));
    }
    if k > props.len() {
        return Err(LabError::Config(format!(
            "window end {k} exceeds available propagators ({})",
            props.len()
        )));
    }
    let n = props.config.dim;
    let weight = 1.0 / (1.0 + gamma);
    let mut sum = q_of(k);
    let mut transport = DMatrix::<f64>::identity(n, n);
    let mut factor = 1.0;
    for l in (j..k).rev() {
        transport *= &props.mats[l];
        factor *= weight;
        sum += factor * &transport * q_of(l) * transport.transpose();
    }
    Ok(symmetrize(sum))
}

/// Controllability matrix over the window of length `n_window` ending at `k`.
pub fn controllability_matrix(
    props: &PropagatorSequence,
    q_of: &dyn Fn(usize) -> DMatrix<f64>,
    k: usize,
    n_window: usize,
) -> LabResult<DMatrix<f64>> {
    if k < n_window {
        return Err(LabError::Config(format!(
            "window of length {n_window} does not fit before step {k}"
        )));
    }
    weighted_controllability(props, q_of, 0.0, k, k - n_window)
}

/// Information matrix over the window of length `n_window` ending at `k`,
/// built by inverting the transported propagator products.
pub fn information_matrix(
    props: &PropagatorSequence,
    omega_of: &dyn Fn(usize) -> DMatrix<f64>,
    k: usize,
    n_window: usize,
) -> LabResult<DMatrix<f64>> {
    if k < n_window {
        return Err(LabError::Config(format!(
            "window of length {n_window} does not fit before step {k}"
        )));
    }
    if k > props.len() {
        return Err(LabError::Config(format!(
            "window end {k} exceeds available propagators ({})",
            props.len()
        )));
    }
    let n = props.config.dim;
    let mut sum = omega_of(k);
    let mut transport = DMatrix::<f64>::identity(n, n);
    for l in (k - n_window..k).rev() {
        transport *= &props.mats[l];
        let g_inv = transport.clone().lu().try_inverse().ok_or_else(|| {
            LabError::Degeneracy(format!("propagator product through step {l} is singular"))
        })?;
        sum += g_inv.transpose() * omega_of(l) * g_inv;
    }
    Ok(symmetrize(sum))
}

/// All three Gramians over the window `(j, k)` with their eigenvalue extremes.
pub fn gramian_report(
    props: &PropagatorSequence,
    q_of: &dyn Fn(usize) -> DMatrix<f64>,
    omega_of: &dyn Fn(usize) -> DMatrix<f64>,
    gamma: f64,
    k: usize,
    j: usize,
) -> LabResult<GramianReport> {
    let controllability = weighted_controllability(props, q_of, 0.0, k, j)?;
    let information = information_matrix(props, omega_of, k, k - j)?;
    let weighted = weighted_controllability(props, q_of, gamma, k, j)?;
    Ok(GramianReport {
        controllability_eigs: eig_extremes(&controllability),
        information_eigs: eig_extremes(&information),
        weighted_eigs: eig_extremes(&weighted),
        controllability,
        information,
        weighted,
        gamma,
        window: (j, k),
    })
}

/// Verifies the recursive sandwich bound against a recorded covariance
/// series over local steps `k = 1..=horizon` from `start`.
///
/// The running propagator products limit the usable horizon on unstable
/// systems; keep it short enough that `M_{k:0}` stays within range.
#[allow(clippy::too_many_arguments)]
pub fn sandwich_check(
    p_series: &[Covariance],
    props: &PropagatorSequence,
    start: usize,
    p0: &Covariance,
    alpha: f64,
    beta: f64,
    q_of: &dyn Fn(usize) -> DMatrix<f64>,
    horizon: usize,
) -> LabResult<Vec<SandwichMargin>> {
    if p_series.len() <= horizon {
        return Err(LabError::Config(format!(
            "covariance series has {} entries, horizon {horizon} needs one more",
            p_series.len()
        )));
    }
    if start + horizon > props.len() {
        return Err(LabError::Config(format!(
            "horizon {horizon} from step {start} exceeds available propagators ({})",
            props.len()
        )));
    }
    let w_alpha = 1.0 / (1.0 + alpha);
    let w_beta = 1.0 / (1.0 + beta);
    let mut free = p0.0.clone(); // M_{k:0} P_0 M_{k:0}^T
    let mut xi_alpha = DMatrix::<f64>::zeros(p0.dim(), p0.dim());
    let mut xi_beta = xi_alpha.clone();
    let mut out = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let m = &props.mats[start + k - 1];
        let q = q_of(start + k);
        free = symmetrize(m * &free * m.transpose());
        xi_alpha = symmetrize(w_alpha * m * &xi_alpha * m.transpose() + &q);
        xi_beta = symmetrize(w_beta * m * &xi_beta * m.transpose() + &q);
        if !free.iter().all(|v| v.is_finite()) {
            return Err(LabError::Conditioning(format!(
                "propagator products overflowed at step {k}; shorten the horizon"
            )));
        }
        let lower = w_beta.powi(k as i32) * &free + &xi_beta;
        let upper = w_alpha.powi(k as i32) * &free + &xi_alpha;
        let p_k = &p_series[k].0;
        let lower_margin = (p_k - lower).symmetric_eigen().eigenvalues.min();
        let upper_margin = (upper - p_k).symmetric_eigen().eigenvalues.min();
        out.push(SandwichMargin { k, lower_margin, upper_margin, scale: p_k.norm() });
    }
    Ok(out)
}

/// Necessary criterion for a uniformly bounded time-varying run: the
/// observational precision relative to the background uncertainty must beat
/// the leading instability.
pub fn necessary_criterion_tv(stats: &FilterStats, spectrum: &SpectrumEstimate) -> CriterionReport {
    let lambda1 = spectrum.lambdas[0];
    let sup_sigma1_sq = stats.beta;
    let ratio = (2.0 * lambda1).exp() / (1.0 + sup_sigma1_sq);
    CriterionReport { lambda1, sup_sigma1_sq, ratio, satisfied: ratio < 1.0 }
}

/// Normalized eigenvector of `a` for the eigenvalue `mu`, from the smallest
/// singular direction of `a - mu I`.
fn complex_eigenvector(a: &DMatrix<f64>, mu: Complex<f64>) -> DVector<Complex<f64>> {
    let n = a.nrows();
    let mut shifted = a.map(|v| Complex::new(v, 0.0));
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut best = 0;
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if sv < &svd.singular_values[best] {
            best = i;
        }
    }
    let v = v_t.row(best).adjoint();
    let norm = v.norm();
    v / Complex::new(norm, 0.0)
}

fn hermitian_value(m: &DMatrix<f64>, v: &DVector<Complex<f64>>) -> f64 {
    let mc = m.map(|x| Complex::new(x, 0.0));
    (v.adjoint() * mc * v)[(0, 0)].re
}

/// Iterates the Riccati recursion of an autonomous system to its fixed point
/// and evaluates the per-eigenvector bounds and the necessary criterion.
///
/// Bound checks cover the eigenvectors of `M^T`; defective eigenvalues get
/// the direction of smallest singular value, which is an eigenvector of the
/// geometric eigenspace.
pub fn autonomous_stable_riccati(
    m: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> LabResult<AutonomousReport> {
    let omega = precision_matrix(h, r)?;
    let mut p = Covariance::new(q.clone())?;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < max_iter {
        let next = riccati_step(&p, m, &omega, q)?;
        change = (&next.0 - &p.0).norm();
        p = next;
        iterations += 1;
        if change < tol {
            break;
        }
    }
    if change >= tol {
        return Err(LabError::NonConvergence {
            what: "autonomous Riccati iteration".into(),
            residual: change,
        });
    }
    let refreshed = riccati_step(&p, m, &omega, q)?;
    let residual = (&refreshed.0 - &p.0).norm() / p.0.norm().max(f64::MIN_POSITIVE);

    let x_hat = cholesky_factor(&p)?.0;
    let s = symmetrize(x_hat.transpose() * &omega.0 * &x_hat);
    let eigs = s.symmetric_eigen().eigenvalues;
    let alpha = eigs.iter().fold(f64::INFINITY, |acc, &l| acc.min(l.abs()));
    let beta = eigs.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));

    let mt = m.transpose();
    let mut mus: Vec<Complex<f64>> = mt.complex_eigenvalues().iter().cloned().collect();
    mus.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());

    let mut eigen_checks = Vec::with_capacity(mus.len());
    let mut criterion: Option<AutonomousCriterion> = None;
    for (index, mu) in mus.iter().enumerate() {
        let v = complex_eigenvector(&mt, *mu);
        let lambda = mu.norm().ln();
        let p_value = hermitian_value(&p.0, &v);
        let q_value = hermitian_value(q, &v);

        let growth = (2.0 * lambda).exp();
        let upper_margin = if growth < 1.0 + alpha {
            Some(q_value / (1.0 - growth / (1.0 + alpha)) - p_value)
        } else {
            None
        };
        let lower_margin = if growth < 1.0 + beta {
            Some(p_value - q_value / (1.0 - growth / (1.0 + beta)))
        } else {
            None
        };
        eigen_checks.push(EigenBoundCheck {
            mu_re: mu.re,
            mu_im: mu.im,
            lambda,
            q_value,
            p_value,
            upper_margin,
            lower_margin,
        });

        if criterion.is_none() {
            let qv_norm = (q.map(|x| Complex::new(x, 0.0)) * &v).norm();
            if qv_norm > 1e-12 {
                let ratio = growth / (1.0 + beta);
                criterion = Some(AutonomousCriterion {
                    mode_index: index + 1,
                    lambda,
                    ratio,
                    satisfied: ratio < 1.0,
                });
            }
        }
    }
    let criterion = criterion.ok_or_else(|| {
        LabError::Degeneracy("every eigenvector of M^T lies in the null space of Q".into())
    })?;

    Ok(AutonomousReport { p_hat: p, x_hat, alpha, beta, residual, iterations, eigen_checks, criterion })
}

/// Estimates the smallest window beyond which sampled growth rates of mode
/// `mode` (1-based) stay within `epsilon` of the estimated exponent.
///
/// Rates come from accumulated triangle rows with log rescaling, so long
/// windows neither overflow nor underflow. Windows up to half the run length
/// are tested at `samples` anchor steps.
pub fn epsilon_window_estimate(
    run: &LyapunovRun,
    mode: usize,
    epsilon: f64,
    samples: usize,
) -> LabResult<EpsilonWindowEstimate> {
    if epsilon <= 0.0 {
        return Err(LabError::Config("epsilon slack must be positive".into()));
    }
    if samples == 0 {
        return Err(LabError::Config("need at least one sample anchor".into()));
    }
    if run.is_empty() {
        return Err(LabError::Config("epsilon window needs a nonempty run".into()));
    }
    let n = run.triangles[0].dim();
    if mode < 1 || mode > n {
        return Err(LabError::Config(format!("mode {mode} out of range 1..={n}")));
    }
    let total = run.len();
    let w_max = (total / 2).max(1);
    let spectrum = crate::lyapunov::lyapunov_spectrum(run, 0, 0.005)?;
    let lambda = spectrum.lambdas[mode - 1];

    let anchors: Vec<usize> = (0..samples)
        .map(|s| w_max + ((total - w_max) * (s + 1)) / (samples + 1))
        .collect();

    let mut ok_at = vec![true; w_max];
    for &anchor in &anchors {
        let mut row = DVector::<f64>::zeros(n);
        row[mode - 1] = 1.0;
        let mut log_norm = 0.0f64;
        for w in 1..=w_max {
            row = run.triangles[anchor - w].0.transpose() * row;
            let nrm = row.norm();
            log_norm += nrm.ln();
            row /= nrm;
            let rate = log_norm / w as f64;
            if (rate - lambda).abs() >= epsilon {
                ok_at[w - 1] = false;
            }
        }
    }
    let mut n_eps = None;
    for w in (1..=w_max).rev() {
        if ok_at[w - 1] {
            n_eps = Some(w);
        } else {
            break;
        }
    }
    Ok(EpsilonWindowEstimate { mode, epsilon, n_eps, w_max, lambda })
}

/// Closed-form asymptotic bound values from the exponent, the slack, the
/// uniform window and the precision statistics. The Gramian constants
/// `c_alpha` and `c_beta` are the eigenvalue extremes of the weighted
/// controllability matrices over windows of length `n_eps`.
#[allow(clippy::too_many_arguments)]
pub fn tv_bound_values(
    lambda: f64,
    epsilon: f64,
    n_eps: usize,
    alpha: f64,
    beta: f64,
    q_sup: f64,
    q_inf: f64,
    c_alpha: f64,
    c_beta: f64,
) -> TvBoundValues {
    let r_up = (2.0 * (lambda + epsilon)).exp() / (1.0 + alpha);
    let upper = if r_up < 1.0 {
        Some(c_alpha + r_up.powi(n_eps as i32 + 1) * q_sup / (1.0 - r_up))
    } else {
        None
    };
    let r_lo = (2.0 * (lambda - epsilon)).exp() / (1.0 + beta);
    let lower = if q_inf == 0.0 {
        c_beta
    } else if r_lo < 1.0 {
        c_beta + r_lo.powi(n_eps as i32 + 1) * q_inf / (1.0 - r_lo)
    } else {
        f64::INFINITY
    };
    TvBoundValues { upper, lower }
}
