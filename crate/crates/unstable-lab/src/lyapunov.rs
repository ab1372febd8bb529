//! Backward and forward Lyapunov vectors by recursive QR.
//!
//! One QR step writes the propagator in a moving orthonormal frame,
//! `M_k B_{k-1} = B_k T_k`, with `T_k` upper triangular with positive
//! diagonal. Iterating forward from a generic frame converges to the backward
//! Lyapunov vectors; iterating the transposed propagators backward in time
//! converges to the forward Lyapunov vectors. Time averages of the
//! log-diagonals of `T_k` estimate the Lyapunov spectrum, and single-step
//! log-diagonals are the local (one-step) exponents.
//!
//! The positive-diagonal convention makes the factors unique for full-rank
//! input, so runs are exactly reproducible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::model::PropagatorSequence;

/// Orthonormal frame whose columns are Lyapunov vectors at one step, ordered
/// leading to trailing.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoFrame(pub DMatrix<f64>);

impl OrthoFrame {
    /// Identity frame of dimension `n`.
    pub fn identity(n: usize) -> Self {
        OrthoFrame(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Largest deviation of `Q^T Q` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        (self.0.transpose() * &self.0 - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Leading `d` columns as an `n x d` matrix.
    pub fn leading(&self, d: usize) -> DMatrix<f64> {
        self.0.columns(0, d).into_owned()
    }
}

/// Upper-triangular transition map between consecutive frames, with strictly
/// positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTriangle(pub DMatrix<f64>);

impl TransitionTriangle {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }
}

/// Direction of a QR recursion run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunDirection {
    /// Forward iteration of the propagators; frames estimate the BLVs.
    ForwardBlv,
    /// Backward iteration of the transposed propagators; frames estimate the FLVs.
    BackwardAdjointFlv,
}

/// Frames and triangles of one QR recursion over a propagator sequence.
///
/// `frames[j]` lives at step `j` and `triangles[j]` pairs with propagator
/// `j`, so a run over `K` propagators holds `K + 1` frames and `K` triangles.
/// For a forward run, `M_j * frames[j] = frames[j+1] * T_j`; for a backward
/// adjoint run, `M_j^T * frames[j+1] = frames[j] * T_j`.
#[derive(Debug, Clone)]
pub struct LyapunovRun {
    pub frames: Vec<OrthoFrame>,
    pub triangles: Vec<TransitionTriangle>,
    pub direction: RunDirection,
    pub spinup_used: usize,
}

impl LyapunovRun {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Largest relative residual of the reconstruction identity over the run.
    pub fn reconstruction_defect(&self, props: &PropagatorSequence) -> f64 {
        let mut worst = 0.0f64;
        for (j, m) in props.mats.iter().enumerate().take(self.len()) {
            let residual = match self.direction {
                RunDirection::ForwardBlv => m * &self.frames[j].0 - &self.frames[j + 1].0 * &self.triangles[j].0,
                RunDirection::BackwardAdjointFlv => {
                    m.transpose() * &self.frames[j + 1].0 - &self.frames[j].0 * &self.triangles[j].0
                }
            };
            worst = worst.max(residual.norm() / m.norm());
        }
        worst
    }
}

/// Estimated Lyapunov spectrum, per discrete step in natural log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Exponents in frame order (descending for a converged run).
    pub lambdas: Vec<f64>,
    /// Index of the last non-negative exponent under `neutral_tol`
    /// (1-based count of unstable plus neutral modes).
    pub n0: usize,
    /// Number of steps averaged.
    pub k_used: usize,
    /// Threshold below which an exponent counts as non-negative.
    pub neutral_tol: f64,
}

/// Windowed local Lyapunov exponents read from triangle diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct LleSeries {
    /// `values[i][t]` is the window-averaged exponent of mode `i` for the
    /// window ending at triangle `t + window - 1`.
    pub values: Vec<Vec<f64>>,
    pub window: usize,
}

impl LleSeries {
    /// Mean of the series for one mode (0-based).
    pub fn mean(&self, mode: usize) -> f64 {
        let v = &self.values[mode];
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Standard deviation of the series for one mode (0-based).
    pub fn std(&self, mode: usize) -> f64 {
        let v = &self.values[mode];
        let mean = self.mean(mode);
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// QR factorization normalized to a positive diagonal of `R`.
///
/// Unique for numerically full-rank input; a diagonal entry of `R` below
/// `1e-14 * ||A||` is rejected as rank deficiency.
pub fn qr_positive(a: &DMatrix<f64>) -> LabResult<(OrthoFrame, TransitionTriangle)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LabError::InvalidDimension(format!(
            "qr_positive needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let scale = a.norm();
    for i in 0..n {
        let d = r[(i, i)];
        if d.abs() <= 1e-14 * scale {
            return Err(LabError::Degeneracy(format!(
                "rank-deficient input: |R[{i},{i}]| = {:.3e} <= 1e-14 * ||A||",
                d.abs()
            )));
        }
        if d < 0.0 {
            // Flip the sign of column i of Q and row i of R.
            for k in 0..n {
                q[(k, i)] = -q[(k, i)];
            }
            for k in i..n {
                r[(i, k)] = -r[(i, k)];
            }
        }
    }
    // Zero out subdiagonal roundoff so the triangle invariant is exact.
    for i in 1..n {
        for j in 0..i {
            r[(i, j)] = 0.0;
        }
    }
    Ok((OrthoFrame(q), TransitionTriangle(r)))
}

/// Convergence record of a spin-up iteration.
#[derive(Debug, Clone)]
pub struct SpinupDiagnostics {
    /// Per step, per column: sine of the angle between the column of the
    /// current frame and the same column one step earlier. Stationary frames
    /// (autonomous systems after convergence) drive this to zero; for
    /// time-varying systems it reflects the frame rotation itself.
    pub successive_angles: Vec<Vec<f64>>,
    /// Per step, per leading-subspace dimension `j`: sine of the largest
    /// principal angle between the leading-`j` spans of the iterated frame
    /// and of a companion frame started from a scrambled initialization.
    /// Both runs forget their initialization, so this measures convergence
    /// to the backward Lyapunov subspaces even when those rotate in time.
    pub companion_angles: Vec<Vec<f64>>,
    /// First step at or after `min_steps` where every companion angle fell
    /// below the tolerance; `None` if that never happened.
    pub converged_at: Option<usize>,
}

/// Largest principal angle (as a sine) between the column spans of two
/// orthonormal `n x j` blocks.
fn subspace_sin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // sin(theta_max) = || (I - A A^T) B ||_2
    let residual = b - a * (a.transpose() * b);
    residual.clone().svd(false, false).singular_values.max()
}

/// Iterates the QR recursion over a prefix of `props` to converge a frame
/// toward the backward Lyapunov vectors.
///
/// Returns the final frame and per-step convergence diagnostics. Failure to
/// reach `angle_tol` is reported through the diagnostics, not as an error.
pub fn blv_spinup(
    props: &PropagatorSequence,
    q0: &OrthoFrame,
    min_steps: usize,
    angle_tol: f64,
) -> LabResult<(OrthoFrame, SpinupDiagnostics)> {
    if props.len() < min_steps {
        return Err(LabError::Config(format!(
            "spin-up needs at least {min_steps} propagators, have {}",
            props.len()
        )));
    }
    let n = q0.dim();
    // Deterministic scrambled companion: reverse the columns of q0.
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        companion.set_column(j, &q0.0.column(n - 1 - j));
    }

    let mut q = q0.0.clone();
    let mut diag = SpinupDiagnostics {
        successive_angles: Vec::with_capacity(props.len()),
        companion_angles: Vec::with_capacity(props.len()),
        converged_at: None,
    };

    for (step, m) in props.mats.iter().enumerate() {
        let (next, _) = qr_positive(&(m * &q))?;
        let (next_companion, _) = qr_positive(&(m * &companion))?;

        let per_column = (0..n)
            .map(|c| {
                let old = q.column(c);
                let new = next.0.column(c);
                let overlap = new.dot(&old);
                (old - new * overlap).norm()
            })
            .collect();
        let per_subspace = (1..=n)
            .map(|j| {
                subspace_sin(
                    &next.0.columns(0, j).into_owned(),
                    &next_companion.0.columns(0, j).into_owned(),
                )
            })
            .collect::<Vec<_>>();

        if diag.converged_at.is_none()
            && step + 1 >= min_steps
            && per_subspace.iter().all(|&s| s <= angle_tol)
        {
            diag.converged_at = Some(step + 1);
        }
        diag.successive_angles.push(per_column);
        diag.companion_angles.push(per_subspace);

        q = next.0;
        companion = next_companion.0;
    }

    Ok((OrthoFrame(q), diag))
}

/// Runs the forward QR recursion over every propagator, starting from
/// `b_start`, and records all frames and triangles.
pub fn blv_run(props: &PropagatorSequence, b_start: &OrthoFrame) -> LabResult<LyapunovRun> {
    let mut frames = Vec::with_capacity(props.len() + 1);
    let mut triangles = Vec::with_capacity(props.len());
    frames.push(b_start.clone());
    let mut q = b_start.0.clone();
    for m in &props.mats {
        let (frame, triangle) = qr_positive(&(m * &q))?;
        q = frame.0.clone();
        frames.push(frame);
        triangles.push(triangle);
    }
    Ok(LyapunovRun { frames, triangles, direction: RunDirection::ForwardBlv, spinup_used: 0 })
}

/// Runs the QR recursion backward with transposed propagators, starting from
/// `f_end` at the final step; frames estimate the forward Lyapunov vectors,
/// ordered leading-exponent-first.
pub fn flv_run(props: &PropagatorSequence, f_end: &OrthoFrame) -> LabResult<LyapunovRun> {
    let k = props.len();
    let mut frames = vec![f_end.clone(); k + 1];
    let mut triangles = Vec::with_capacity(k);
    let mut q = f_end.0.clone();
    for j in (0..k).rev() {
        let (frame, triangle) = qr_positive(&(props.mats[j].transpose() * &q))?;
        q = frame.0.clone();
        frames[j] = frame;
        triangles.push(triangle);
    }
    triangles.reverse();
    Ok(LyapunovRun { frames, triangles, direction: RunDirection::BackwardAdjointFlv, spinup_used: 0 })
}

/// Averages log-diagonals of the triangles, discarding the first `discard`
/// steps, and classifies the neutral split with `neutral_tol`.
pub fn lyapunov_spectrum(run: &LyapunovRun, discard: usize, neutral_tol: f64) -> LabResult<SpectrumEstimate> {
    let total = run.len();
    if total <= discard {
        return Err(LabError::Config(format!(
            "spectrum needs at least one retained step: {total} triangles, discard {discard}"
        )));
    }
    let n = run.triangles[0].dim();
    let k_used = total - discard;
    let mut sums = vec![0.0f64; n];
    for t in &run.triangles[discard..] {
        for i in 0..n {
            sums[i] += t.0[(i, i)].ln();
        }
    }
    let lambdas: Vec<f64> = sums.into_iter().map(|s| s / k_used as f64).collect();
    let n0 = lambdas.iter().filter(|&&l| l >= -neutral_tol).count();
    Ok(SpectrumEstimate { lambdas, n0, k_used, neutral_tol })
}

/// Local exponents over sliding windows of `window` triangles.
///
/// The diagonal of a product of upper triangles is the product of the
/// diagonals, so the windowed exponent is the mean of the one-step
/// log-diagonals.
pub fn lle_series(run: &LyapunovRun, window: usize) -> LabResult<LleSeries> {
    if window < 1 {
        return Err(LabError::Config("LLE window must be at least 1".into()));
    }
    if window > run.len() {
        return Err(LabError::Config(format!(
            "LLE window {window} exceeds run length {}",
            run.len()
        )));
    }
    let n = run.triangles[0].dim();
    let logs: Vec<Vec<f64>> = (0..n)
        .map(|i| run.triangles.iter().map(|t| t.0[(i, i)].ln()).collect())
        .collect();
    if window == 1 {
        // Window-1 exponents are the log-diagonals themselves, bit for bit.
        return Ok(LleSeries { values: logs, window });
    }
    let count = run.len() - window + 1;
    let values = logs
        .iter()
        .map(|series| {
            let mut out = Vec::with_capacity(count);
            let mut acc: f64 = series[..window].iter().sum();
            out.push(acc / window as f64);
            for t in window..series.len() {
                acc += series[t] - series[t - window];
                out.push(acc / window as f64);
            }
            out
        })
        .collect();
    Ok(LleSeries { values, window })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_propagators, ModelConfig};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn constant_props(m: DMatrix<f64>, k: usize) -> PropagatorSequence {
        let n = m.nrows();
        PropagatorSequence {
            mats: vec![m; k],
            states: vec![nalgebra::DVector::zeros(n); k + 1],
            config: ModelConfig { dim: n, windows: k, ..ModelConfig::default() },
        }
    }

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn qr_of_identity_is_identity() {
        let (q, r) = qr_positive(&DMatrix::<f64>::identity(4, 4)).unwrap();
        assert_eq!(q.0, DMatrix::<f64>::identity(4, 4));
        assert_eq!(r.0, DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn qr_of_positive_diagonal_is_trivial() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 1.0, 0.5]);
        let (q, r) = qr_positive(&a).unwrap();
        assert!((q.0 - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        assert!((r.0 - a).amax() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_random_matrices() {
        for seed in 0..10 {
            let a = random_matrix(5, seed);
            let (q, r) = qr_positive(&a).unwrap();
            assert!(q.orthonormality_defect() < 1e-13);
            assert!((&q.0 * &r.0 - &a).amax() < 1e-13);
            assert!(r.0.diagonal().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn qr_rejects_rank_deficiency() {
        let mut a = random_matrix(4, 3);
        let col = a.column(0).into_owned();
        a.set_column(2, &col); // duplicate column
        assert!(matches!(qr_positive(&a), Err(LabError::Degeneracy(_))));
    }

    #[test]
    fn spinup_converges_to_eigenvectors_of_diagonal_map() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 0.5]);
        let props = constant_props(m, 200);
        // Generic rotation as the starting frame.
        let theta: f64 = 0.7;
        let q0 = OrthoFrame(DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        ));
        let (q, diag) = blv_spinup(&props, &q0, 10, 1e-12).unwrap();
        assert!((q.0.map(|v| v.abs()) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!(diag.converged_at.is_some());
    }

    #[test]
    fn spinup_is_stationary_when_started_on_invariant_frame() {
        // Normal (symmetric) autonomous map: BLVs are its eigenvectors.
        let theta: f64 = 0.4;
        let v = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let m = &v * DMatrix::from_diagonal(&nalgebra::dvector![3.0, 0.25]) * v.transpose();
        let props = constant_props(m, 50);
        let (_, diag) = blv_spinup(&props, &OrthoFrame(v.clone()), 1, 1e-12).unwrap();
        for angles in &diag.successive_angles {
            assert!(angles.iter().all(|&a| a < 1e-12), "frame moved: {angles:?}");
        }
    }

    #[test]
    fn blv_run_on_identity_props_is_constant() {
        let props = constant_props(DMatrix::<f64>::identity(3, 3), 5);
        let run = blv_run(&props, &OrthoFrame::identity(3)).unwrap();
        for f in &run.frames {
            assert_eq!(f.0, DMatrix::<f64>::identity(3, 3));
        }
        for t in &run.triangles {
            assert_eq!(t.0, DMatrix::<f64>::identity(3, 3));
        }
    }

    #[test]
    fn blv_single_step_scaling() {
        let props = constant_props(DMatrix::<f64>::identity(3, 3) * 2.0, 1);
        let run = blv_run(&props, &OrthoFrame::identity(3)).unwrap();
        assert!((run.triangles[0].0.clone() - DMatrix::<f64>::identity(3, 3) * 2.0).amax() < 1e-15);
        assert_eq!(run.frames[1].0, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn l96_run_satisfies_reconstruction_identity() {
        let config = ModelConfig { spinup_steps: 200, windows: 300, seed: 4, ..ModelConfig::default() };
        let props = generate_propagators(&config).unwrap();
        let run = blv_run(&props, &OrthoFrame::identity(10)).unwrap();
        assert!(run.reconstruction_defect(&props) < 1e-12);
        for f in &run.frames {
            assert!(f.orthonormality_defect() < 1e-12);
        }
        for t in &run.triangles {
            assert!(t.0.diagonal().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn flv_equals_blv_for_symmetric_autonomous_maps() {
        let theta: f64 = 1.1;
        let v = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let m = &v * DMatrix::from_diagonal(&nalgebra::dvector![2.0, 0.3]) * v.transpose();
        let props = constant_props(m, 300);
        let blv = blv_run(&props, &OrthoFrame::identity(2)).unwrap();
        let flv = flv_run(&props, &OrthoFrame::identity(2)).unwrap();
        // Compare frames at the middle of the run, where both have converged,
        // column by column up to sign.
        let b = &blv.frames[150].0;
        let f = &flv.frames[150].0;
        for c in 0..2 {
            let overlap = b.column(c).dot(&f.column(c)).abs();
            assert!((overlap - 1.0).abs() < 1e-10, "column {c} overlap {overlap}");
        }
    }

    #[test]
    fn flv_run_on_identity_props_is_constant() {
        let props = constant_props(DMatrix::<f64>::identity(3, 3), 4);
        let run = flv_run(&props, &OrthoFrame::identity(3)).unwrap();
        for f in &run.frames {
            assert_eq!(f.0, DMatrix::<f64>::identity(3, 3));
        }
        assert!(run.reconstruction_defect(&props) < 1e-15);
    }

    #[test]
    fn spectrum_of_diagonal_map_is_exact() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 0.5]);
        let props = constant_props(m, 40);
        let run = blv_run(&props, &OrthoFrame::identity(2)).unwrap();
        let spec = lyapunov_spectrum(&run, 0, 0.005).unwrap();
        assert!((spec.lambdas[0] - 2f64.ln()).abs() < 1e-14);
        assert!((spec.lambdas[1] - 0.5f64.ln()).abs() < 1e-14);
        assert_eq!(spec.n0, 1);
    }

    #[test]
    fn spectrum_rejects_empty_window() {
        let props = constant_props(DMatrix::<f64>::identity(2, 2), 3);
        let run = blv_run(&props, &OrthoFrame::identity(2)).unwrap();
        assert!(matches!(lyapunov_spectrum(&run, 3, 0.005), Err(LabError::Config(_))));
    }

    #[test]
    fn lle_window_one_matches_log_diagonals() {
        let config = ModelConfig { spinup_steps: 100, windows: 50, seed: 6, ..ModelConfig::default() };
        let props = generate_propagators(&config).unwrap();
        let run = blv_run(&props, &OrthoFrame::identity(10)).unwrap();
        let lle = lle_series(&run, 1).unwrap();
        for (t, tri) in run.triangles.iter().enumerate() {
            for i in 0..10 {
                assert_eq!(lle.values[i][t], tri.0[(i, i)].ln());
            }
        }
    }

    #[test]
    fn lle_full_window_equals_spectrum() {
        let config = ModelConfig { spinup_steps: 100, windows: 60, seed: 8, ..ModelConfig::default() };
        let props = generate_propagators(&config).unwrap();
        let run = blv_run(&props, &OrthoFrame::identity(10)).unwrap();
        let spec = lyapunov_spectrum(&run, 0, 0.005).unwrap();
        let lle = lle_series(&run, run.len()).unwrap();
        for i in 0..10 {
            assert_eq!(lle.values[i].len(), 1);
            assert!((lle.values[i][0] - spec.lambdas[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn lle_of_autonomous_diagonal_map_is_constant() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![1.5, 0.7]);
        let props = constant_props(m, 30);
        let run = blv_run(&props, &OrthoFrame::identity(2)).unwrap();
        let lle = lle_series(&run, 5).unwrap();
        for series in &lle.values {
            for v in series {
                assert!((v - series[0]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lle_rejects_oversized_window() {
        let props = constant_props(DMatrix::<f64>::identity(2, 2), 3);
        let run = blv_run(&props, &OrthoFrame::identity(2)).unwrap();
        assert!(matches!(lle_series(&run, 4), Err(LabError::Config(_))));
    }

    #[test]
    fn lle_mean_equals_spectrum_estimate() {
        let config = ModelConfig { spinup_steps: 100, windows: 80, seed: 9, ..ModelConfig::default() };
        let props = generate_propagators(&config).unwrap();
        let run = blv_run(&props, &OrthoFrame::identity(10)).unwrap();
        let spec = lyapunov_spectrum(&run, 0, 0.005).unwrap();
        let lle = lle_series(&run, 1).unwrap();
        for i in 0..10 {
            assert!((lle.mean(i) - spec.lambdas[i]).abs() < 1e-13);
        }
    }
}
