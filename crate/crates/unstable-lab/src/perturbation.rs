//! Free evolution of unfiltered perturbations in the stable Lyapunov modes.
//!
//! With model error drawn uncorrelated in the moving frame of backward
//! Lyapunov vectors, the variance of the never-filtered error along a stable
//! vector is a sum of squared row norms of accumulated triangular
//! transitions. Upper triangularity confines the stable rows to the stable
//! block, so the series can be evaluated from small stable-block products
//! alone, immune to the unstable growth that makes direct covariance
//! propagation useless at long horizons. The direct propagation survives as
//! a short-horizon cross-check, carried out in extended precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, LabResult};
use crate::hp::{Wide, WideMatrix};
use crate::lyapunov::{LyapunovRun, TransitionTriangle};
use crate::model::PropagatorSequence;

/// Time series of the variance multiplier of free perturbations, one row per
/// stable mode.
#[derive(Debug, Clone)]
pub struct PsiSeries {
    /// Index of the last non-negative exponent; stable modes are `n0+1..=n`
    /// in 1-based physical numbering.
    pub n0: usize,
    /// Early-exit threshold on the squared Frobenius norm of the accumulated
    /// stable block.
    pub trunc_tol: f64,
    /// `values[m][k]` is the series of stable mode `n0 + 1 + m` at step `k`.
    pub values: Vec<Vec<f64>>,
}

impl PsiSeries {
    /// Series of one stable mode by its 1-based physical index (`n0+1..=n`).
    pub fn mode(&self, i: usize) -> LabResult<&[f64]> {
        if i <= self.n0 || i > self.n0 + self.values.len() {
            return Err(LabError::Config(format!(
                "mode {i} is not a stable mode (n0 = {}, {} stable modes)",
                self.n0,
                self.values.len()
            )));
        }
        Ok(&self.values[i - self.n0 - 1])
    }

    pub fn mean(&self, i: usize) -> LabResult<f64> {
        let v = self.mode(i)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn max(&self, i: usize) -> LabResult<f64> {
        Ok(self.mode(i)?.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lower-right block of an upper triangle, rows and columns `n0+1..=n`.
///
/// Products of stable blocks equal stable blocks of products, which is what
/// makes the series computable without touching unstable entries.
pub fn stable_block(t: &TransitionTriangle, n0: usize) -> LabResult<DMatrix<f64>> {
    let n = t.dim();
    if n0 < 1 || n0 >= n {
        return Err(LabError::Config(format!(
            "stable split n0 = {n0} must satisfy 1 <= n0 < n = {n}"
        )));
    }
    let s = n - n0;
    Ok(t.0.view((n0, n0), (s, s)).into_owned())
}

/// Variance multipliers of free perturbations for every stable mode at every
/// step `k = 0..=K`, where `K` is the number of triangles.
///
/// The value at step `k` accumulates squared row norms of the products
/// `T^s_k`, `T^s_k T^s_{k-1}`, ... plus the unit contribution of the empty
/// product. One backward pass per `k` reuses the running product across all
/// stable modes, and stops once its squared Frobenius norm falls below
/// `trunc_tol`, every later term being smaller still.
pub fn psi_series(
    triangles: &[TransitionTriangle],
    n0: usize,
    trunc_tol: f64,
) -> LabResult<PsiSeries> {
    if triangles.is_empty() {
        return Err(LabError::Config("psi series needs at least one triangle".into()));
    }
    let blocks: Vec<DMatrix<f64>> = triangles
        .iter()
        .map(|t| stable_block(t, n0))
        .collect::<LabResult<_>>()?;
    let s = blocks[0].nrows();
    let steps = triangles.len() + 1;
    let mut values = vec![Vec::with_capacity(steps); s];

    for row in values.iter_mut() {
        row.push(1.0); // step 0: only the empty product contributes
    }
    let mut acc = DMatrix::<f64>::zeros(s, s);
    for k in 1..steps {
        let mut psi = vec![1.0f64; s];
        acc.fill_with_identity();
        for j in (0..k).rev() {
            acc *= &blocks[j];
            for (m, psi_m) in psi.iter_mut().enumerate() {
                *psi_m += acc.row(m).norm_squared();
            }
            if acc.norm_squared() < trunc_tol {
                break;
            }
        }
        for (m, &psi_m) in psi.iter().enumerate() {
            values[m].push(psi_m);
        }
    }
    Ok(PsiSeries { n0, trunc_tol, values })
}

/// Direct covariance propagation in state coordinates, in extended
/// precision, returning the Lyapunov-frame diagonal at every step.
///
/// Model error is `Q_k = B_k D B_k^T` for a fixed diagonal `D`, the initial
/// covariance is `Q_0`, and no filtering takes place. The value at step `k`
/// and mode `i` is `(B^i_k)^T P_k B^i_k`; for stable modes with `D = I` this
/// reproduces the triangular series of [`psi_series`], which is the point of
/// keeping this oracle fully independent of the triangle algebra. Frames are
/// indexed globally, aligned with the propagator steps, and the window
/// starts at `start`.
pub fn unfiltered_covariance_oracle(
    props: &PropagatorSequence,
    start: usize,
    blv: &LyapunovRun,
    d_diag: &DVector<f64>,
    k_max: usize,
) -> LabResult<Vec<DVector<f64>>> {
    let n = props.config.dim;
    if d_diag.len() != n {
        return Err(LabError::InvalidDimension(format!(
            "diagonal has {} entries for state dimension {n}",
            d_diag.len()
        )));
    }
    if d_diag.iter().any(|&v| v < 0.0) {
        return Err(LabError::Degeneracy(
            "diagonal model-error weights must be non-negative".into(),
        ));
    }
    if start + k_max > props.len() || start + k_max >= blv.frames.len() {
        return Err(LabError::Config(format!(
            "oracle window [{start}, {}] exceeds available propagators or frames",
            start + k_max
        )));
    }

    let wide_d: Vec<Wide> = d_diag.iter().map(|&v| Wide::from_f64(v)).collect();
    let frame_noise = |k: usize| -> WideMatrix {
        // B_k D B_k^T, assembled entry by entry from the f64 frame.
        let b = &blv.frames[start + k].0;
        let mut q = WideMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let mut entry = Wide::zero();
                for j in 0..n {
                    let w = Wide::from_f64(b[(r, j)]).mul(&Wide::from_f64(b[(c, j)]));
                    entry = entry.add(&w.mul(&wide_d[j]));
                }
                *q.get_mut(r, c) = entry;
            }
        }
        q
    };
    let extract = |p: &WideMatrix, k: usize| -> DVector<f64> {
        let b = &blv.frames[start + k].0;
        DVector::from_fn(n, |i, _| p.bilinear(&b.column(i).into_owned()).to_f64())
    };

    let mut p = frame_noise(0);
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(extract(&p, 0));
    for k in 1..=k_max {
        let m = WideMatrix::from_f64(&props.mats[start + k - 1]);
        p = m.matmul(&p).matmul_transpose(&m).add(&frame_noise(k));
        out.push(extract(&p, k));
    }
    Ok(out)
}
