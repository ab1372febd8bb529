use serde_json::json;
use unstable_lab::error::LabResult;
use unstable_lab::lyapunov::{blv_spinup, OrthoFrame, RunDirection};
use unstable_lab::model::PropagatorSequence;

use crate::artifacts::{ensure_lyapunov, ensure_propagators, lyapunov_hash, write_summary};
use crate::commands::{trusted_spectrum, CsvWriter};
use crate::config::ExperimentConfig;

/// Builds both Lyapunov runs, reports the spectrum in per-step and per-time
/// conventions, and records the spin-up convergence diagnostic.
pub fn run(config: &ExperimentConfig) -> LabResult<()> {
    let props = ensure_propagators(config)?;
    let blv = ensure_lyapunov(config, &props, RunDirection::ForwardBlv)?;
    let flv = ensure_lyapunov(config, &props, RunDirection::BackwardAdjointFlv)?;

    let spectrum = trusted_spectrum(config, &blv)?;
    let flv_spectrum = trusted_spectrum(config, &flv)?;

    let n = config.model.dim;
    let head = PropagatorSequence {
        mats: props.mats[..config.lyapunov.spinup].to_vec(),
        states: props.states[..=config.lyapunov.spinup].to_vec(),
        config: props.config.clone(),
    };
    let (_, diag) = blv_spinup(&head, &OrthoFrame::identity(n), 100, 1e-9)?;
    let final_angles = diag.companion_angles.last().cloned().unwrap_or_default();

    let mut csv = CsvWriter::create(config, "spectrum.csv", "i,lambda_per_step,lambda_per_time")?;
    for (i, lambda) in spectrum.lambdas.iter().enumerate() {
        csv.row(&[
            (i + 1).to_string(),
            lambda.to_string(),
            (lambda / config.model.delta).to_string(),
        ])?;
    }
    let csv_path = csv.finish()?;

    let worst_gap = spectrum
        .lambdas
        .iter()
        .zip(&flv_spectrum.lambdas)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let summary = json!({
        "config_hash": lyapunov_hash(config)?,
        "n0": spectrum.n0,
        "neutral_tol": spectrum.neutral_tol,
        "k_used": spectrum.k_used,
        "lambdas_per_step": spectrum.lambdas,
        "lambdas_per_time": spectrum.lambdas.iter().map(|l| l / config.model.delta).collect::<Vec<_>>(),
        "flv_lambdas_per_step": flv_spectrum.lambdas,
        "blv_flv_worst_gap": worst_gap,
        "spinup_converged_at": diag.converged_at,
        "spinup_final_angles": final_angles,
    });
    let summary_path = write_summary(config, "lyapunov_summary.json", &summary)?;

    println!(
        "spectrum over {} steps: n0 = {}, lambda1 = {:.4}/step, blv-flv gap {:.1e}",
        spectrum.k_used, spectrum.n0, spectrum.lambdas[0], worst_gap
    );
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}
