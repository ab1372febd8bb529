use serde_json::json;
use unstable_lab::error::LabResult;
use unstable_lab::lyapunov::{lle_series, LyapunovRun, RunDirection};

use crate::artifacts::{ensure_lyapunov, ensure_propagators, lyapunov_hash, write_summary};
use crate::commands::{retained_psi, trusted_spectrum, CsvWriter};
use crate::config::ExperimentConfig;

/// Emits the free-perturbation series for every stable mode together with
/// the window-1 local exponents of the two leading stable modes.
pub fn run(config: &ExperimentConfig) -> LabResult<()> {
    let props = ensure_propagators(config)?;
    let blv = ensure_lyapunov(config, &props, RunDirection::ForwardBlv)?;
    let spectrum = trusted_spectrum(config, &blv)?;
    let n0 = spectrum.n0;
    let psi = retained_psi(config, &blv, n0)?;

    let start = config.lyapunov.spinup + config.filter.spinup;
    let window = LyapunovRun {
        frames: Vec::new(),
        triangles: blv.triangles[start..start + config.filter.k_avg].to_vec(),
        direction: blv.direction,
        spinup_used: 0,
    };
    let lle = lle_series(&window, 1)?;

    let n = config.model.dim;
    let stable_modes: Vec<usize> = (n0 + 1..=n).collect();
    let header = format!(
        "k,{},lle_{},lle_{}",
        stable_modes.iter().map(|i| format!("psi_{i}")).collect::<Vec<_>>().join(","),
        n0 + 1,
        n0 + 2,
    );
    let mut csv = CsvWriter::create(config, "psi.csv", &header)?;
    for k in 1..=config.filter.k_avg {
        let mut fields = vec![k.to_string()];
        for &mode in &stable_modes {
            fields.push(psi.mode(mode)?[k].to_string());
        }
        fields.push(lle.values[n0][k - 1].to_string());
        fields.push(lle.values[n0 + 1][k - 1].to_string());
        csv.row(&fields)?;
    }
    let csv_path = csv.finish()?;

    let mut means = serde_json::Map::new();
    let mut maxima = serde_json::Map::new();
    for &mode in &stable_modes {
        means.insert(format!("mean_psi_{mode}"), psi.mean(mode)?.into());
        maxima.insert(format!("max_psi_{mode}"), psi.max(mode)?.into());
    }
    let summary = json!({
        "config_hash": lyapunov_hash(config)?,
        "n0": n0,
        "window_start": start,
        "window_len": config.filter.k_avg,
        "trunc_tol": config.psi.trunc_tol,
        "means": means,
        "maxima": maxima,
        "psi_min": psi.values.iter().flat_map(|v| v.iter().cloned()).fold(f64::INFINITY, f64::min),
        "lle_std": { format!("mode_{}", n0 + 1): lle.std(n0), format!("mode_{}", n0 + 2): lle.std(n0 + 1) },
    });
    let summary_path = write_summary(config, "psi_summary.json", &summary)?;

    println!(
        "psi over {} steps: mean psi_{} = {:.1}, mean psi_{} = {:.2}",
        config.filter.k_avg,
        n0 + 1,
        psi.mean(n0 + 1)?,
        n0 + 2,
        psi.mean(n0 + 2)?
    );
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}
