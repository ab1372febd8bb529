use nalgebra::DMatrix;
use serde_json::json;
use unstable_lab::bounds::{
    epsilon_window_estimate, necessary_criterion_tv, sandwich_check, tv_bound_values,
    weighted_controllability,
};
use unstable_lab::error::LabResult;
use unstable_lab::kalman::{
    run_filter, run_filter_recorded, Covariance, FilterStats, ObservationDesign, ObservationKind,
};
use unstable_lab::lyapunov::{LyapunovRun, RunDirection};

use crate::artifacts::{ensure_lyapunov, ensure_propagators, lyapunov_hash, write_summary};
use crate::commands::{noise_for, trusted_spectrum, CsvWriter};
use crate::config::ExperimentConfig;

/// Criterion, sandwich and uniform-window reports for the configured run.
pub fn run(config: &ExperimentConfig) -> LabResult<()> {
    let props = ensure_propagators(config)?;
    let blv = ensure_lyapunov(config, &props, RunDirection::ForwardBlv)?;
    let spectrum = trusted_spectrum(config, &blv)?;

    let n = config.model.dim;
    let start = config.lyapunov.spinup;
    let p0 = Covariance(DMatrix::identity(n, n) * config.filter.p0_scale);
    let q_scale = config.filter.q_scale;
    let q_of = move |_: usize| DMatrix::<f64>::identity(n, n) * q_scale;

    // Fully observed run with recorded covariances for the sandwich.
    let full_noise = noise_for(config, n)?;
    let (full_stats, history) = run_filter_recorded(
        &props,
        start,
        &ObservationDesign::new(ObservationKind::Full, n),
        &full_noise,
        &p0,
        config.filter.spinup,
        config.filter.k_avg,
        true,
    )?;
    let full_criterion = necessary_criterion_tv(&full_stats, &spectrum);

    let horizon = config.bounds.horizon.min(history.len().saturating_sub(1));
    let margins = sandwich_check(
        &history,
        &props,
        start,
        &p0,
        full_stats.alpha,
        full_stats.beta,
        &q_of,
        horizon,
    )?;
    let mut csv = CsvWriter::create(config, "sandwich_margins.csv", "k,lower_margin,upper_margin,scale")?;
    let mut min_rel_margin = f64::INFINITY;
    for m in &margins {
        min_rel_margin = min_rel_margin
            .min(m.lower_margin / m.scale)
            .min(m.upper_margin / m.scale);
        csv.row(&[
            m.k.to_string(),
            m.lower_margin.to_string(),
            m.upper_margin.to_string(),
            m.scale.to_string(),
        ])?;
    }
    let csv_path = csv.finish()?;

    // Unobserved run: the covariance must grow without bound and violate the
    // necessary criterion.
    let unobs = run_filter(
        &props,
        start,
        &ObservationDesign::new(ObservationKind::FixedRows, 0),
        &noise_for(config, 0)?,
        &p0,
        0,
        100,
    )?;
    let mut unobs_stats = FilterStats::new();
    unobs_stats.beta = unobs.beta;
    let unobs_criterion = necessary_criterion_tv(&unobs_stats, &spectrum);
    // Robust growth signal: the late window dominates the early window
    // across a 20-step gap, on top of a large net factor, so single-step
    // dips from negative local exponents cannot mask the divergence.
    let series = &unobs.frobenius_series;
    let half = series.len() / 2;
    let early_max = series[..half.saturating_sub(10)].iter().cloned().fold(0.0f64, f64::max);
    let late_min = series[(half + 10).min(series.len() - 1)..]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let growth_factor = series.last().unwrap() / series.first().unwrap();
    let unbounded_growth = growth_factor > 1e3 && late_min > early_max;

    // Uniform-window estimates and closed-form bound values per stable mode.
    let total = blv.len();
    let trusted = LyapunovRun {
        frames: Vec::new(),
        triangles: blv.triangles[start..total - start].to_vec(),
        direction: blv.direction,
        spinup_used: start,
    };
    let mut mode_reports = Vec::new();
    for mode in spectrum.n0 + 1..=n {
        let est = epsilon_window_estimate(&trusted, mode, config.bounds.epsilon, config.bounds.samples)?;
        let tv = est.n_eps.map(|n_eps| {
            // Gramian constants over sampled windows of the estimated length.
            let window_len = n_eps.min(trusted.len() / 2).max(1);
            let anchors = [
                start + window_len,
                start + (total - 2 * start) / 2,
                total - start - 1,
            ];
            let mut c_alpha = f64::NEG_INFINITY;
            let mut c_beta = f64::INFINITY;
            for &k in &anchors {
                let xi_alpha =
                    weighted_controllability(&props, &q_of, full_stats.alpha, k, k - window_len)?;
                let xi_beta =
                    weighted_controllability(&props, &q_of, full_stats.beta, k, k - window_len)?;
                c_alpha = c_alpha.max(xi_alpha.symmetric_eigen().eigenvalues.max());
                c_beta = c_beta.min(xi_beta.symmetric_eigen().eigenvalues.min());
            }
            Ok::<_, unstable_lab::error::LabError>(tv_bound_values(
                est.lambda,
                config.bounds.epsilon,
                n_eps,
                full_stats.alpha,
                full_stats.beta,
                full_noise.q_sup,
                full_noise.q_inf,
                c_alpha,
                c_beta,
            ))
        });
        let tv = match tv {
            Some(result) => Some(result?),
            None => None,
        };
        mode_reports.push(json!({
            "mode": mode,
            "lambda": est.lambda,
            "epsilon": est.epsilon,
            "n_eps": est.n_eps,
            "w_max": est.w_max,
            "tv_upper": tv.as_ref().and_then(|t| t.upper),
            "tv_lower": tv.as_ref().map(|t| t.lower),
        }));
    }

    let report = json!({
        "run_hash": lyapunov_hash(config)?,
        "full_observation": {
            "criterion": full_criterion,
            "alpha": full_stats.alpha,
            "beta": full_stats.beta,
            "frobenius_mean": full_stats.frobenius_mean,
        },
        "unobserved": {
            "criterion": unobs_criterion,
            "unbounded_growth": unbounded_growth,
            "growth_factor": growth_factor,
        },
        "sandwich": {
            "horizon": horizon,
            "min_relative_margin": min_rel_margin,
            "margins_csv": csv_path,
        },
        "epsilon_windows": mode_reports,
    });
    let report_path = write_summary(config, "bounds_report.json", &report)?;

    println!(
        "full-obs criterion ratio {:.3} ({}), unobserved ratio {:.3} ({}), growth {}",
        full_criterion.ratio,
        if full_criterion.satisfied { "satisfied" } else { "violated" },
        unobs_criterion.ratio,
        if unobs_criterion.satisfied { "satisfied" } else { "violated" },
        if unbounded_growth { "unbounded" } else { "not detected" },
    );
    println!(
        "sandwich min relative margin {min_rel_margin:.2e} over horizon {horizon}; wrote {}",
        report_path.display()
    );
    Ok(())
}
