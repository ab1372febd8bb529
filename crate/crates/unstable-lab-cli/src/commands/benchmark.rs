use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use unstable_lab::error::LabResult;
use unstable_lab::kalman::{run_filter, Covariance, ObservationDesign, ObservationKind};
use unstable_lab::lyapunov::RunDirection;
use unstable_lab::lyapunov::LyapunovRun;

use crate::artifacts::{ensure_lyapunov, ensure_propagators, write_summary};
use crate::commands::{noise_for, retained_psi, trusted_spectrum, CsvWriter};
use crate::config::{DesignSpec, ExperimentConfig};

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub kind: String,
    pub d: usize,
    pub mean_frobenius: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Per-step record of one filter run: Frobenius norm with the running
/// precision extremes.
fn write_run_csv(
    runs_dir: &std::path::Path,
    spec: &DesignSpec,
    stats: &unstable_lab::kalman::FilterStats,
) -> LabResult<()> {
    use std::io::Write;
    let path = runs_dir.join(format!("run_{}_{}.csv", spec.kind.label(), spec.d));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "k,frobenius,alpha_running,beta_running")?;
    for k in 0..stats.alpha_series.len() {
        writeln!(
            out,
            "{k},{},{},{}",
            stats.frobenius_series[k], stats.alpha_series[k], stats.beta_series[k]
        )?;
    }
    out.flush()?;
    Ok(())
}

fn design_for<'a>(
    spec: &DesignSpec,
    seed: u64,
    blv: &'a LyapunovRun,
    flv: &'a LyapunovRun,
) -> ObservationDesign<'a> {
    match spec.kind {
        ObservationKind::Blv => ObservationDesign::with_frames(spec.kind, spec.d, blv),
        ObservationKind::Flv => ObservationDesign::with_frames(spec.kind, spec.d, flv),
        _ => ObservationDesign::new(spec.kind, spec.d).with_seed(seed),
    }
}

/// Runs every configured (kind, d) cell plus the full-observation benchmark
/// row, in parallel over the shared read-only caches.
pub fn run(config: &ExperimentConfig) -> LabResult<()> {
    let props = ensure_propagators(config)?;
    let blv = ensure_lyapunov(config, &props, RunDirection::ForwardBlv)?;
    let needs_flv = config
        .filter
        .designs
        .iter()
        .any(|spec| spec.kind == ObservationKind::Flv);
    let flv = if needs_flv {
        ensure_lyapunov(config, &props, RunDirection::BackwardAdjointFlv)?
    } else {
        LyapunovRun {
            frames: Vec::new(),
            triangles: Vec::new(),
            direction: RunDirection::BackwardAdjointFlv,
            spinup_used: 0,
        }
    };

    let n = config.model.dim;
    let p0 = Covariance(nalgebra::DMatrix::identity(n, n) * config.filter.p0_scale);
    let start = config.lyapunov.spinup;

    let mut specs = config.filter.designs.clone();
    specs.push(DesignSpec { kind: ObservationKind::Full, d: n });
    let runs_dir = config.output_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let cells: Vec<CellResult> = specs
        .par_iter()
        .map(|spec| -> LabResult<CellResult> {
            let noise = noise_for(config, spec.d)?;
            let design = design_for(spec, config.seed, &blv, &flv);
            let stats = run_filter(
                &props,
                start,
                &design,
                &noise,
                &p0,
                config.filter.spinup,
                config.filter.k_avg,
            )?;
            write_run_csv(&runs_dir, spec, &stats)?;
            Ok(CellResult {
                kind: spec.kind.label().to_string(),
                d: spec.d,
                mean_frobenius: stats.frobenius_mean,
                alpha: stats.alpha,
                beta: stats.beta,
            })
        })
        .collect::<LabResult<_>>()?;

    let spectrum = trusted_spectrum(config, &blv)?;
    let psi = retained_psi(config, &blv, spectrum.n0)?;

    let mut csv = CsvWriter::create(config, "benchmark.csv", "kind,d,mean_frobenius")?;
    for cell in &cells {
        csv.row(&[cell.kind.clone(), cell.d.to_string(), cell.mean_frobenius.to_string()])?;
    }
    for mode in spectrum.n0 + 1..=n {
        csv.row(&["psi_mean".into(), mode.to_string(), psi.mean(mode)?.to_string()])?;
    }
    let csv_path = csv.finish()?;

    let full_mean = cells
        .iter()
        .find(|c| c.kind == "full")
        .map(|c| c.mean_frobenius);
    let summary = json!({
        "config_hash": config.numerics_hash()?,
        "cells": cells,
        "full_mean": full_mean,
        "psi_means": (spectrum.n0 + 1..=n)
            .map(|mode| psi.mean(mode))
            .collect::<LabResult<Vec<_>>>()?,
        "window": { "start": start, "filter_spinup": config.filter.spinup, "k_avg": config.filter.k_avg },
    });
    let summary_path = write_summary(config, "benchmark_summary.json", &summary)?;

    println!("benchmark: {} cells", cells.len());
    for cell in &cells {
        println!("  {}_{}: mean |P|_F = {:.3}", cell.kind, cell.d, cell.mean_frobenius);
    }
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}
