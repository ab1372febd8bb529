//! Subcommand implementations.

pub mod benchmark;
pub mod bounds;
pub mod lyapunov;
pub mod psi;
pub mod report;
pub mod simulate;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use unstable_lab::error::{LabError, LabResult};
use unstable_lab::kalman::NoiseModel;
use unstable_lab::lyapunov::{lyapunov_spectrum, LyapunovRun, SpectrumEstimate};
use unstable_lab::perturbation::{psi_series, PsiSeries};

use crate::config::ExperimentConfig;

/// Spectrum over the trusted interior window `[spinup, K - spinup]`, which
/// keeps clear of both the forward and the adjoint convergence transients.
pub fn trusted_spectrum(config: &ExperimentConfig, run: &LyapunovRun) -> LabResult<SpectrumEstimate> {
    let s = config.lyapunov.spinup;
    let total = run.len();
    if total < 2 * s + 1 {
        return Err(LabError::Config(format!(
            "run of {total} steps leaves no trusted window inside spin-up {s}"
        )));
    }
    let slice = LyapunovRun {
        frames: Vec::new(),
        triangles: run.triangles[s..total - s].to_vec(),
        direction: run.direction,
        spinup_used: s,
    };
    lyapunov_spectrum(&slice, 0, config.lyapunov.neutral_tol)
}

/// Free-perturbation series over the retained filter window, cold-started at
/// its first step.
pub fn retained_psi(config: &ExperimentConfig, blv: &LyapunovRun, n0: usize) -> LabResult<PsiSeries> {
    let start = config.lyapunov.spinup + config.filter.spinup;
    let end = start + config.filter.k_avg;
    if blv.len() < end {
        return Err(LabError::Config(format!(
            "run of {} steps is shorter than the filter window ending at {end}",
            blv.len()
        )));
    }
    psi_series(&blv.triangles[start..end], n0, config.psi.trunc_tol)
}

pub fn noise_for(config: &ExperimentConfig, d: usize) -> LabResult<NoiseModel> {
    NoiseModel::isotropic(config.model.dim, d, config.filter.q_scale, config.filter.r_scale)
}

/// CSV writer with a fixed header; values use shortest-roundtrip formatting,
/// so identical runs produce identical bytes.
pub struct CsvWriter {
    out: BufWriter<File>,
    pub path: PathBuf,
}

impl CsvWriter {
    pub fn create(config: &ExperimentConfig, name: &str, header: &str) -> LabResult<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        let path = config.output_dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{header}")?;
        Ok(CsvWriter { out, path })
    }

    pub fn row(&mut self, fields: &[String]) -> LabResult<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> LabResult<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}
