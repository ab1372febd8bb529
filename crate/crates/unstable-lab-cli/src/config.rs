//! Experiment configuration: one JSON document, overridable from the
//! command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unstable_lab::error::{LabError, LabResult};
use unstable_lab::kalman::ObservationKind;
use unstable_lab::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: ObservationKind,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSection {
    /// QR iterations discarded at each trusted end of the run.
    pub spinup: usize,
    /// Threshold classifying an exponent as neutral.
    pub neutral_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSection {
    pub designs: Vec<DesignSpec>,
    /// Filter stabilization steps excluded from averages.
    pub spinup: usize,
    /// Steps retained in the averages.
    #[serde(rename = "K_avg")]
    pub k_avg: usize,
    #[serde(rename = "Q_scale")]
    pub q_scale: f64,
    #[serde(rename = "R_scale")]
    pub r_scale: f64,
    #[serde(rename = "P0_scale")]
    pub p0_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSection {
    pub trunc_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    /// Sandwich verification horizon; propagator products overflow beyond a
    /// few hundred steps under unstable dynamics.
    pub horizon: usize,
    /// Slack for the uniform-window estimate.
    pub epsilon: f64,
    /// Anchor steps sampled by the uniform-window estimate.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportSection {
    /// Assertions whose failure makes `report` exit nonzero.
    #[serde(default)]
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub lyapunov: LyapunovSection,
    pub filter: FilterSection,
    pub psi: PsiSection,
    pub bounds: BoundsSection,
    pub output_dir: PathBuf,
    /// Seed for the random observation designs.
    pub seed: u64,
    #[serde(default)]
    pub report: ReportSection,
}

fn all_designs() -> Vec<DesignSpec> {
    let mut designs = Vec::new();
    for d in 4..=9 {
        for kind in [
            ObservationKind::Blv,
            ObservationKind::Flv,
            ObservationKind::RandomOrthogonal,
            ObservationKind::FixedRows,
        ] {
            designs.push(DesignSpec { kind, d });
        }
    }
    designs
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: spin-ups one order below the reference
    /// experiment so the full pipeline runs in minutes.
    fn default() -> Self {
        let lyap_spinup = 10_000;
        let filter_spinup = 1_000;
        let k_avg = 10_000;
        ExperimentConfig {
            model: ModelConfig {
                spinup_steps: 5000,
                windows: lyap_spinup + filter_spinup + k_avg + lyap_spinup,
                seed: 30,
                ..ModelConfig::default()
            },
            lyapunov: LyapunovSection { spinup: lyap_spinup, neutral_tol: 0.005 },
            filter: FilterSection {
                designs: all_designs(),
                spinup: filter_spinup,
                k_avg,
                q_scale: 1.0,
                r_scale: 1.0,
                p0_scale: 1.0,
            },
            psi: PsiSection { trunc_tol: 1e-30 },
            bounds: BoundsSection { horizon: 50, epsilon: 0.05, samples: 5 },
            output_dir: PathBuf::from("out"),
            seed: 30,
            report: ReportSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| LabError::Format(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> LabResult<()> {
        self.model.validate()?;
        if self.filter.k_avg == 0 {
            return Err(LabError::Config("filter K_avg must be positive".into()));
        }
        if self.bounds.samples == 0 {
            return Err(LabError::Config("bounds sample count must be positive".into()));
        }
        let needed = self.lyapunov.spinup + self.filter.spinup + self.filter.k_avg;
        if self.model.windows < needed {
            return Err(LabError::Config(format!(
                "model K = {} is too short for spinup {} + filter {} + K_avg {}",
                self.model.windows, self.lyapunov.spinup, self.filter.spinup, self.filter.k_avg
            )));
        }
        for design in &self.filter.designs {
            let max_d = self.model.dim;
            if design.d > max_d {
                return Err(LabError::Config(format!(
                    "design {}_{} exceeds state dimension {max_d}",
                    design.kind.label(),
                    design.d
                )));
            }
        }
        Ok(())
    }

    /// Reference-scale settings: ten times the desk-scale spin-ups and
    /// averaging windows.
    pub fn apply_paper_scale(&mut self) {
        self.lyapunov.spinup = 100_000;
        self.filter.spinup = 10_000;
        self.filter.k_avg = 100_000;
        self.model.windows =
            self.lyapunov.spinup + self.filter.spinup + self.filter.k_avg + self.lyapunov.spinup;
    }

    /// Seed override touches both the trajectory and the design draws.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    /// Hash over the fields that affect numerics; the output directory and
    /// report settings are excluded on purpose.
    pub fn numerics_hash(&self) -> LabResult<String> {
        unstable_lab::cache::config_hash(&serde_json::json!({
            "model": self.model,
            "lyapunov": self.lyapunov,
            "filter": self.filter,
            "psi": self.psi,
            "bounds": self.bounds,
            "seed": self.seed,
        }))
    }

    /// Cache root: `UNSTABLE_LAB_CACHE` or `<output_dir>/cache`.
    pub fn cache_root(&self) -> PathBuf {
        match std::env::var_os("UNSTABLE_LAB_CACHE") {
            Some(dir) => PathBuf::from(dir),
            None => self.output_dir.join("cache"),
        }
    }
}
