//! Cached artifacts keyed by configuration hashes, with sidecar manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use unstable_lab::cache::{
    config_hash, read_lyapunov_run, read_propagators, write_lyapunov_run, write_propagators,
};
use unstable_lab::error::{LabError, LabResult};
use unstable_lab::lyapunov::{blv_run, flv_run, LyapunovRun, OrthoFrame, RunDirection};
use unstable_lab::model::{generate_propagators, PropagatorSequence};

use crate::config::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;

/// Sidecar manifest describing one cached artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub config_hash: String,
    pub artifact: PathBuf,
    pub format_version: u32,
    pub created_at: String,
    pub software_version: String,
}

impl RunManifest {
    fn new(kind: &str, config_hash: &str, artifact: PathBuf) -> Self {
        RunManifest {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            artifact,
            format_version: FORMAT_VERSION,
            created_at: timestamp(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn write(&self, path: &Path) -> LabResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LabError::Format(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn read(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LabError::Format(format!("bad manifest: {e}")))
    }
}

fn timestamp() -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{now}")
}

pub fn short_hash(full: &str) -> &str {
    &full[..16.min(full.len())]
}

/// Hash of the fields that determine the trajectory and the propagators.
pub fn model_hash(config: &ExperimentConfig) -> LabResult<String> {
    config_hash(&config.model)
}

/// Hash of the fields that determine the Lyapunov runs.
pub fn lyapunov_hash(config: &ExperimentConfig) -> LabResult<String> {
    config_hash(&json!({ "model": config.model, "lyapunov": config.lyapunov }))
}

/// Loads the cached propagator sequence for `config`, generating and caching
/// it on a miss or on a corrupt cache.
pub fn ensure_propagators(config: &ExperimentConfig) -> LabResult<PropagatorSequence> {
    let cache_root = config.cache_root();
    std::fs::create_dir_all(&cache_root)?;
    let hash = model_hash(config)?;
    let data_path = cache_root.join(format!("props_{}.bin", short_hash(&hash)));
    let manifest_path = cache_root.join(format!("props_{}.manifest.json", short_hash(&hash)));

    if manifest_path.exists() && data_path.exists() {
        match (RunManifest::read(&manifest_path), read_propagators(&data_path)) {
            (Ok(manifest), Ok(seq)) if manifest.config_hash == hash && seq.config == config.model => {
                eprintln!("cache hit: {}", data_path.display());
                return Ok(seq);
            }
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("warning: corrupt cache {} ({e}); regenerating", data_path.display());
            }
            _ => eprintln!("warning: stale cache {}; regenerating", data_path.display()),
        }
    }

    let seq = generate_propagators(&config.model)?;
    write_propagators(&data_path, &seq)?;
    RunManifest::new("propagators", &hash, data_path.clone()).write(&manifest_path)?;
    eprintln!("cache store: {}", data_path.display());
    Ok(seq)
}

fn direction_tag(direction: RunDirection) -> &'static str {
    match direction {
        RunDirection::ForwardBlv => "blv",
        RunDirection::BackwardAdjointFlv => "flv",
    }
}

/// Loads the cached Lyapunov run in one direction, computing and caching it
/// on a miss. Frames are aligned with global propagator steps.
pub fn ensure_lyapunov(
    config: &ExperimentConfig,
    props: &PropagatorSequence,
    direction: RunDirection,
) -> LabResult<LyapunovRun> {
    let cache_root = config.cache_root();
    std::fs::create_dir_all(&cache_root)?;
    let hash = lyapunov_hash(config)?;
    let tag = direction_tag(direction);
    let data_path = cache_root.join(format!("lyap_{tag}_{}.bin", short_hash(&hash)));
    let manifest_path = cache_root.join(format!("lyap_{tag}_{}.manifest.json", short_hash(&hash)));

    if manifest_path.exists() && data_path.exists() {
        match (RunManifest::read(&manifest_path), read_lyapunov_run(&data_path)) {
            (Ok(manifest), Ok((run, key)))
                if manifest.config_hash == hash && key == hash && run.len() == props.len() =>
            {
                eprintln!("cache hit: {}", data_path.display());
                return Ok(run);
            }
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("warning: corrupt cache {} ({e}); regenerating", data_path.display());
            }
            _ => eprintln!("warning: stale cache {}; regenerating", data_path.display()),
        }
    }

    let n = config.model.dim;
    let mut run = match direction {
        RunDirection::ForwardBlv => blv_run(props, &OrthoFrame::identity(n))?,
        RunDirection::BackwardAdjointFlv => flv_run(props, &OrthoFrame::identity(n))?,
    };
    run.spinup_used = config.lyapunov.spinup;
    write_lyapunov_run(&data_path, &run, &hash)?;
    RunManifest::new(&format!("lyapunov_{tag}"), &hash, data_path.clone()).write(&manifest_path)?;
    eprintln!("cache store: {}", data_path.display());
    Ok(run)
}

/// Writes a JSON summary into the output directory.
pub fn write_summary<T: Serialize>(config: &ExperimentConfig, name: &str, value: &T) -> LabResult<PathBuf> {
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::Format(format!("summary serialization failed: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(path)
}
