use unstable_lab::error::LabResult;

use crate::artifacts::{ensure_propagators, model_hash, short_hash};
use crate::config::ExperimentConfig;

/// Generates (or reuses) the cached propagator sequence.
pub fn run(config: &ExperimentConfig) -> LabResult<()> {
    let hash = model_hash(config)?;
    let seq = ensure_propagators(config)?;
    println!(
        "propagators ready: K = {}, n = {}, hash {}",
        seq.len(),
        seq.config.dim,
        short_hash(&hash)
    );
    Ok(())
}
