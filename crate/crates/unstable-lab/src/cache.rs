//! Binary caches for propagator sequences and Lyapunov runs.
//!
//! Each cache file starts with a single JSON manifest line describing the
//! payload, followed by raw little-endian `f64` blocks with matrices stored
//! row-major. Writing the same data twice produces identical bytes, so a
//! configuration hash of the generating parameters is a safe cache key.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};
use crate::lyapunov::{LyapunovRun, OrthoFrame, RunDirection, TransitionTriangle};
use crate::model::{ModelConfig, PropagatorSequence};

const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON form of any serializable value.
///
/// Canonicalization goes through `serde_json::Value`, whose object keys are
/// sorted, so the hash is stable under field reordering.
pub fn config_hash<T: Serialize>(value: &T) -> LabResult<String> {
    let canonical = serde_json::to_value(value)
        .map_err(|e| LabError::Format(format!("config not serializable: {e}")))?
        .to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct PropagatorManifest {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    config: ModelConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct LyapunovManifest {
    format_version: u32,
    kind: String,
    n: usize,
    #[serde(rename = "K")]
    windows: usize,
    direction: RunDirection,
    spinup_used: usize,
    config_hash: String,
}

fn write_matrix_row_major<W: Write>(out: &mut W, m: &DMatrix<f64>) -> LabResult<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix_row_major<R: Read>(input: &mut R, rows: usize, cols: usize) -> LabResult<DMatrix<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| LabError::Format(format!("truncated matrix block: {e}")))?;
    let mut m = DMatrix::<f64>::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let offset = (r * cols + c) * 8;
            m[(r, c)] = f64::from_le_bytes(buf[offset..offset + 8].try_into().unwrap());
        }
    }
    Ok(m)
}

fn read_manifest_line<R: Read>(input: &mut R) -> LabResult<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        input
            .read_exact(&mut byte)
            .map_err(|e| LabError::Format(format!("missing manifest line: {e}")))?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 16 {
            return Err(LabError::Format("manifest line exceeds 64 KiB".into()));
        }
    }
    String::from_utf8(line).map_err(|e| LabError::Format(format!("manifest not UTF-8: {e}")))
}

/// Writes a propagator sequence to a single cache file.
pub fn write_propagators(path: &Path, seq: &PropagatorSequence) -> LabResult<()> {
    let manifest = PropagatorManifest {
        format_version: FORMAT_VERSION,
        kind: "propagators".into(),
        config: seq.config.clone(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &manifest)
        .map_err(|e| LabError::Format(format!("manifest serialization failed: {e}")))?;
    out.write_all(b"\n")?;
    let n = seq.config.dim;
    for state in &seq.states {
        for i in 0..n {
            out.write_all(&state[i].to_le_bytes())?;
        }
    }
    for m in &seq.mats {
        write_matrix_row_major(&mut out, m)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a propagator sequence back from a cache file, verifying the
/// manifest and the block lengths.
pub fn read_propagators(path: &Path) -> LabResult<PropagatorSequence> {
    let mut input = BufReader::new(File::open(path)?);
    let line = read_manifest_line(&mut input)?;
    let manifest: PropagatorManifest = serde_json::from_str(&line)
        .map_err(|e| LabError::Format(format!("bad propagator manifest: {e}")))?;
    if manifest.kind != "propagators" {
        return Err(LabError::Format(format!("expected propagator cache, found '{}'", manifest.kind)));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(LabError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let config = manifest.config;
    let n = config.dim;
    let k = config.windows;
    let mut states = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        let m = read_matrix_row_major(&mut input, n, 1)?;
        states.push(DVector::from_column_slice(m.as_slice()));
    }
    let mut mats = Vec::with_capacity(k);
    for _ in 0..k {
        mats.push(read_matrix_row_major(&mut input, n, n)?);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(LabError::Format("unexpected trailing bytes in propagator cache".into()));
    }
    Ok(PropagatorSequence { mats, states, config })
}

/// Writes a Lyapunov run, keyed by the hash of the generating configuration.
pub fn write_lyapunov_run(path: &Path, run: &LyapunovRun, config_hash: &str) -> LabResult<()> {
    let n = run.frames.first().map(OrthoFrame::dim).ok_or_else(|| {
        LabError::Format("refusing to persist an empty Lyapunov run".into())
    })?;
    let manifest = LyapunovManifest {
        format_version: FORMAT_VERSION,
        kind: "lyapunov".into(),
        n,
        windows: run.len(),
        direction: run.direction,
        spinup_used: run.spinup_used,
        config_hash: config_hash.to_string(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &manifest)
        .map_err(|e| LabError::Format(format!("manifest serialization failed: {e}")))?;
    out.write_all(b"\n")?;
    for frame in &run.frames {
        write_matrix_row_major(&mut out, &frame.0)?;
    }
    for triangle in &run.triangles {
        write_matrix_row_major(&mut out, &triangle.0)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a Lyapunov run and the configuration hash it was keyed under.
pub fn read_lyapunov_run(path: &Path) -> LabResult<(LyapunovRun, String)> {
    let mut input = BufReader::new(File::open(path)?);
    let line = read_manifest_line(&mut input)?;
    let manifest: LyapunovManifest = serde_json::from_str(&line)
        .map_err(|e| LabError::Format(format!("bad Lyapunov manifest: {e}")))?;
    if manifest.kind != "lyapunov" {
        return Err(LabError::Format(format!("expected Lyapunov cache, found '{}'", manifest.kind)));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(LabError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let n = manifest.n;
    let mut frames = Vec::with_capacity(manifest.windows + 1);
    for _ in 0..=manifest.windows {
        frames.push(OrthoFrame(read_matrix_row_major(&mut input, n, n)?));
    }
    let mut triangles = Vec::with_capacity(manifest.windows);
    for _ in 0..manifest.windows {
        triangles.push(TransitionTriangle(read_matrix_row_major(&mut input, n, n)?));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(LabError::Format("unexpected trailing bytes in Lyapunov cache".into()));
    }
    let run = LyapunovRun {
        frames,
        triangles,
        direction: manifest.direction,
        spinup_used: manifest.spinup_used,
    };
    Ok((run, manifest.config_hash))
}
