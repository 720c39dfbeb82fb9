//! Subspace checkpoints: a text manifest (`checkpoint.toml`) beside one
//! binary blob of little-endian 64-bit floats per endpoint, in segment
//! order. Round-trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::net::NetworkSpec;
use crate::params::{ParamVector, Segment, SegmentTable};
use crate::subspace::{Subspace, SubspaceKind};
use crate::{Error, Result};

const MANIFEST_NAME: &str = "checkpoint.toml";

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceMeta {
    kind: String,
    m: usize,
    endpoints: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    subspace: SubspaceMeta,
    network: NetworkSpec,
    segments: Vec<Segment>,
}

fn kind_tag(kind: SubspaceKind) -> (&'static str, usize) {
    match kind {
        SubspaceKind::Line => ("line", 2),
        SubspaceKind::Bezier1 => ("bezier1", 3),
        SubspaceKind::Simplex { m } => ("simplex", m),
    }
}

fn kind_from_tag(tag: &str, m: usize) -> Result<SubspaceKind> {
    match tag {
        "line" => Ok(SubspaceKind::Line),
        "bezier1" => Ok(SubspaceKind::Bezier1),
        "simplex" => Ok(SubspaceKind::Simplex { m }),
        other => Err(Error::ConfigFile(format!("unknown subspace kind `{other}`"))),
    }
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            offset: bytes.len().min(expected * 8),
            message: format!(
                "weight blob {} holds {} bytes, expected {}",
                path.display(),
                bytes.len(),
                expected * 8
            ),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a subspace checkpoint into `dir` (created if missing).
pub fn save_subspace(dir: &Path, spec: &NetworkSpec, subspace: &Subspace) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let (tag, m) = kind_tag(subspace.kind());
    let mut endpoints = Vec::with_capacity(m);
    for (i, endpoint) in subspace.endpoints().iter().enumerate() {
        let name = format!("endpoint_{i}.bin");
        write_blob(&dir.join(&name), endpoint.values())?;
        endpoints.push(name);
    }
    let manifest = CheckpointManifest {
        version: 1,
        subspace: SubspaceMeta {
            kind: tag.to_string(),
            m,
            endpoints,
        },
        network: spec.clone(),
        segments: subspace.endpoints()[0].table().segments().to_vec(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::ConfigFile(format!("manifest serialization failed: {e}")))?;
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a checkpoint directory written by [`save_subspace`]. Also accepts a
/// run directory containing a `checkpoint/` subdirectory.
pub fn load_subspace(path: &Path) -> Result<(NetworkSpec, Subspace)> {
    let dir = resolve_dir(path)?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: CheckpointManifest = toml::from_str(&text)
        .map_err(|e| Error::ConfigFile(format!("{}: {e}", manifest_path.display())))?;
    manifest.network.validate()?;

    let expected = manifest.network.segment_table();
    let stored = SegmentTable::new(manifest.segments)?;
    if stored.segments() != expected.segments() {
        return Err(Error::Config(format!(
            "segment table in {} does not match its network description",
            manifest_path.display()
        )));
    }
    let kind = kind_from_tag(&manifest.subspace.kind, manifest.subspace.m)?;
    if manifest.subspace.endpoints.len() != kind.num_endpoints() {
        return Err(Error::Config(format!(
            "{} endpoint blobs for kind {kind}",
            manifest.subspace.endpoints.len()
        )));
    }
    let mut endpoints = Vec::with_capacity(manifest.subspace.endpoints.len());
    for name in &manifest.subspace.endpoints {
        let values = read_blob(&dir.join(name), expected.len())?;
        endpoints.push(ParamVector::from_values(Arc::clone(&expected), values)?);
    }
    let subspace = Subspace::from_endpoints(kind, endpoints)?;
    Ok((manifest.network, subspace))
}

fn resolve_dir(path: &Path) -> Result<PathBuf> {
    if path.join(MANIFEST_NAME).exists() {
        return Ok(path.to_path_buf());
    }
    let nested = path.join("checkpoint");
    if nested.join(MANIFEST_NAME).exists() {
        return Ok(nested);
    }
    Err(Error::Input(format!(
        "no {MANIFEST_NAME} under {} (or its checkpoint/ subdirectory)",
        path.display()
    )))
}
