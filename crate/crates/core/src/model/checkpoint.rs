//! Checkpoint files: a text manifest followed by raw little-endian tensors.
//!
//! ```text
//! #s2sfe-checkpoint v1
//! config num_layers=2 num_heads=2 embed_dim=64 ffn_dim=128 vocab_size=900 max_positions=128 dropout=0
//! meta stage combined
//! tensor encoder.embed f32 900,64 0
//! tensor encoder.0.norm1.gain f32 64 230400
//! ...
//! #data
//! <payload>
//! ```
//!
//! Offsets are in bytes from the start of the payload; tensors appear in
//! manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::TransformerConfig;
use super::params::ParameterSet;
use crate::error::{Error, Result};

const HEADER: &str = "#s2sfe-checkpoint v1";
const DATA_MARKER: &str = "#data\n";

/// Free-form `key value` annotations stored next to the weights.
pub type Metadata = BTreeMap<String, String>;

pub fn to_bytes(params: &ParameterSet, meta: &Metadata) -> Vec<u8> {
    let mut header = String::new();
    let _ = writeln!(header, "{HEADER}");
    let _ = writeln!(header, "config {}", params.config());
    for (k, v) in meta {
        let _ = writeln!(header, "meta {k} {v}");
    }
    for (spec, _) in params.tensors() {
        let shape: Vec<String> = spec.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            header,
            "tensor {} f32 {} {}",
            spec.name,
            shape.join(","),
            spec.range.start * 4
        );
    }
    header.push_str(DATA_MARKER);
    let mut bytes = header.into_bytes();
    bytes.reserve(params.values().len() * 4);
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParameterSet, Metadata)> {
    let split = bytes
        .windows(DATA_MARKER.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == DATA_MARKER.as_bytes())
        .ok_or_else(|| bad("missing #data marker"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8"))?;
    let payload = &bytes[split + 1 + DATA_MARKER.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad(format!("expected header {HEADER:?}")));
    }
    let mut config = None;
    let mut meta = Metadata::new();
    let mut manifest = Vec::new();
    for line in lines {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        match kind {
            "config" => config = Some(rest.parse::<TransformerConfig>()?),
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, dtype, shape, offset] = fields[..] else {
                    return Err(bad(format!("bad tensor line {line:?}")));
                };
                if dtype != "f32" {
                    return Err(bad(format!("unsupported dtype {dtype}")));
                }
                let shape: Vec<usize> = shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape in {line:?}"))))
                    .collect::<Result<_>>()?;
                let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                manifest.push((name.to_string(), shape, offset));
            }
            other => return Err(bad(format!("unknown manifest entry {other:?}"))),
        }
    }
    let config = config.ok_or_else(|| bad("missing config line"))?;
    let layout = super::params::Layout::new(&config);
    if manifest.len() != layout.tensors.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.len(),
            layout.tensors.len()
        )));
    }

    let mut values = vec![0.0f32; layout.total];
    for ((name, shape, offset), spec) in manifest.iter().zip(&layout.tensors) {
        if name != &spec.name || shape != &spec.shape {
            return Err(bad(format!(
                "tensor {name} {shape:?} does not match expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let len = spec.range.len() * 4;
        let raw = payload
            .get(*offset..offset + len)
            .ok_or_else(|| bad(format!("payload too short for {name}")))?;
        for (slot, chunk) in values[spec.range.clone()].iter_mut().zip(raw.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(bad("checkpoint contains non-finite values"));
    }
    Ok((ParameterSet::from_values(config, values)?, meta))
}

pub fn save(path: &Path, params: &ParameterSet, meta: &Metadata) -> Result<()> {
    fs::write(path, to_bytes(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParameterSet, Metadata)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
