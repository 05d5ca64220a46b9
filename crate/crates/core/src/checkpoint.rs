//! Checkpoint container: a text header of `key=value` lines with a format
//! version, a manifest of `name shape` lines, then raw little-endian f32
//! buffers in manifest order.
//!
//! ```text
//! parableu-checkpoint
//! format_version=1
//! model.hidden=64
//! ...
//! --manifest 42
//! edit.tok_emb 120,64
//! ...
//! --data
//! <bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &str = "parableu-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(header: &BTreeMap<String, String>, params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "format_version={FORMAT_VERSION}").unwrap();
    for (k, v) in header {
        if k == "format_version" || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Format(format!("header key {k:?} cannot be stored")));
        }
        writeln!(out, "{k}={v}").unwrap();
    }
    writeln!(out, "--manifest {}", params.len()).unwrap();
    for id in params.ids() {
        let name = params.name(id);
        if name.contains([' ', '\n']) {
            return Err(Error::Format(format!(
                "parameter name {name:?} cannot be stored"
            )));
        }
        let shape: Vec<String> = params
            .get(id)
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect();
        writeln!(out, "{name} {}", shape.join(",")).unwrap();
    }
    writeln!(out, "--data").unwrap();
    for id in params.ids() {
        for x in params.get(id).data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes to a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save(path: &Path, header: &BTreeMap<String, String>, params: &ParamStore) -> Result<()> {
    let bytes = encode(header, params)?;
    crate::write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Format(format!("checkpoint: {msg}"));
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))
    };

    if next_line()? != MAGIC {
        return Err(bad("missing magic line".into()));
    }
    let mut header = BTreeMap::new();
    let count = loop {
        let line = next_line()?;
        if let Some(n) = line.strip_prefix("--manifest ") {
            break n
                .parse::<usize>()
                .map_err(|_| bad(format!("bad manifest count {n:?}")))?;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    };
    match header.remove("format_version").as_deref() {
        Some(v) if v == FORMAT_VERSION.to_string() => {}
        other => return Err(bad(format!("unsupported format version {other:?}"))),
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad manifest line {line:?}")))?;
        let shape = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape {dims:?}")))?;
        manifest.push((name.to_string(), shape));
    }
    if next_line()? != "--data" {
        return Err(bad("missing data marker".into()));
    }
    let total: usize = manifest
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    let data = &bytes[pos..];
    if data.len() != total * 4 {
        return Err(bad(format!(
            "expected {} data bytes, found {}",
            total * 4,
            data.len()
        )));
    }
    let mut floats = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = manifest
        .into_iter()
        .map(|(name, shape)| {
            let n = shape.iter().product();
            let t = Tensor::new(shape, floats.by_ref().take(n).collect())?;
            Ok((name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { header, tensors })
}
