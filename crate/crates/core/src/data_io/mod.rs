//! On-disk formats and the external evaluator wire protocol. Everything is
//! JSON or JSON lines with a `version` field, except CULane `.lines.txt`
//! annotations and the CSV front export.

mod archive_io;
mod culane;
mod proposals;
mod scenes;
mod wire;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use archive_io::{
    archive_from_str, export_front_csv, front_csv, load_archive, snapshot_archive, snapshot_to_string, write_history_jsonl,
    ArchiveSnapshot,
};
pub use culane::{parse_culane_lines, read_culane_lines, write_culane_lines};
pub use proposals::{decode_proposal_scene, encode_proposal_scene, read_proposals, write_proposals, ProposalReader, ProposalScene};
pub use scenes::{read_scenes, write_scenes, SceneRecord};
pub use wire::{EvalRequest, EvalResponse};

/// Version written into every JSON document.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: cannot parse token `{token}`: {reason}")]
    Format { line: usize, token: String, reason: String },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
}

impl DataError {
    pub fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        DataError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| DataError::io(path, e))
}

/// Small helpers for decoding `serde_json::Value` trees with a JSON path in
/// every error.
pub(crate) mod json {
    use serde_json::{Map, Value};

    use super::DataError;

    pub fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, DataError> {
        v.as_object()
            .ok_or_else(|| DataError::schema(path, "expected an object"))
    }

    pub fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, DataError> {
        obj.get(key)
            .ok_or_else(|| DataError::schema(join(path, key), "missing field"))
    }

    pub fn join(path: &str, key: &str) -> String {
        if path.is_empty() {
            key.to_string()
        } else {
            format!("{path}.{key}")
        }
    }

    pub fn f64_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64, DataError> {
        field(obj, key, path)?
            .as_f64()
            .ok_or_else(|| DataError::schema(join(path, key), "expected a number"))
    }

    pub fn u64_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<u64, DataError> {
        field(obj, key, path)?
            .as_u64()
            .ok_or_else(|| DataError::schema(join(path, key), "expected a non-negative integer"))
    }

    pub fn u32_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<u32, DataError> {
        let v = u64_field(obj, key, path)?;
        u32::try_from(v).map_err(|_| DataError::schema(join(path, key), "integer out of range"))
    }

    pub fn array<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Vec<Value>, DataError> {
        field(obj, key, path)?
            .as_array()
            .ok_or_else(|| DataError::schema(join(path, key), "expected an array"))
    }

    pub fn pair_u32(obj: &Map<String, Value>, key: &str, path: &str) -> Result<(u32, u32), DataError> {
        let items = array(obj, key, path)?;
        let p = join(path, key);
        let get = |i: usize| {
            items
                .get(i)
                .and_then(Value::as_u64)
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| DataError::schema(format!("{p}[{i}]"), "expected a non-negative integer"))
        };
        if items.len() != 2 {
            return Err(DataError::schema(p, "expected [width, height]"));
        }
        Ok((get(0)?, get(1)?))
    }

    pub fn check_version(obj: &Map<String, Value>, path: &str) -> Result<(), DataError> {
        let found = u64_field(obj, "version", path)?;
        if found != super::FORMAT_VERSION as u64 {
            return Err(DataError::Version {
                found,
                expected: super::FORMAT_VERSION,
            });
        }
        Ok(())
    }
}
