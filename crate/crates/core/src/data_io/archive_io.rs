//! Archive snapshots (JSON), the evaluation history (JSONL) and the final
//! front export (CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::json::{array, check_version, object};
use super::{write_atomic, DataError, FORMAT_VERSION};
use crate::search::{Candidate, ParetoArchive};

#[derive(Serialize)]
pub struct ArchiveSnapshot<'a> {
    pub version: u32,
    pub members: &'a [Candidate],
    pub history: &'a [Candidate],
}

pub fn snapshot_to_string(archive: &ParetoArchive) -> String {
    let mut s = serde_json::to_string_pretty(&ArchiveSnapshot {
        version: FORMAT_VERSION,
        members: archive.members(),
        history: archive.history(),
    })
    .expect("archives serialise");
    s.push('\n');
    s
}

/// Atomically writes the archive as JSON.
pub fn snapshot_archive(path: &Path, archive: &ParetoArchive) -> Result<(), DataError> {
    write_atomic(path, snapshot_to_string(archive).as_bytes())
}

fn entry_id(v: &Value) -> String {
    v.get("eval_id")
        .and_then(Value::as_u64)
        .map_or_else(|| "unknown".to_string(), |id| id.to_string())
}

fn decode_entries(root: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<Candidate>, DataError> {
    array(root, key, "")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value::<Candidate>(v.clone()).map_err(|e| {
                DataError::schema(format!("{key}[{i}] (eval_id {})", entry_id(v)), e.to_string())
            })
        })
        .collect()
}

pub fn archive_from_str(text: &str) -> Result<ParetoArchive, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DataError::schema("$", e.to_string()))?;
    let root = object(&value, "$")?;
    check_version(root, "")?;
    let history = decode_entries(root, "history")?;
    let members = decode_entries(root, "members")?;
    for (i, m) in members.iter().enumerate() {
        if m.score.is_none() {
            return Err(DataError::schema(
                format!("members[{i}] (eval_id {})", m.eval_id),
                "front member has no score",
            ));
        }
        if !history.iter().any(|h| h == m) {
            return Err(DataError::schema(
                format!("members[{i}] (eval_id {})", m.eval_id),
                "member does not match its history entry",
            ));
        }
    }
    let archive = ParetoArchive::from_parts(members, history);
    archive
        .check_invariants()
        .map_err(|reason| DataError::schema("members", reason))?;
    Ok(archive)
}

pub fn load_archive(path: &Path) -> Result<ParetoArchive, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    archive_from_str(&text)
}

/// One history entry per line, in evaluation order.
pub fn write_history_jsonl(path: &Path, archive: &ParetoArchive) -> Result<(), DataError> {
    let mut out = String::new();
    for c in archive.history() {
        out.push_str(&serde_json::to_string(c).expect("candidates serialise"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// `eval_id,encoding,flops,score` for every front member, sorted by FLOPS.
pub fn front_csv(archive: &ParetoArchive) -> String {
    let mut out = String::from("eval_id,encoding,flops,score\n");
    for c in archive.sorted_front() {
        let score = c.score.expect("front members are scored");
        writeln!(out, "{},\"{}\",{},{}", c.eval_id, c.arch.backbone, c.flops, score).expect("write to String");
    }
    out
}

pub fn export_front_csv(path: &Path, archive: &ParetoArchive) -> Result<(), DataError> {
    write_atomic(path, front_csv(archive).as_bytes())
}
