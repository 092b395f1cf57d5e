use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, FORMAT_VERSION};
use crate::lane_model::LaneLine;

/// Ground truth of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: String,
    pub image_size: (u32, u32),
    pub gt_lanes: Vec<Vec<(f64, f64)>>,
}

impl SceneRecord {
    pub fn lanes(&self) -> Vec<LaneLine> {
        self.gt_lanes
            .iter()
            .map(|pts| LaneLine::from_xy(pts.iter().copied(), 1.0))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    #[serde(flatten)]
    inner: T,
}

pub fn write_scenes<'a>(path: &Path, scenes: impl IntoIterator<Item = &'a SceneRecord>) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        let line = serde_json::to_string(&Versioned {
            version: FORMAT_VERSION,
            inner: scene,
        })
        .expect("scene records serialise");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Versioned<SceneRecord> = serde_json::from_str(&line)
            .map_err(|e| DataError::schema(format!("line {}", i + 1), e.to_string()))?;
        if v.version != FORMAT_VERSION {
            return Err(DataError::Version {
                found: v.version as u64,
                expected: FORMAT_VERSION,
            });
        }
        out.push(v.inner);
    }
    Ok(out)
}
