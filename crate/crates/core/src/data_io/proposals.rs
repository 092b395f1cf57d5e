//! Proposal dumps: JSON lines, one scene per line.
//!
//! ```text
//! {"version":1,"image_id":"...","layout":{"image_size":[w,h],"rows":[...]},
//!  "heads":[{"level":1,"grid_w":..,"grid_h":..,
//!            "cells":[{"cx":..,"cy":..,"score":..,"offsets":[..|null],"end_y":..}]}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::json::{array, check_version, f64_field, field, object, pair_u32, u32_field};
use super::{DataError, FORMAT_VERSION};
use crate::lane_model::{AnchorLayout, GridCell, HeadGrid, LaneProposalSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalScene {
    pub image_id: String,
    pub proposals: LaneProposalSet,
}

#[derive(Serialize)]
struct SceneOut<'a> {
    version: u32,
    image_id: &'a str,
    layout: &'a AnchorLayout,
    heads: &'a [HeadGrid],
}

/// One JSON line, without the trailing newline.
pub fn encode_proposal_scene(scene: &ProposalScene) -> String {
    serde_json::to_string(&SceneOut {
        version: FORMAT_VERSION,
        image_id: &scene.image_id,
        layout: &scene.proposals.layout,
        heads: &scene.proposals.heads,
    })
    .expect("proposal scenes serialise")
}

pub fn decode_proposal_scene(line: &str) -> Result<ProposalScene, DataError> {
    let value: Value = serde_json::from_str(line).map_err(|e| DataError::schema("$", e.to_string()))?;
    let root = object(&value, "$")?;
    check_version(root, "")?;
    let image_id = field(root, "image_id", "")?
        .as_str()
        .ok_or_else(|| DataError::schema("image_id", "expected a string"))?
        .to_string();

    let layout_obj = object(field(root, "layout", "")?, "layout")?;
    let image_size = pair_u32(layout_obj, "image_size", "layout")?;
    let rows = array(layout_obj, "rows", "layout")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .ok_or_else(|| DataError::schema(format!("layout.rows[{i}]"), "expected a number"))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let layout = AnchorLayout::new(image_size, rows).map_err(|e| DataError::schema("layout", e.to_string()))?;

    let mut heads = Vec::new();
    for (h, head_val) in array(root, "heads", "")?.iter().enumerate() {
        let hp = format!("heads[{h}]");
        let head = object(head_val, &hp)?;
        let level = u32_field(head, "level", &hp)?;
        let grid_w = u32_field(head, "grid_w", &hp)?;
        let grid_h = u32_field(head, "grid_h", &hp)?;
        let mut cells = Vec::new();
        for (k, cell_val) in array(head, "cells", &hp)?.iter().enumerate() {
            let cp = format!("{hp}.cells[{k}]");
            let cell = object(cell_val, &cp)?;
            let offsets = array(cell, "offsets", &cp)?
                .iter()
                .enumerate()
                .map(|(z, v)| match v {
                    Value::Null => Ok(None),
                    v => v
                        .as_f64()
                        .map(Some)
                        .ok_or_else(|| DataError::schema(format!("{cp}.offsets[{z}]"), "expected a number or null")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let score = f64_field(cell, "score", &cp)?;
            if !(0.0..=1.0).contains(&score) {
                return Err(DataError::schema(format!("{cp}.score"), "score outside [0, 1]"));
            }
            cells.push(GridCell {
                cx: f64_field(cell, "cx", &cp)?,
                cy: f64_field(cell, "cy", &cp)?,
                score,
                offsets,
                end_y: f64_field(cell, "end_y", &cp)?,
            });
        }
        let grid = HeadGrid {
            level,
            grid_w,
            grid_h,
            cells,
        };
        grid.validate(layout.len()).map_err(|e| DataError::schema(&hp, e.to_string()))?;
        heads.push(grid);
    }
    Ok(ProposalScene {
        image_id,
        proposals: LaneProposalSet { layout, heads },
    })
}

/// Streams scenes from a JSONL file; memory use is bounded by one line.
pub struct ProposalReader<R> {
    reader: R,
    line: String,
    line_no: usize,
}

impl<R: BufRead> ProposalReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line: String::new(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for ProposalReader<R> {
    type Item = Result<ProposalScene, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) if self.line.trim().is_empty() => continue,
                Ok(_) => {
                    let line_no = self.line_no;
                    return Some(decode_proposal_scene(&self.line).map_err(|e| match e {
                        DataError::Schema { path, reason } => DataError::Schema {
                            path: format!("line {line_no}: {path}"),
                            reason,
                        },
                        other => other,
                    }));
                }
                Err(e) => {
                    return Some(Err(DataError::Io {
                        path: format!("<line {}>", self.line_no).into(),
                        source: e,
                    }))
                }
            }
        }
    }
}

pub fn read_proposals(path: &Path) -> Result<ProposalReader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(ProposalReader::new(BufReader::new(file)))
}

pub fn write_proposals<'a>(
    path: &Path,
    scenes: impl IntoIterator<Item = &'a ProposalScene>,
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        writeln!(w, "{}", encode_proposal_scene(scene)).map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn scene() -> ProposalScene {
        let layout = AnchorLayout::new((64, 32), vec![0.0, 8.0, 16.0, 24.0]).unwrap();
        let cell = |cx: f64, score: f64| GridCell {
            cx,
            cy: 28.0,
            score,
            offsets: vec![Some(-1.5), None, Some(0.25), Some(0.0)],
            end_y: 4.0,
        };
        ProposalScene {
            image_id: "img/001".into(),
            proposals: LaneProposalSet {
                layout,
                heads: vec![HeadGrid {
                    level: 2,
                    grid_w: 2,
                    grid_h: 1,
                    cells: vec![cell(8.0, 0.75), cell(40.0, 0.1)],
                }],
            },
        }
    }

    #[test]
    fn round_trip() {
        let s = scene();
        let line = encode_proposal_scene(&s);
        assert!(line.starts_with("{\"version\":1,"));
        assert_eq!(decode_proposal_scene(&line).unwrap(), s);
    }

    #[test]
    fn missing_score_reports_path() {
        let mut v: Value = serde_json::from_str(&encode_proposal_scene(&scene())).unwrap();
        v["heads"][0]["cells"][1].as_object_mut().unwrap().remove("score");
        match decode_proposal_scene(&v.to_string()).unwrap_err() {
            DataError::Schema { path, .. } => assert_eq!(path, "heads[0].cells[1].score"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_version() {
        let mut v: Value = serde_json::from_str(&encode_proposal_scene(&scene())).unwrap();
        v["version"] = 2.into();
        assert!(matches!(
            decode_proposal_scene(&v.to_string()),
            Err(DataError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn streaming_many_scenes() {
        let line = encode_proposal_scene(&scene());
        let mut text = String::new();
        for _ in 0..10_000 {
            text.push_str(&line);
            text.push('\n');
        }
        let reader = ProposalReader::new(Cursor::new(text.into_bytes()));
        let mut n = 0;
        for s in reader {
            assert_eq!(s.unwrap().proposals.heads[0].cells.len(), 2);
            n += 1;
        }
        assert_eq!(n, 10_000);
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = format!("{}\n\n{{\"version\":1}}\n", encode_proposal_scene(&scene()));
        let results: Vec<_> = ProposalReader::new(Cursor::new(text.into_bytes())).collect();
        assert_eq!(results.len(), 2);
        match &results[1] {
            Err(DataError::Schema { path, .. }) => assert!(path.starts_with("line 3:"), "{path}"),
            other => panic!("{other:?}"),
        }
    }
}
