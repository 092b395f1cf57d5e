//! CULane `.lines.txt` annotations: one lane per text line, alternating
//! `x y` pixel coordinates separated by spaces. Points with negative x mark
//! rows where the lane is absent and are dropped.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DataError;
use crate::lane_model::LaneLine;

pub fn parse_culane_lines(text: &str) -> Result<Vec<LaneLine>, DataError> {
    let mut lanes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if !tokens.len().is_multiple_of(2) {
            return Err(DataError::Format {
                line: line_no,
                token: tokens[tokens.len() - 1].to_string(),
                reason: format!("odd number of coordinates ({})", tokens.len()),
            });
        }
        let mut points = Vec::with_capacity(tokens.len() / 2);
        for pair in tokens.chunks(2) {
            let parse = |tok: &str| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::Format {
                        line: line_no,
                        token: tok.to_string(),
                        reason: "not a finite number".into(),
                    })
            };
            let (x, y) = (parse(pair[0])?, parse(pair[1])?);
            if x >= 0.0 {
                points.push((x, y));
            }
        }
        lanes.push(LaneLine::from_xy(points, 1.0));
    }
    Ok(lanes)
}

pub fn read_culane_lines(path: &Path) -> Result<Vec<LaneLine>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_culane_lines(&text)
}

/// Writes lanes bottom-up, as the CULane tools do.
pub fn write_culane_lines(path: &Path, lanes: &[LaneLine]) -> Result<(), DataError> {
    let mut out = Vec::new();
    for lane in lanes {
        let coords: Vec<String> = lane
            .points
            .iter()
            .rev()
            .map(|p| format!("{} {}", p.x, p.y))
            .collect();
        writeln!(out, "{}", coords.join(" ")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
