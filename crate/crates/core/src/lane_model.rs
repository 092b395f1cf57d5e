//! Grid/anchor parameterisation of lane proposals.
//!
//! Every grid cell of every head proposes one lane as a list of horizontal
//! offsets, one per vertical anchor row, measured from the cell's centre
//! column. Rows above the cell's predicted ending point carry no point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaneError {
    #[error("lane has {points} point(s), at least 2 are required")]
    Degenerate { points: usize },
    #[error("invalid anchor layout: {0}")]
    Layout(String),
    #[error("invalid grid: {0}")]
    Grid(String),
}

/// Image size and the vertical anchor rows shared by every head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayout {
    pub image_size: (u32, u32),
    pub rows: Vec<f64>,
}

impl AnchorLayout {
    pub fn new(image_size: (u32, u32), rows: Vec<f64>) -> Result<Self, LaneError> {
        let layout = Self { image_size, rows };
        layout.validate()?;
        Ok(layout)
    }

    /// `count` rows evenly spaced from the top of the image, one every
    /// `height / count` pixels.
    pub fn evenly_spaced(image_size: (u32, u32), count: usize) -> Result<Self, LaneError> {
        let step = image_size.1 as f64 / count as f64;
        Self::new(image_size, (0..count).map(|z| z as f64 * step).collect())
    }

    /// 72 rows for a 288-pixel-high image, i.e. one every 4 px.
    pub fn default_for(image_size: (u32, u32)) -> Result<Self, LaneError> {
        Self::evenly_spaced(image_size, (image_size.1 as usize / 4).max(2))
    }

    pub fn validate(&self) -> Result<(), LaneError> {
        if self.rows.len() < 2 {
            return Err(LaneError::Layout(format!(
                "need at least 2 anchor rows, got {}",
                self.rows.len()
            )));
        }
        let h = self.image_size.1 as f64;
        if self.rows.iter().any(|&y| !(0.0..h).contains(&y)) {
            return Err(LaneError::Layout(format!("anchor rows must lie in [0, {h})")));
        }
        if self.rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LaneError::Layout("anchor rows must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cx: f64,
    pub cy: f64,
    pub score: f64,
    /// One entry per anchor row; `None` where the head predicts nothing.
    pub offsets: Vec<Option<f64>>,
    /// Upper terminus of the proposed lane, in pixels.
    pub end_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGrid {
    pub level: u32,
    pub grid_w: u32,
    pub grid_h: u32,
    pub cells: Vec<GridCell>,
}

impl HeadGrid {
    pub fn validate(&self, rows: usize) -> Result<(), LaneError> {
        let expected = self.grid_w as usize * self.grid_h as usize;
        if self.cells.len() != expected {
            return Err(LaneError::Grid(format!(
                "level {}: {} cells for a {}x{} grid",
                self.level,
                self.cells.len(),
                self.grid_w,
                self.grid_h
            )));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if !(0.0..=1.0).contains(&cell.score) {
                return Err(LaneError::Grid(format!(
                    "level {} cell {i}: score {} outside [0, 1]",
                    self.level, cell.score
                )));
            }
            if cell.offsets.len() != rows {
                return Err(LaneError::Grid(format!(
                    "level {} cell {i}: {} offsets for {rows} anchor rows",
                    self.level,
                    cell.offsets.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneProposalSet {
    pub layout: AnchorLayout,
    pub heads: Vec<HeadGrid>,
}

impl LaneProposalSet {
    pub fn validate(&self) -> Result<(), LaneError> {
        self.layout.validate()?;
        self.heads
            .iter()
            .try_for_each(|h| h.validate(self.layout.len()))
    }

    pub fn num_cells(&self) -> usize {
        self.heads.iter().map(|h| h.cells.len()).sum()
    }
}

/// Which grid cell produced a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub level: u32,
    pub cell: usize,
    /// Score of the proposing cell after masking.
    pub score: f64,
    /// Vertical centre of the proposing cell.
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PointSource>,
}

/// A lane polyline, points sorted top to bottom (increasing y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneLine {
    pub points: Vec<LanePoint>,
    pub score: f64,
}

impl LaneLine {
    /// Builds a source-less line (ground truth, external predictions).
    pub fn from_xy(points: impl IntoIterator<Item = (f64, f64)>, score: f64) -> Self {
        let mut points: Vec<LanePoint> = points
            .into_iter()
            .map(|(x, y)| LanePoint { x, y, source: None })
            .collect();
        points.sort_by(|a, b| a.y.total_cmp(&b.y));
        Self { points, score }
    }

    pub fn xy(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|p| (p.x, p.y))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Decodes one cell. `masked_score` is the score after adaptive masking and
/// is stamped on the line and on every point's source.
pub fn decode_cell(
    cell: &GridCell,
    layout: &AnchorLayout,
    level: u32,
    index: usize,
    masked_score: f64,
) -> Result<LaneLine, LaneError> {
    let source = PointSource {
        level,
        cell: index,
        score: masked_score,
        cy: cell.cy,
    };
    let points: Vec<LanePoint> = layout
        .rows
        .iter()
        .zip(&cell.offsets)
        .filter(|(&y, _)| y >= cell.end_y)
        .filter_map(|(&y, dx)| {
            dx.map(|dx| LanePoint {
                x: cell.cx + dx,
                y,
                source: Some(source),
            })
        })
        .collect();
    if points.len() < 2 {
        return Err(LaneError::Degenerate {
            points: points.len(),
        });
    }
    Ok(LaneLine {
        points,
        score: masked_score,
    })
}

/// Mean absolute horizontal gap over the rows both lines cover, or
/// `f64::INFINITY` when they share none. Rows match on exact y.
pub fn line_distance(a: &LaneLine, b: &LaneLine) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut total = 0.0;
    let mut shared = 0usize;
    while i < a.points.len() && j < b.points.len() {
        let (pa, pb) = (&a.points[i], &b.points[j]);
        if pa.y < pb.y {
            i += 1;
        } else if pb.y < pa.y {
            j += 1;
        } else {
            total += (pa.x - pb.x).abs();
            shared += 1;
            i += 1;
            j += 1;
        }
    }
    if shared == 0 {
        f64::INFINITY
    } else {
        total / shared as f64
    }
}

/// Decodes every cell whose masked score reaches `threshold`.
///
/// `masked_scores[h][c]` is the masked score of cell `c` of head `h`.
/// Degenerate cells are skipped.
pub fn decode_all(
    proposals: &LaneProposalSet,
    masked_scores: &[Vec<f64>],
    threshold: f64,
) -> Vec<LaneLine> {
    let mut lines = Vec::new();
    for (head, scores) in proposals.heads.iter().zip(masked_scores) {
        for (idx, (cell, &score)) in head.cells.iter().zip(scores).enumerate() {
            if score < threshold {
                continue;
            }
            if let Ok(line) = decode_cell(cell, &proposals.layout, head.level, idx, score) {
                lines.push(line);
            }
        }
    }
    lines
}

/// [`decode_all`] on the raw cell scores.
pub fn decode_all_raw(proposals: &LaneProposalSet, threshold: f64) -> Vec<LaneLine> {
    let scores: Vec<Vec<f64>> = proposals
        .heads
        .iter()
        .map(|h| h.cells.iter().map(|c| c.score).collect())
        .collect();
    decode_all(proposals, &scores, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> AnchorLayout {
        AnchorLayout::new((200, 100), vec![0.0, 20.0, 40.0, 60.0, 80.0]).unwrap()
    }

    fn cell(cx: f64, offsets: Vec<Option<f64>>, end_y: f64, score: f64) -> GridCell {
        GridCell {
            cx,
            cy: 80.0,
            score,
            offsets,
            end_y,
        }
    }

    #[test]
    fn zero_offsets_give_vertical_line() {
        let line = decode_cell(&cell(50.0, vec![Some(0.0); 5], 0.0, 0.9), &layout(), 1, 3, 0.9).unwrap();
        assert_eq!(line.points.len(), 5);
        assert!(line.points.iter().all(|p| p.x == 50.0));
        let ys: Vec<f64> = line.points.iter().map(|p| p.y).collect();
        assert_eq!(ys, layout().rows);
        let src = line.points[0].source.unwrap();
        assert_eq!((src.level, src.cell, src.score), (1, 3, 0.9));
    }

    #[test]
    fn slanted_offsets_decode_to_straight_line() {
        let lay = layout();
        let k = 0.5;
        let bottom = *lay.rows.last().unwrap();
        let offsets = lay.rows.iter().map(|y| Some(k * (bottom - y))).collect();
        let line = decode_cell(&cell(100.0, offsets, 0.0, 0.5), &lay, 1, 0, 0.5).unwrap();
        let p0 = line.points[0];
        for p in &line.points[1..] {
            let slope = (p.x - p0.x) / (p.y - p0.y);
            assert!((slope + k).abs() < 1e-12);
        }
    }

    #[test]
    fn ending_point_drops_upper_rows() {
        let line = decode_cell(&cell(10.0, vec![Some(1.0); 5], 30.0, 0.5), &layout(), 1, 0, 0.5).unwrap();
        assert_eq!(line.points.first().unwrap().y, 40.0);
        assert_eq!(line.points.len(), 3);
    }

    #[test]
    fn ending_below_last_row_is_degenerate() {
        let err = decode_cell(&cell(10.0, vec![Some(1.0); 5], 90.0, 0.5), &layout(), 1, 0, 0.5).unwrap_err();
        assert_eq!(err, LaneError::Degenerate { points: 0 });
        let missing = vec![None, None, None, None, Some(0.0)];
        assert!(decode_cell(&cell(10.0, missing, 0.0, 0.5), &layout(), 1, 0, 0.5).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = LaneLine::from_xy(layout().rows.iter().map(|&y| (10.0, y)), 1.0);
        let b = LaneLine::from_xy(layout().rows.iter().map(|&y| (50.0, y)), 1.0);
        assert_eq!(line_distance(&a, &a), 0.0);
        assert_eq!(line_distance(&a, &b), 40.0);
        assert_eq!(line_distance(&b, &a), 40.0);

        // 3 shared rows out of 5 with gaps 10, 20, 30
        let c = LaneLine::from_xy([(0.0, 0.0), (0.0, 20.0), (0.0, 40.0), (0.0, 60.0)], 1.0);
        let d = LaneLine::from_xy([(10.0, 20.0), (20.0, 40.0), (30.0, 60.0), (0.0, 80.0)], 1.0);
        assert!((line_distance(&c, &d) - 20.0).abs() < 1e-12);

        let e = LaneLine::from_xy([(0.0, 5.0), (0.0, 15.0)], 1.0);
        assert_eq!(line_distance(&a, &e), f64::INFINITY);
    }

    fn grid(scores: &[f64]) -> LaneProposalSet {
        let cells = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| cell(20.0 * i as f64, vec![Some(0.0); 5], 0.0, s))
            .collect();
        LaneProposalSet {
            layout: layout(),
            heads: vec![HeadGrid {
                level: 2,
                grid_w: scores.len() as u32,
                grid_h: 1,
                cells,
            }],
        }
    }

    #[test]
    fn threshold_filtering() {
        let set = grid(&[0.1, 0.9, 0.4, 0.7, 0.6, 0.2]);
        assert!(decode_all_raw(&set, 1.0).is_empty());
        assert_eq!(decode_all_raw(&set, 0.0).len(), 6);
        let kept = decode_all_raw(&set, 0.5);
        assert_eq!(kept.len(), 3);
        let scores: Vec<f64> = kept.iter().map(|l| l.score).collect();
        assert_eq!(scores, vec![0.9, 0.7, 0.6]);
    }

    #[test]
    fn layout_validation() {
        assert!(AnchorLayout::new((10, 10), vec![1.0]).is_err());
        assert!(AnchorLayout::new((10, 10), vec![1.0, 1.0]).is_err());
        assert!(AnchorLayout::new((10, 10), vec![1.0, 10.0]).is_err());
        let d = AnchorLayout::default_for((512, 288)).unwrap();
        assert_eq!(d.len(), 72);
        assert_eq!(d.rows[1], 4.0);
    }

    #[test]
    fn grid_validation() {
        let mut set = grid(&[0.5, 0.5]);
        set.validate().unwrap();
        set.heads[0].grid_w = 3;
        assert!(set.validate().is_err());
        let mut set = grid(&[0.5]);
        set.heads[0].cells[0].offsets.pop();
        assert!(set.validate().is_err());
    }
}
