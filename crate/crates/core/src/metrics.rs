//! Lane evaluation: IoU-matched F1 over lanes rasterised as thick
//! polylines, and point accuracy on shared anchor rows.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::lane_model::{LaneError, LaneLine};

pub const DEFAULT_LANE_WIDTH: f64 = 30.0;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CANVAS: (u32, u32) = (1640, 590);
pub const DEFAULT_TUSIMPLE_TOLERANCE: f64 = 20.0;

/// Binary raster on a `width x height` canvas, row-major bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
    /// Half-open range of rows that may hold set bits.
    rows: (u32, u32),
}

impl LaneMask {
    pub fn empty(canvas: (u32, u32)) -> Self {
        let bits = canvas.0 as usize * canvas.1 as usize;
        Self {
            width: canvas.0,
            height: canvas.1,
            words: vec![0; bits.div_ceil(64)],
            rows: (0, 0),
        }
    }

    pub fn set(&mut self, x: u32, y: u32) {
        let i = y as usize * self.width as usize + x as usize;
        self.words[i / 64] |= 1 << (i % 64);
        self.rows = if self.rows.0 == self.rows.1 {
            (y, y + 1)
        } else {
            (self.rows.0.min(y), self.rows.1.max(y + 1))
        };
    }

    /// Word range covering the rows either mask may touch.
    fn span(&self, other: &Self) -> std::ops::Range<usize> {
        let lo = match (self.rows.0 == self.rows.1, other.rows.0 == other.rows.1) {
            (true, true) => return 0..0,
            (true, false) => other.rows,
            (false, true) => self.rows,
            (false, false) => (self.rows.0.min(other.rows.0), self.rows.1.max(other.rows.1)),
        };
        let w = self.width as usize;
        let start = lo.0 as usize * w / 64;
        let end = (lo.1 as usize * w).div_ceil(64).min(self.words.len());
        start..end
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = y as usize * self.width as usize + x as usize;
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn intersection_count(&self, other: &Self) -> u64 {
        let span = self.span(other);
        self.words[span.clone()]
            .iter()
            .zip(&other.words[span])
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    pub fn union_count(&self, other: &Self) -> u64 {
        let span = self.span(other);
        self.words[span.clone()]
            .iter()
            .zip(&other.words[span])
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum()
    }

    pub fn canvas(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// Squared distance from `p` to segment `a`-`b`.
pub fn point_segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Pixels whose centre lies within `width / 2` of the polyline (round caps
/// and joins), clipped to the canvas.
pub fn rasterize_lane(line: &LaneLine, width: f64, canvas: (u32, u32)) -> Result<LaneMask, LaneError> {
    if line.points.len() < 2 {
        return Err(LaneError::Degenerate {
            points: line.points.len(),
        });
    }
    let mut mask = LaneMask::empty(canvas);
    let r = width / 2.0;
    let r2 = r * r;
    let pts: Vec<(f64, f64)> = line.xy().collect();
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        // pixel centres at i + 0.5
        let x0 = (a.0.min(b.0) - r - 0.5).floor().max(0.0);
        let x1 = (a.0.max(b.0) + r - 0.5).ceil().min(canvas.0 as f64 - 1.0);
        let y0 = (a.1.min(b.1) - r - 0.5).floor().max(0.0);
        let y1 = (a.1.max(b.1) + r - 0.5).ceil().min(canvas.1 as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        // Each row meets the capsule in one interval, which contains the x of
        // the segment point closest to that row. Walk outwards from there.
        let last = canvas.0 as i64 - 1;
        let inside = |x: i64, yc: f64| point_segment_dist2((x as f64 + 0.5, yc), a, b) <= r2;
        for y in y0 as u32..=y1 as u32 {
            let yc = y as f64 + 0.5;
            let qx = if b.1 == a.1 {
                a.0
            } else {
                let t = ((yc - a.1) / (b.1 - a.1)).clamp(0.0, 1.0);
                a.0 + t * (b.0 - a.0)
            };
            let c0 = ((qx - 0.5).floor() as i64).clamp(0, last);
            let c1 = (c0 + 1).min(last);
            let start = if inside(c0, yc) {
                c0
            } else if inside(c1, yc) {
                c1
            } else {
                continue;
            };
            mask.set(start as u32, y);
            let mut x = start - 1;
            while x >= 0 && inside(x, yc) {
                mask.set(x as u32, y);
                x -= 1;
            }
            let mut x = start + 1;
            while x <= last && inside(x, yc) {
                mask.set(x as u32, y);
                x += 1;
            }
        }
    }
    Ok(mask)
}

fn mask_iou(a: &LaneMask, b: &LaneMask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        0.0
    } else {
        a.intersection_count(b) as f64 / union as f64
    }
}

pub fn lane_iou(a: &LaneLine, b: &LaneLine, width: f64, canvas: (u32, u32)) -> Result<f64, LaneError> {
    Ok(mask_iou(
        &rasterize_lane(a, width, canvas)?,
        &rasterize_lane(b, width, canvas)?,
    ))
}

/// Raw counts of one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl AddAssign for SceneCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

impl SceneCounts {
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

// 0/0 counts as perfect: an empty scene with no predictions is correct.
fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_scene: Vec<SceneCounts>,
}

impl MetricsReport {
    /// Sums raw counts, then applies the formulas once.
    pub fn from_scenes(per_scene: Vec<SceneCounts>) -> Self {
        let mut total = SceneCounts::default();
        for s in &per_scene {
            total += *s;
        }
        Self {
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            per_scene,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub lane_width: f64,
    pub canvas: (u32, u32),
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            lane_width: DEFAULT_LANE_WIDTH,
            canvas: DEFAULT_CANVAS,
        }
    }
}

/// Greedy one-to-one matching of one scene in descending IoU order, ties by
/// (prediction index, ground-truth index). Pairs need IoU strictly above the
/// threshold. Lanes with fewer than 2 points never match.
pub fn match_scene(pred: &[LaneLine], gt: &[LaneLine], cfg: &MatchConfig) -> SceneCounts {
    let pm = rasterize_all(pred, cfg);
    let gm = rasterize_all(gt, cfg);
    match_masks(&pm, &gm, cfg.iou_threshold)
}

/// Rasterises every lane; degenerate lanes become `None`.
pub fn rasterize_all(lines: &[LaneLine], cfg: &MatchConfig) -> Vec<Option<LaneMask>> {
    lines
        .iter()
        .map(|l| rasterize_lane(l, cfg.lane_width, cfg.canvas).ok())
        .collect()
}

/// [`match_scene`] on already rasterised lanes.
pub fn match_masks(pm: &[Option<LaneMask>], gm: &[Option<LaneMask>], iou_threshold: f64) -> SceneCounts {
    let mut pairs = Vec::new();
    for (i, p) in pm.iter().enumerate() {
        for (j, g) in gm.iter().enumerate() {
            if let (Some(p), Some(g)) = (p, g) {
                let iou = mask_iou(p, g);
                if iou > iou_threshold {
                    pairs.push((iou, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pm.len()];
    let mut gt_used = vec![false; gm.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            tp += 1;
        }
    }
    SceneCounts {
        tp,
        fp: pm.len() as u64 - tp,
        fn_: gm.len() as u64 - tp,
    }
}

/// Scores a list of `(predictions, ground truth)` scenes.
pub fn match_and_score<'a, I>(scenes: I, cfg: &MatchConfig) -> MetricsReport
where
    I: IntoIterator<Item = (&'a [LaneLine], &'a [LaneLine])>,
{
    MetricsReport::from_scenes(
        scenes
            .into_iter()
            .map(|(p, g)| match_scene(p, g, cfg))
            .collect(),
    )
}

/// Correct points and total ground-truth points for one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub correct: u64,
    pub total: u64,
}

fn correct_points(pred: &LaneLine, gt: &LaneLine, tolerance: f64) -> u64 {
    gt.points
        .iter()
        .filter(|g| {
            pred.points
                .binary_search_by(|p| p.y.total_cmp(&g.y))
                .is_ok_and(|k| (pred.points[k].x - g.x).abs() < tolerance)
        })
        .count() as u64
}

/// Point accuracy of one scene. Each ground-truth lane, in order, takes the
/// unused prediction with the most points within `tolerance` on shared rows
/// (earliest index on ties).
pub fn tusimple_scene(pred: &[LaneLine], gt: &[LaneLine], tolerance: f64) -> PointCounts {
    let mut used = vec![false; pred.len()];
    let mut counts = PointCounts::default();
    for g in gt {
        counts.total += g.points.len() as u64;
        let best = pred
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, p)| (i, correct_points(p, g, tolerance)))
            .fold(None, |acc: Option<(usize, u64)>, (i, c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((i, c)),
            });
        if let Some((i, c)) = best {
            if c > 0 {
                used[i] = true;
                counts.correct += c;
            }
        }
    }
    counts
}

/// Aggregate correct / total points; 1.0 when there are no ground-truth
/// points.
pub fn tusimple_accuracy<'a, I>(scenes: I, tolerance: f64) -> f64
where
    I: IntoIterator<Item = (&'a [LaneLine], &'a [LaneLine])>,
{
    let mut total = PointCounts::default();
    for (p, g) in scenes {
        let c = tusimple_scene(p, g, tolerance);
        total.correct += c.correct;
        total.total += c.total;
    }
    ratio_or_one(total.correct, total.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertical(x: f64, y0: f64, y1: f64) -> LaneLine {
        LaneLine::from_xy([(x, y0), (x, y1)], 1.0)
    }

    fn brute_force(line: &LaneLine, width: f64, canvas: (u32, u32)) -> LaneMask {
        let mut mask = LaneMask::empty(canvas);
        let pts: Vec<(f64, f64)> = line.xy().collect();
        for y in 0..canvas.1 {
            for x in 0..canvas.0 {
                let c = (x as f64 + 0.5, y as f64 + 0.5);
                let d2 = pts
                    .windows(2)
                    .map(|s| point_segment_dist2(c, s[0], s[1]))
                    .fold(f64::INFINITY, f64::min);
                if d2 <= (width / 2.0) * (width / 2.0) {
                    mask.set(x, y);
                }
            }
        }
        mask
    }

    #[test]
    fn thick_segment_area() {
        let line = vertical(200.0, 100.0, 200.0);
        let n = rasterize_lane(&line, 30.0, (400, 400)).unwrap().count() as f64;
        let analytic = 100.0 * 30.0 + std::f64::consts::PI * 15.0 * 15.0;
        assert!((n - analytic).abs() / analytic < 0.02, "{n} vs {analytic}");
    }

    #[test]
    fn outside_canvas_is_empty() {
        let line = vertical(-100.0, 10.0, 50.0);
        assert_eq!(rasterize_lane(&line, 30.0, (64, 64)).unwrap().count(), 0);
        let line = LaneLine::from_xy([(10.0, 500.0), (20.0, 600.0)], 1.0);
        assert_eq!(rasterize_lane(&line, 30.0, (64, 64)).unwrap().count(), 0);
    }

    #[test]
    fn unit_width_traces_pixels() {
        let line = vertical(10.5, 10.5, 20.5);
        let mask = rasterize_lane(&line, 1.0, (32, 32)).unwrap();
        assert_eq!(mask.count(), 11);
        for y in 10..=20 {
            assert!(mask.get(10, y));
        }
    }

    #[test]
    fn degenerate_line() {
        let line = LaneLine::from_xy([(1.0, 1.0)], 1.0);
        assert!(rasterize_lane(&line, 30.0, (8, 8)).is_err());
    }

    #[test]
    fn iou_examples() {
        let canvas = (400, 600);
        let a = vertical(100.0, 50.0, 550.0);
        assert_eq!(lane_iou(&a, &a, 30.0, canvas).unwrap(), 1.0);
        let far = vertical(300.0, 50.0, 550.0);
        assert_eq!(lane_iou(&a, &far, 30.0, canvas).unwrap(), 0.0);
        let b = vertical(115.0, 50.0, 550.0);
        let iou = lane_iou(&a, &b, 30.0, canvas).unwrap();
        assert!((iou - 15.0 / 45.0).abs() < 0.02, "{iou}");
        let brute = mask_iou(&brute_force(&a, 30.0, canvas), &brute_force(&b, 30.0, canvas));
        assert_eq!(iou, brute);
    }

    #[test]
    fn raster_matches_brute_force_polyline() {
        let line = LaneLine::from_xy([(5.0, 60.0), (20.0, 40.0), (22.5, 30.0), (50.0, 2.0)], 1.0);
        for w in [1.0, 3.0, 7.5, 30.0] {
            assert_eq!(rasterize_lane(&line, w, (64, 64)).unwrap(), brute_force(&line, w, (64, 64)));
        }
    }

    fn long(x: f64) -> LaneLine {
        vertical(x, 10.0, 580.0)
    }

    #[test]
    fn f1_cases() {
        let cfg = MatchConfig::default();
        let gt = vec![long(100.0), long(400.0)];
        let r = match_and_score([(gt.as_slice(), gt.as_slice())], &cfg);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let r = match_and_score([(&[][..], gt.as_slice())], &cfg);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 2));
        assert_eq!(r.f1, 0.0);

        let gt = vec![long(100.0)];
        let pred = vec![long(100.0), long(102.0)];
        let r = match_and_score([(pred.as_slice(), gt.as_slice())], &cfg);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_scene_is_perfect() {
        let r = match_and_score([(&[][..], &[][..])], &MatchConfig::default());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn aggregation_sums_counts() {
        let cfg = MatchConfig::default();
        let gt1 = vec![long(100.0)];
        let gt2 = vec![long(100.0), long(400.0), long(700.0)];
        let p2 = vec![long(100.0)];
        let r = match_and_score([(gt1.as_slice(), gt1.as_slice()), (p2.as_slice(), gt2.as_slice())], &cfg);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 2));
        // recall 0.5, precision 1 -> 2/3, not the mean of per-scene F1 (1 and 0.5)
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tusimple_examples() {
        let rows = [100.0, 200.0, 300.0, 400.0];
        let gt = vec![LaneLine::from_xy(rows.iter().map(|&y| (50.0, y)), 1.0)];
        assert_eq!(tusimple_accuracy([(gt.as_slice(), gt.as_slice())], 20.0), 1.0);

        let off = vec![LaneLine::from_xy(rows.iter().map(|&y| (80.0, y)), 1.0)];
        assert_eq!(tusimple_accuracy([(off.as_slice(), gt.as_slice())], 20.0), 0.0);

        let three = vec![LaneLine::from_xy(
            [(50.0, 100.0), (55.0, 200.0), (60.0, 300.0), (90.0, 400.0)],
            1.0,
        )];
        assert_eq!(tusimple_accuracy([(three.as_slice(), gt.as_slice())], 20.0), 0.75);
    }
}
