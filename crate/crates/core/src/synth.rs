//! Synthetic proposal corpus with a known failure mode.
//!
//! Each scene holds a few quadratic lanes that converge toward the horizon.
//! Every grid cell the lane passes through proposes the whole lane, but the
//! proposal is only accurate near the cell itself: the horizontal error grows
//! with the vertical distance from the cell centre. Cells close to the bottom
//! of the image score highest, so plain NMS keeps a lane whose far end is
//! off, while lower-scored cells further up know the far end precisely.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::SceneRecord;
use crate::lane_model::{AnchorLayout, GridCell, HeadGrid, LaneProposalSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneConfig {
    pub num_scenes: usize,
    /// Range of the quadratic coefficient, in 1/px.
    pub curvature: (f64, f64),
    /// Scale of the error on far-away rows, in px.
    pub remote_noise: f64,
    pub lanes_per_scene: usize,
    pub seed: u64,
    pub image_size: (u32, u32),
    /// Vertical distance between anchor rows, in px.
    pub row_step: f64,
    /// `(level, grid_w, grid_h)` of each head.
    pub heads: Vec<(u32, u32, u32)>,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        Self {
            num_scenes: 100,
            curvature: (-4e-4, 4e-4),
            remote_noise: 20.0,
            lanes_per_scene: 4,
            seed: 0,
            image_size: (1640, 590),
            row_step: 10.0,
            heads: vec![(1, 41, 15), (2, 21, 8)],
        }
    }
}

impl SynthSceneConfig {
    pub fn validate(&self) -> Result<(), String> {
        let (c0, c1) = self.curvature;
        if !(c0.is_finite() && c1.is_finite() && c0 <= c1) {
            return Err(format!("bad curvature range ({c0}, {c1})"));
        }
        if !(self.remote_noise >= 0.0 && self.remote_noise.is_finite()) {
            return Err(format!("remote noise must be >= 0, got {}", self.remote_noise));
        }
        if self.lanes_per_scene == 0 || self.lanes_per_scene > 8 {
            return Err(format!("lanes per scene must be in 1..=8, got {}", self.lanes_per_scene));
        }
        if self.image_size.0 < 64 || self.image_size.1 < 64 {
            return Err(format!("image {:?} too small", self.image_size));
        }
        if !(self.row_step >= 1.0) || self.row_step * 4.0 > self.image_size.1 as f64 {
            return Err(format!("bad row step {}", self.row_step));
        }
        if self.heads.is_empty() || self.heads.iter().any(|&(_, w, h)| w == 0 || h == 0) {
            return Err("need at least one non-empty head grid".into());
        }
        Ok(())
    }
}

/// Lanes reach up to this fraction of the image height (plus jitter).
const LANE_TOP: f64 = 0.35;
/// Lane tops sit this fraction of the bottom spread away from the centre.
const TOP_SPREAD: f64 = 0.4;
/// Error multiplier at a distance of one full lane length.
const REMOTE_GAIN: f64 = 1.2;
const REMOTE_POWER: f64 = 1.5;
const BACKGROUND_MAX_SCORE: f64 = 0.1;

struct Lane {
    x_bottom: f64,
    y_bottom: f64,
    y_top: f64,
    k1: f64,
    c: f64,
}

impl Lane {
    fn x(&self, y: f64) -> f64 {
        let t = self.y_bottom - y;
        self.x_bottom + self.k1 * t + self.c * t * t
    }
}

fn scene_lanes(cfg: &SynthSceneConfig, rng: &mut ChaCha8Rng) -> Vec<Lane> {
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let n = cfg.lanes_per_scene;
    let c = rng.random_range(cfg.curvature.0..=cfg.curvature.1);
    let spacing = w / n as f64;
    (0..n)
        .map(|i| {
            let x_bottom = spacing * (i as f64 + 0.5) + rng.random_range(-0.1..=0.1) * spacing;
            let y_top = h * LANE_TOP + rng.random_range(-0.03..=0.03) * h;
            let len = h - y_top;
            let x_top = w / 2.0 + TOP_SPREAD * (x_bottom - w / 2.0);
            Lane {
                x_bottom,
                y_bottom: h,
                y_top,
                k1: (x_top - x_bottom - c * len * len) / len,
                c,
            }
        })
        .collect()
}

/// One proposal set and its ground truth per scene. The same seed always
/// yields the same corpus.
pub fn generate_synthetic_scenes(cfg: &SynthSceneConfig) -> Vec<(LaneProposalSet, SceneRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let rows: Vec<f64> = (0..)
        .map(|z| z as f64 * cfg.row_step)
        .take_while(|&y| y < h)
        .collect();
    let layout = AnchorLayout::new(cfg.image_size, rows.clone()).expect("validated row step");

    (0..cfg.num_scenes)
        .map(|s| {
            let lanes = scene_lanes(cfg, &mut rng);
            let gt_lanes: Vec<Vec<(f64, f64)>> = lanes
                .iter()
                .map(|l| {
                    rows.iter()
                        .filter(|&&y| y >= l.y_top)
                        .map(|&y| (l.x(y), y))
                        .collect()
                })
                .collect();

            let heads = cfg
                .heads
                .iter()
                .enumerate()
                .map(|(hi, &(level, gw, gh))| {
                    let (cw, ch) = (w / gw as f64, h / gh as f64);
                    let level_factor = 0.95f64.powi(hi as i32);
                    let mut cells: Vec<GridCell> = (0..gh)
                        .flat_map(|j| (0..gw).map(move |i| (i, j)))
                        .map(|(i, j)| GridCell {
                            cx: (i as f64 + 0.5) * cw,
                            cy: (j as f64 + 0.5) * ch,
                            score: 0.0,
                            offsets: vec![None; rows.len()],
                            end_y: h,
                        })
                        .collect();
                    for cell in &mut cells {
                        cell.score = rng.random_range(0.0..BACKGROUND_MAX_SCORE);
                    }
                    for lane in &lanes {
                        let len = lane.y_bottom - lane.y_top;
                        for j in 0..gh {
                            let cy = (j as f64 + 0.5) * ch;
                            if cy < lane.y_top {
                                continue;
                            }
                            let col = (lane.x(cy) / cw).floor();
                            if col < 0.0 || col >= gw as f64 {
                                continue;
                            }
                            let cell = &mut cells[(j * gw + col as u32) as usize];
                            if cell.score >= BACKGROUND_MAX_SCORE {
                                // already claimed by another lane
                                continue;
                            }
                            let height = (cy - lane.y_top) / (h - lane.y_top);
                            cell.score = ((0.3 + 0.65 * height) * level_factor + rng.random_range(-0.01..=0.01))
                                .clamp(BACKGROUND_MAX_SCORE, 1.0);
                            cell.end_y = lane.y_top;
                            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                            let bias = sign * (1.0 + 0.5 * rng.random::<f64>());
                            for (z, &y) in rows.iter().enumerate() {
                                let xi: f64 = StandardNormal.sample(&mut rng);
                                if y < lane.y_top {
                                    continue;
                                }
                                let d = (y - cy).abs() / len;
                                let err = cfg.remote_noise * REMOTE_GAIN * d.powf(REMOTE_POWER) * (bias + 0.25 * xi);
                                cell.offsets[z] = Some(lane.x(y) - cell.cx + err);
                            }
                        }
                    }
                    HeadGrid {
                        level,
                        grid_w: gw,
                        grid_h: gh,
                        cells,
                    }
                })
                .collect();

            (
                LaneProposalSet {
                    layout: layout.clone(),
                    heads,
                },
                SceneRecord {
                    image_id: format!("synth_{s:05}"),
                    image_size: cfg.image_size,
                    gt_lanes,
                },
            )
        })
        .collect()
}
