//! Adaptive point blending post-processor.
//!
//! Pipeline: re-weight each cell score with a per-level spatial mask, drop
//! lanes under the score threshold, group the rest greedily by mutual line
//! distance, then rebuild each group's top line row by row from whichever
//! member is most trustworthy at that row. A cell is trusted near its own
//! centre, so a low-score cell sitting at a remote row can supply that row.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_model::{decode_all, LaneLine, LaneProposalSet};

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before taking a logit.
pub const SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlendError {
    #[error("invalid blend parameter {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> BlendError {
    BlendError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Score-mask parameters of one feature level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendParams {
    /// Weight of the vertical position, per pixel.
    pub alpha1: f64,
    pub beta1: f64,
    /// Weight of the distance to `center`, per pixel.
    pub alpha2: f64,
    pub center: (f64, f64),
}

impl BlendParams {
    /// Mask with logit 0 everywhere.
    pub fn identity(center: (f64, f64)) -> Self {
        Self {
            alpha1: 0.0,
            beta1: 0.0,
            alpha2: 0.0,
            center,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.alpha1 == 0.0 && self.beta1 == 0.0 && self.alpha2 == 0.0
    }
}

/// Full post-processing configuration: one mask per head level plus the
/// NMS and blending thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendParamSet {
    pub per_level: BTreeMap<u32, BlendParams>,
    pub score_threshold: f64,
    pub group_distance: f64,
    /// Locality scale in pixels; infinity disables locality weighting.
    #[serde(with = "f64_or_inf")]
    pub locality_sigma: f64,
}

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_GROUP_DISTANCE: f64 = 50.0;

impl BlendParamSet {
    /// Identity masks, default thresholds, locality off. This is plain
    /// Line-NMS.
    pub fn defaults(levels: impl IntoIterator<Item = u32>, image_size: (u32, u32)) -> Self {
        let center = (image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0);
        Self {
            per_level: levels
                .into_iter()
                .map(|l| (l, BlendParams::identity(center)))
                .collect(),
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            group_distance: DEFAULT_GROUP_DISTANCE,
            locality_sigma: f64::INFINITY,
        }
    }

    /// Same thresholds with identity masks and locality off.
    pub fn plain_nms(&self) -> Self {
        Self {
            per_level: self
                .per_level
                .iter()
                .map(|(&l, p)| (l, BlendParams::identity(p.center)))
                .collect(),
            locality_sigma: f64::INFINITY,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), BlendError> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(invalid("score_threshold", format!("{} outside [0, 1]", self.score_threshold)));
        }
        if !(self.group_distance > 0.0 && self.group_distance.is_finite()) {
            return Err(invalid("group_distance", "must be a positive finite distance"));
        }
        if !(self.locality_sigma > 0.0) {
            return Err(invalid("locality_sigma", "must be positive"));
        }
        for (level, p) in &self.per_level {
            let finite = [p.alpha1, p.beta1, p.alpha2, p.center.0, p.center.1]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(invalid(format!("per_level.{level}"), "non-finite value"));
            }
        }
        Ok(())
    }

    /// Keeps one entry per level in `levels`, adding identity masks centred
    /// in the image for new levels.
    pub fn fit_to_levels(&mut self, levels: &BTreeSet<u32>, image_size: (u32, u32)) {
        self.per_level.retain(|l, _| levels.contains(l));
        let center = (image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0);
        for &l in levels {
            self.per_level
                .entry(l)
                .or_insert_with(|| BlendParams::identity(center));
        }
    }
}

/// Serialises infinity as the string `"inf"` so JSON stays valid.
mod f64_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

/// Logit of the score mask at cell centre `c`:
/// `alpha1 * c_y + beta1 + alpha2 * |c - center|`.
pub fn mask_logit(params: &BlendParams, c: (f64, f64)) -> f64 {
    let (cx, cy) = c;
    let (ux, uy) = params.center;
    params.alpha1 * cy + params.beta1 + params.alpha2 * ((cx - ux).powi(2) + (cy - uy).powi(2)).sqrt()
}

/// Combines a raw score with a mask logit additively in logit space. A zero
/// logit returns the clamped score unchanged.
pub fn apply_mask(score: f64, logit: f64) -> f64 {
    let s = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    if logit == 0.0 {
        return s;
    }
    let z = (s / (1.0 - s)).ln() + logit;
    1.0 / (1.0 + (-z).exp())
}

/// Masked score of every cell, indexed `[head][cell]`.
pub fn masked_scores(proposals: &LaneProposalSet, params: &BlendParamSet) -> Vec<Vec<f64>> {
    proposals
        .heads
        .iter()
        .map(|head| {
            let mask = params.per_level.get(&head.level);
            head.cells
                .iter()
                .map(|cell| {
                    let logit = mask.map_or(0.0, |m| mask_logit(m, (cell.cx, cell.cy)));
                    apply_mask(cell.score, logit)
                })
                .collect()
        })
        .collect()
}

/// Greedy NMS grouping. Returns groups as indices into `lines`, each group's
/// seed (highest score, earliest index on ties) first. Groups come out in
/// seed order.
pub fn group_lines(lines: &[LaneLine], group_distance: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| lines[b].score.total_cmp(&lines[a].score));
    let mut assigned = vec![false; lines.len()];
    let mut groups = Vec::new();
    for (pos, &seed) in order.iter().enumerate() {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut group = vec![seed];
        for &other in &order[pos + 1..] {
            if !assigned[other] && crate::lane_model::line_distance(&lines[seed], &lines[other]) < group_distance {
                assigned[other] = true;
                group.push(other);
            }
        }
        groups.push(group);
    }
    groups
}

fn locality_weight(score: f64, y: f64, cy: f64, sigma: f64) -> f64 {
    score * (-(y - cy).powi(2) / (sigma * sigma)).exp()
}

/// Rebuilds the representative (`group[0]`) row by row. At each of its rows
/// the point with the highest `score * exp(-(y - cy)^2 / sigma^2)` among the
/// members covering that row wins; the representative keeps ties.
pub fn blend_group(lines: &[LaneLine], group: &[usize], sigma: f64) -> LaneLine {
    let rep = &lines[group[0]];
    let mut out = rep.clone();
    if group.len() == 1 {
        return out;
    }
    for point in &mut out.points {
        let weight_of = |p: &crate::lane_model::LanePoint, line_score: f64| match p.source {
            Some(src) => locality_weight(src.score, p.y, src.cy, sigma),
            None => line_score,
        };
        let mut best = *point;
        let mut best_w = weight_of(point, rep.score);
        for &m in &group[1..] {
            let member = &lines[m];
            let Ok(k) = member.points.binary_search_by(|q| q.y.total_cmp(&point.y)) else {
                continue;
            };
            let candidate = member.points[k];
            let w = weight_of(&candidate, member.score);
            if w > best_w {
                best = candidate;
                best_w = w;
            }
        }
        *point = best;
    }
    out
}

/// Mask, threshold, group and blend. One output line per group.
pub fn postprocess(proposals: &LaneProposalSet, params: &BlendParamSet) -> Vec<LaneLine> {
    let scores = masked_scores(proposals, params);
    let lines = decode_all(proposals, &scores, params.score_threshold);
    group_lines(&lines, params.group_distance)
        .iter()
        .map(|g| blend_group(&lines, g, params.locality_sigma))
        .collect()
}

/// Classic Line-NMS on raw scores: keep the best remaining lane, suppress
/// everything closer than `group_distance`, repeat.
pub fn plain_line_nms(proposals: &LaneProposalSet, score_threshold: f64, group_distance: f64) -> Vec<LaneLine> {
    let mut candidates = Vec::new();
    for head in &proposals.heads {
        for (idx, cell) in head.cells.iter().enumerate() {
            let score = cell.score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
            if score < score_threshold {
                continue;
            }
            if let Ok(line) = crate::lane_model::decode_cell(cell, &proposals.layout, head.level, idx, score) {
                candidates.push(line);
            }
        }
    }
    // stable sort keeps decode order on ties
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<LaneLine> = Vec::new();
    let mut suppressed = vec![false; candidates.len()];
    for i in 0..candidates.len() {
        if suppressed[i] {
            continue;
        }
        for j in i + 1..candidates.len() {
            if !suppressed[j] && crate::lane_model::line_distance(&candidates[i], &candidates[j]) < group_distance {
                suppressed[j] = true;
            }
        }
        kept.push(candidates[i].clone());
    }
    kept
}

/// `(min, max, mutation sigma)` for one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub sigma: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64, sigma: f64) -> Self {
        Self { min, max, sigma }
    }

    fn perturb<R: Rng + ?Sized>(&self, value: f64, rng: &mut R) -> f64 {
        let start = if value.is_finite() { value } else { self.max };
        let step = Normal::new(0.0, self.sigma).expect("sigma validated").sample(rng);
        (start + step).clamp(self.min, self.max)
    }
}

/// Search bounds of the post-processing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendParamSpace {
    pub image_size: (u32, u32),
    pub alpha1: ParamRange,
    pub beta1: ParamRange,
    pub alpha2: ParamRange,
    pub center_x: ParamRange,
    pub center_y: ParamRange,
    pub score_threshold: ParamRange,
    pub group_distance: ParamRange,
    pub locality_sigma: ParamRange,
}

impl BlendParamSpace {
    pub fn for_image(image_size: (u32, u32)) -> Self {
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        Self {
            image_size,
            alpha1: ParamRange::new(-0.05, 0.05, 0.005),
            beta1: ParamRange::new(-4.0, 4.0, 0.4),
            alpha2: ParamRange::new(-0.05, 0.05, 0.005),
            center_x: ParamRange::new(0.0, w, w / 20.0),
            center_y: ParamRange::new(0.0, h, h / 20.0),
            score_threshold: ParamRange::new(0.05, 0.95, 0.05),
            group_distance: ParamRange::new(5.0, 200.0, 10.0),
            locality_sigma: ParamRange::new(5.0, 2.0 * h, h / 10.0),
        }
    }

    pub fn validate(&self) -> Result<(), BlendError> {
        for (name, r) in self.ranges() {
            if !(r.min < r.max) || !(r.sigma > 0.0) {
                return Err(invalid(name, format!("need min < max and sigma > 0, got {r:?}")));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [(&'static str, ParamRange); 8] {
        [
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("alpha2", self.alpha2),
            ("center_x", self.center_x),
            ("center_y", self.center_y),
            ("score_threshold", self.score_threshold),
            ("group_distance", self.group_distance),
            ("locality_sigma", self.locality_sigma),
        ]
    }

    /// The documented starting point: plain Line-NMS with default thresholds.
    pub fn default_params(&self, levels: impl IntoIterator<Item = u32>) -> BlendParamSet {
        BlendParamSet::defaults(levels, self.image_size)
    }

    /// Gaussian perturbation of a random non-empty subset of the scalar
    /// parameters, clamped to the bounds.
    pub fn perturb<R: Rng + ?Sized>(&self, params: &BlendParamSet, rng: &mut R) -> BlendParamSet {
        let mut next = params.clone();
        let levels: Vec<u32> = next.per_level.keys().copied().collect();
        let slots = 3 + 5 * levels.len();
        let p = 1.0 / slots as f64;
        let forced = rng.random_range(0..slots);
        for slot in 0..slots {
            if slot != forced && !rng.random_bool(p) {
                continue;
            }
            match slot {
                0 => next.score_threshold = self.score_threshold.perturb(next.score_threshold, rng),
                1 => next.group_distance = self.group_distance.perturb(next.group_distance, rng),
                2 => next.locality_sigma = self.locality_sigma.perturb(next.locality_sigma, rng),
                _ => {
                    let level = levels[(slot - 3) / 5];
                    let m = next.per_level.get_mut(&level).expect("level listed");
                    match (slot - 3) % 5 {
                        0 => m.alpha1 = self.alpha1.perturb(m.alpha1, rng),
                        1 => m.beta1 = self.beta1.perturb(m.beta1, rng),
                        2 => m.alpha2 = self.alpha2.perturb(m.alpha2, rng),
                        3 => m.center.0 = self.center_x.perturb(m.center.0, rng),
                        _ => m.center.1 = self.center_y.perturb(m.center.1, rng),
                    }
                }
            }
        }
        next
    }
}
