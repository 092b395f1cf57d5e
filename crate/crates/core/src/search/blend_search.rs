//! Cheap inner loop over post-processing parameters.
//!
//! Proposals are frozen, so one evaluation is just decode, blend and match
//! over a set of scenes. The loop is a hill climb from the default
//! parameters: perturb the incumbent, keep the child when its F1 is at least
//! as good.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_model::{LaneLine, LaneProposalSet};
use crate::metrics::{match_masks, match_scene, rasterize_all, LaneMask, MatchConfig, MetricsReport, SceneCounts};
use crate::point_blend::{postprocess, BlendParamSet, BlendParamSpace};

#[derive(Debug, Error, PartialEq)]
pub enum BlendSearchError {
    #[error("blend search needs at least one scene")]
    EmptyDataset,
    #[error("invalid blend search input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSearchConfig {
    pub iterations: usize,
    pub matching: MatchConfig,
}

impl Default for BlendSearchConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            matching: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSearchResult {
    pub params: BlendParamSet,
    pub f1: f64,
    pub default_f1: f64,
    /// Incumbent F1 after each iteration.
    pub trace: Vec<f64>,
}

/// A scene's proposals together with its ground-truth lanes.
pub type ReplayScene = (LaneProposalSet, Vec<LaneLine>);

/// Per-scene counts of `params` on `scenes`, in scene order.
pub fn scene_counts(scenes: &[ReplayScene], params: &BlendParamSet, matching: &MatchConfig) -> Vec<SceneCounts> {
    scenes
        .par_iter()
        .map(|(proposals, gt)| match_scene(&postprocess(proposals, params), gt, matching))
        .collect()
}

/// Aggregate F1 of `params` on `scenes`.
pub fn evaluate_blend(scenes: &[ReplayScene], params: &BlendParamSet, matching: &MatchConfig) -> MetricsReport {
    MetricsReport::from_scenes(scene_counts(scenes, params, matching))
}

/// Head levels present in any scene.
pub fn scene_levels(scenes: &[ReplayScene]) -> BTreeSet<u32> {
    scenes
        .iter()
        .flat_map(|(p, _)| p.heads.iter().map(|h| h.level))
        .collect()
}

/// Scenes with their ground truth rasterised once.
struct Prepared<'a> {
    proposals: &'a LaneProposalSet,
    gt: Vec<Option<LaneMask>>,
}

fn prepare<'a>(scenes: &'a [ReplayScene], matching: &MatchConfig) -> Vec<Prepared<'a>> {
    scenes
        .par_iter()
        .map(|(proposals, gt)| Prepared {
            proposals,
            gt: rasterize_all(gt, matching),
        })
        .collect()
}

fn prepared_f1(scenes: &[Prepared<'_>], params: &BlendParamSet, matching: &MatchConfig) -> f64 {
    let counts = scenes
        .par_iter()
        .map(|s| {
            let pred = rasterize_all(&postprocess(s.proposals, params), matching);
            match_masks(&pred, &s.gt, matching.iou_threshold)
        })
        .collect();
    MetricsReport::from_scenes(counts).f1
}

pub fn run_blend_inner_search<R: Rng + ?Sized>(
    scenes: &[ReplayScene],
    space: &BlendParamSpace,
    config: &BlendSearchConfig,
    rng: &mut R,
) -> Result<BlendSearchResult, BlendSearchError> {
    if scenes.is_empty() {
        return Err(BlendSearchError::EmptyDataset);
    }
    space.validate().map_err(|e| BlendSearchError::Invalid(e.to_string()))?;
    for (i, (p, _)) in scenes.iter().enumerate() {
        p.validate()
            .map_err(|e| BlendSearchError::Invalid(format!("scene {i}: {e}")))?;
    }

    let prepared = prepare(scenes, &config.matching);
    let mut best = space.default_params(scene_levels(scenes));
    let default_f1 = prepared_f1(&prepared, &best, &config.matching);
    let mut best_f1 = default_f1;
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let child = space.perturb(&best, rng);
        let f1 = prepared_f1(&prepared, &child, &config.matching);
        // equal scores move along plateaus
        if f1 >= best_f1 {
            best = child;
            best_f1 = f1;
        }
        trace.push(best_f1);
    }
    Ok(BlendSearchResult {
        params: best,
        f1: best_f1,
        default_f1,
        trace,
    })
}
