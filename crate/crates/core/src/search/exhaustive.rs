//! Brute-force enumeration of small spaces, used as ground truth for the
//! search loop.

use std::collections::BTreeSet;

use super::archive::{dominates, ParetoArchive};
use super::evaluator::Evaluator;
use super::engine::SearchError;
use crate::arch_space::{ArchEncoding, FusionLayer, FusionSpec, SpaceConfig, DEFAULT_FUSION_CHANNELS};
use crate::cost_model::{candidate_cost, CostConfig};
use crate::point_blend::BlendParamSpace;

/// Every genome of `space` with default blend parameters. Fusion layers are
/// enumerated too, so keep `fusion_layers` small.
pub fn enumerate_genomes(space: &SpaceConfig, blend_space: &BlendParamSpace) -> Vec<ArchEncoding> {
    let mut out = Vec::new();
    for backbone in space.enumerate_backbones() {
        let t = backbone.stage_count();
        for layers in fusion_layer_lists(space.fusion_layers, t) {
            for mask in 1u32..(1 << t) {
                let heads_at: BTreeSet<u32> = (1..=t).filter(|l| mask & (1 << (l - 1)) != 0).collect();
                let blend = blend_space.default_params(heads_at.iter().copied());
                out.push(ArchEncoding {
                    backbone: backbone.clone(),
                    fusion: FusionSpec {
                        layers: layers.clone(),
                        channels: DEFAULT_FUSION_CHANNELS,
                        heads_at,
                    },
                    blend,
                });
            }
        }
    }
    out
}

fn fusion_layer_lists(m: usize, stages: u32) -> Vec<Vec<FusionLayer>> {
    let single: Vec<FusionLayer> = (1..=stages)
        .flat_map(|a| (1..=stages).flat_map(move |b| (1..=stages).map(move |o| (a, b, o))))
        .map(|(input_a, input_b, output_level)| FusionLayer {
            input_a,
            input_b,
            output_level,
        })
        .collect();
    let mut lists = vec![Vec::new()];
    for _ in 0..m {
        lists = lists
            .into_iter()
            .flat_map(|prefix: Vec<FusionLayer>| {
                single.iter().map(move |l| {
                    let mut next = prefix.clone();
                    next.push(*l);
                    next
                })
            })
            .collect();
    }
    lists
}

/// Distinct non-dominated `(flops, score)` points of `genomes`, sorted by
/// FLOPS. Failed evaluations are ignored.
pub fn exhaustive_front(
    genomes: &[ArchEncoding],
    evaluator: &dyn Evaluator,
    cost: &CostConfig,
) -> Result<Vec<(u64, f64)>, SearchError> {
    let mut points = Vec::with_capacity(genomes.len());
    for (i, g) in genomes.iter().enumerate() {
        let flops = candidate_cost(g, cost)?.total_flops;
        if let Ok(score) = evaluator.evaluate(i as u64, g) {
            points.push((flops, score));
        }
    }
    Ok(non_dominated(points))
}

/// Distinct non-dominated points, sorted by FLOPS.
pub fn non_dominated(mut points: Vec<(u64, f64)>) -> Vec<(u64, f64)> {
    points.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut front: Vec<(u64, f64)> = Vec::new();
    for p in points {
        // sorted by flops, best score first: p survives iff it beats the
        // best score seen so far
        if front.last().is_none_or(|last| p.1 > last.1) {
            front.push(p);
        }
    }
    debug_assert!(front
        .iter()
        .all(|a| front.iter().all(|b| !dominates(*b, *a))));
    front
}

/// Fraction of `true_front` points that appear among the archive members'
/// objective vectors.
pub fn front_recovery(true_front: &[(u64, f64)], archive: &ParetoArchive) -> f64 {
    if true_front.is_empty() {
        return 1.0;
    }
    let found: Vec<(u64, f64)> = archive.members().iter().filter_map(|c| c.objectives()).collect();
    let hits = true_front
        .iter()
        .filter(|p| found.iter().any(|q| q.0 == p.0 && q.1 == p.1))
        .count();
    hits as f64 / true_front.len() as f64
}
