//! Shared fixtures for the benchmarks in `benches/`.

use lanenas_core::arch_space::{BlockKind, SpaceConfig};
use lanenas_core::lane_model::{LaneLine, LaneProposalSet};
use lanenas_core::point_blend::BlendParamSet;
use lanenas_core::synth::{generate_synthetic_scenes, SynthSceneConfig};

/// `n` synthetic scenes with remote noise of 20 px.
pub fn noisy_scenes(n: usize) -> Vec<(LaneProposalSet, Vec<LaneLine>)> {
    generate_synthetic_scenes(&SynthSceneConfig {
        num_scenes: n,
        seed: 42,
        ..SynthSceneConfig::default()
    })
    .into_iter()
    .map(|(p, s)| {
        let gt = s.lanes();
        (p, gt)
    })
    .collect()
}

/// Blend parameters that do well on the synthetic corpus.
pub fn blend_params() -> BlendParamSet {
    let mut p = BlendParamSet::defaults([1, 2], (1640, 590));
    p.score_threshold = 0.2;
    p.group_distance = 80.0;
    p.locality_sigma = 60.0;
    p
}

/// Basic blocks, widths 48 and 64, 10 to 14 blocks, three stages.
pub fn reduced_space() -> SpaceConfig {
    SpaceConfig {
        block_kinds: vec![BlockKind::Basic],
        base_channels: vec![48, 64],
        min_blocks: 10,
        max_blocks: 14,
        stage_counts: vec![3],
        fusion_layers: 0,
        include_head_placement: true,
    }
}
