use lanenas_core::arch_space::{BlockKind, MutationConfig, SpaceConfig};
use lanenas_core::cost_model::CostConfig;
use lanenas_core::point_blend::BlendParamSpace;
use lanenas_core::search::{
    enumerate_genomes, exhaustive_front, front_recovery, run_search, MutationProbs, SearchConfig, SyntheticEvaluator,
};

fn reduced_space() -> SpaceConfig {
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

fn config(seed: u64, workers: usize) -> SearchConfig {
    SearchConfig {
        budget: 2000 - 16,
        seed,
        workers,
        space: reduced_space(),
        mutation: MutationProbs {
            backbone: 0.7,
            fusion: 0.3,
            blend: 0.0,
        },
        backbone_mutation: MutationConfig { structural_prob: 0.25 },
        ..SearchConfig::default()
    }
}

#[test]
fn search_recovers_most_of_the_true_front() {
    let cost = CostConfig::default();
    let genomes = enumerate_genomes(&reduced_space(), &BlendParamSpace::for_image(cost.resolution));
    assert!(genomes.len() > 100_000);
    let front = exhaustive_front(&genomes, &SyntheticEvaluator::default(), &cost).unwrap();
    assert!(front.len() >= 20, "front has only {} points", front.len());

    let sequential = run_search(&config(11, 1), &SyntheticEvaluator::default()).unwrap();
    assert_eq!(sequential.history().len(), 2000);
    assert!(front_recovery(&front, &sequential) >= 0.8);

    let parallel = run_search(&config(11, 3), &SyntheticEvaluator::default()).unwrap();
    parallel.check_invariants().unwrap();
    assert!(front_recovery(&front, &parallel) >= 0.7);
}
