use lanenas_core::data_io::encode_proposal_scene;
use lanenas_core::data_io::ProposalScene;
use lanenas_core::metrics::{MatchConfig, MetricsReport};
use lanenas_core::point_blend::{plain_line_nms, postprocess, BlendParamSet, BlendParamSpace};
use lanenas_core::search::{run_blend_inner_search, scene_counts, BlendSearchConfig, ReplayScene};
use lanenas_core::synth::{generate_synthetic_scenes, SynthSceneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, noise: f64, seed: u64) -> Vec<ReplayScene> {
    generate_synthetic_scenes(&SynthSceneConfig {
        num_scenes: n,
        remote_noise: noise,
        seed,
        ..SynthSceneConfig::default()
    })
    .into_iter()
    .map(|(p, s)| {
        let gt = s.lanes();
        (p, gt)
    })
    .collect()
}

fn tuned() -> BlendParamSet {
    let mut p = BlendParamSet::defaults([1, 2], (1640, 590));
    p.score_threshold = 0.2;
    p.group_distance = 80.0;
    p.locality_sigma = 60.0;
    p
}

#[test]
fn corpus_is_reproducible() {
    let cfg = SynthSceneConfig {
        num_scenes: 3,
        ..SynthSceneConfig::default()
    };
    let dump = |c: &SynthSceneConfig| -> Vec<String> {
        generate_synthetic_scenes(c)
            .into_iter()
            .map(|(p, s)| {
                encode_proposal_scene(&ProposalScene {
                    image_id: s.image_id,
                    proposals: p,
                })
            })
            .collect()
    };
    assert_eq!(dump(&cfg), dump(&cfg));
}

#[test]
fn noiseless_corpus_is_solved_by_plain_nms() {
    let scenes = corpus(20, 0.0, 4);
    let m = MatchConfig::default();
    let plain = MetricsReport::from_scenes(scene_counts(&scenes, &tuned().plain_nms(), &m));
    let blended = MetricsReport::from_scenes(scene_counts(&scenes, &tuned(), &m));
    assert_eq!(plain.f1, 1.0);
    assert_eq!(blended.f1, 1.0);
}

#[test]
fn blending_repairs_remote_rows() {
    let scenes = corpus(30, 20.0, 5);
    let m = MatchConfig::default();
    let plain = scene_counts(&scenes, &tuned().plain_nms(), &m);
    let blended = scene_counts(&scenes, &tuned(), &m);
    let better = plain.iter().zip(&blended).filter(|(p, b)| b.f1() > p.f1()).count();
    assert!(MetricsReport::from_scenes(blended).f1 > MetricsReport::from_scenes(plain).f1);
    assert!(better * 10 >= scenes.len() * 6, "{better} of {}", scenes.len());
}

#[test]
fn identity_postprocess_is_plain_nms() {
    for (p, _) in corpus(20, 20.0, 6) {
        let params = tuned().plain_nms();
        let a = postprocess(&p, &params);
        let b = plain_line_nms(&p, params.score_threshold, params.group_distance);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn inner_search_beats_defaults_on_held_out_scenes() {
    let train = corpus(15, 20.0, 1);
    let held_out = corpus(40, 20.0, 2);
    let space = BlendParamSpace::for_image((1640, 590));
    let cfg = BlendSearchConfig {
        iterations: 40,
        ..BlendSearchConfig::default()
    };
    let found = run_blend_inner_search(&train, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(found.f1 >= found.default_f1);
    let before = scene_counts(&held_out, &space.default_params([1, 2]), &cfg.matching);
    let after = scene_counts(&held_out, &found.params, &cfg.matching);
    let better = before.iter().zip(&after).filter(|(b, a)| a.f1() > b.f1()).count();
    assert!(better * 10 >= held_out.len() * 6, "{better} of {}", held_out.len());
}
