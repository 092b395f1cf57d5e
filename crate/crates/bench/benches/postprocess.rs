use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lanenas_bench::{blend_params, noisy_scenes};
use lanenas_core::metrics::{match_scene, MatchConfig};
use lanenas_core::point_blend::{plain_line_nms, postprocess};
use std::hint::black_box;

fn bench_postprocess(c: &mut Criterion) {
    let scenes = noisy_scenes(8);
    let params = blend_params();
    let plain = params.plain_nms();
    let mut group = c.benchmark_group("postprocess");
    group.bench_function("blended", |b| {
        b.iter(|| {
            for (p, _) in &scenes {
                black_box(postprocess(p, &params));
            }
        })
    });
    group.bench_function("plain_nms", |b| {
        b.iter(|| {
            for (p, _) in &scenes {
                black_box(plain_line_nms(p, plain.score_threshold, plain.group_distance));
            }
        })
    });
    group.finish();
}

fn bench_matching(c: &mut Criterion) {
    let scenes = noisy_scenes(4);
    let params = blend_params();
    let preds: Vec<_> = scenes.iter().map(|(p, _)| postprocess(p, &params)).collect();
    let mut group = c.benchmark_group("match_scene");
    for width in [10.0, 30.0] {
        let cfg = MatchConfig {
            lane_width: width,
            ..MatchConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(width), &cfg, |b, cfg| {
            b.iter(|| {
                for (pred, (_, gt)) in preds.iter().zip(&scenes) {
                    black_box(match_scene(pred, gt, cfg));
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_postprocess, bench_matching);
criterion_main!(benches);
