use std::collections::BTreeSet;

use lanenas_core::arch_space::{ArchEncoding, BackboneSpec, BlockKind, FusionLayer, FusionSpec, SpaceConfig};
use lanenas_core::cost_model::{candidate_cost, conv_cost, CostConfig};
use lanenas_core::point_blend::BlendParamSet;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arch(backbone: BackboneSpec, fusion: FusionSpec) -> ArchEncoding {
    let blend = BlendParamSet::defaults(fusion.heads_at.iter().copied(), (512, 288));
    ArchEncoding::new(backbone, fusion, blend).unwrap()
}

fn random_arch(rng: &mut ChaCha8Rng) -> ArchEncoding {
    let backbone = SpaceConfig::default().random_backbone(rng);
    let fusion = FusionSpec::random(2, backbone.stage_count(), rng);
    arch(backbone, fusion)
}

/// Walks the stage layout with closed-form map sizes: a map reduced by
/// `f` has `ceil(w / f) x ceil(h / f)` cells.
fn oracle(a: &ArchEncoding, cfg: &CostConfig) -> (u64, u64) {
    let (w, h) = cfg.resolution;
    let size = |f: u32| (w.div_ceil(f), h.div_ceil(f));
    let mut flops = 0u64;
    let mut params = 0u64;
    let mut add = |c: lanenas_core::cost_model::LayerCost| {
        flops += c.flops;
        params += c.params;
    };
    let bb = &a.backbone;
    let base = bb.base_channels();
    let (s1, s2) = (size(2), size(4));
    add(conv_cost(3, base, 3, 2, s1.0, s1.1).unwrap());
    add(conv_cost(base, base, 3, 2, s2.0, s2.1).unwrap());

    let e = bb.block_kind().expansion();
    let layout = bb.stage_layout();
    let mut in_ch = base;
    let mut in_factor = 4;
    // (channels, factor) of each feature level
    let mut levels = Vec::new();
    for info in &layout {
        let out_ch = info.channels * e;
        let stride = info.downsample_factor / in_factor;
        let (ow, oh) = size(info.downsample_factor);
        let (iw, ih) = size(in_factor);
        if stride == 2 {
            levels.push((in_ch, in_factor));
        }
        match bb.block_kind() {
            BlockKind::Basic => {
                add(conv_cost(in_ch, info.channels, 3, stride, ow, oh).unwrap());
                add(conv_cost(info.channels, info.channels, 3, 1, ow, oh).unwrap());
            }
            BlockKind::Bottleneck => {
                add(conv_cost(in_ch, info.channels, 1, 1, iw, ih).unwrap());
                add(conv_cost(info.channels, info.channels, 3, stride, ow, oh).unwrap());
                add(conv_cost(info.channels, out_ch, 1, 1, ow, oh).unwrap());
            }
        }
        if stride == 2 || in_ch != out_ch {
            add(conv_cost(in_ch, out_ch, 1, stride, ow, oh).unwrap());
        }
        in_ch = out_ch;
        in_factor = info.downsample_factor;
    }
    levels.push((in_ch, in_factor));

    let c = a.fusion.channels;
    let mut extra = vec![0u32; levels.len()];
    for layer in &a.fusion.layers {
        let (_, tf) = levels[(layer.output_level - 1) as usize];
        for input in [layer.input_a, layer.input_b] {
            let (ch, f) = levels[(input - 1) as usize];
            let out = size(tf.max(f));
            add(conv_cost(ch, c, 1, 1, out.0, out.1).unwrap());
        }
        let t = size(tf);
        add(conv_cost(2 * c, c, 1, 1, t.0, t.1).unwrap());
        extra[(layer.output_level - 1) as usize] += c;
    }
    for &l in &a.fusion.heads_at {
        let (ch, f) = levels[(l - 1) as usize];
        let (fw, fh) = size(f);
        let out = cfg.anchor_rows + 3;
        let mut c = conv_cost(ch + extra[(l - 1) as usize], out, 1, 1, fw, fh).unwrap();
        // bias
        c.params += out as u64;
        add(c);
    }
    (flops, params)
}

#[test]
fn matches_oracle_on_random_architectures() {
    let cfg = CostConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let a = random_arch(&mut rng);
        let report = candidate_cost(&a, &cfg).unwrap();
        assert_eq!((report.total_flops, report.total_params), oracle(&a, &cfg), "{}", a.backbone);
        let sum: u64 = report.per_component.iter().map(|c| c.flops).sum();
        assert_eq!(sum, report.total_flops);
    }
}

#[test]
fn doubling_width_quadruples_block_flops() {
    let cfg = CostConfig::default();
    for enc in ["BB_64_13_[5,9]_[7,12]", "RB_64_20_[3,8,15]_[4,9,16]"] {
        let narrow = enc.parse::<BackboneSpec>().unwrap();
        let wide = enc.replacen("_64_", "_128_", 1).parse::<BackboneSpec>().unwrap();
        let heads = FusionSpec {
            layers: vec![],
            channels: 128,
            heads_at: BTreeSet::from([narrow.stage_count()]),
        };
        let a = candidate_cost(&arch(narrow, heads.clone()), &cfg).unwrap();
        let b = candidate_cost(&arch(wide, heads), &cfg).unwrap();
        let ratio = b.flops_of("block") as f64 / a.flops_of("block") as f64;
        assert!((ratio - 4.0).abs() < 0.2, "{enc}: {ratio}");
        let total = b.total_flops as f64 / a.total_flops as f64;
        assert!(total > 3.0 && total < 4.2, "{enc}: total ratio {total}");
    }
}

#[test]
fn scale_law() {
    let small = CostConfig::default();
    let large = CostConfig {
        resolution: (1024, 576),
        ..small
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = random_arch(&mut rng);
        let s = candidate_cost(&a, &small).unwrap();
        let l = candidate_cost(&a, &large).unwrap();
        for (x, y) in s.per_component.iter().zip(&l.per_component) {
            assert_eq!(x.label, y.label);
            assert_eq!(4 * x.flops, y.flops, "{}", x.label);
            assert_eq!(x.params, y.params);
        }
    }
}

fn heads_for(stages: u32) -> FusionSpec {
    FusionSpec {
        layers: vec![],
        channels: 128,
        heads_at: BTreeSet::from([stages]),
    }
}

fn total(b: &BackboneSpec, f: &FusionSpec) -> u64 {
    candidate_cost(&arch(b.clone(), f.clone()), &CostConfig::default())
        .unwrap()
        .total_flops
}

fn backbone_strategy() -> impl Strategy<Value = BackboneSpec> {
    (any::<u64>()).prop_map(|seed| SpaceConfig::default().random_backbone(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn earlier_downsample_never_costs_more(b in backbone_strategy(), pick in any::<prop::sample::Index>()) {
        let i = pick.index(b.downsample_at().len());
        let mut ds = b.downsample_at().to_vec();
        let lower = if i == 0 { 2 } else { ds[i - 1] + 1 };
        prop_assume!(ds[i] > lower);
        ds[i] -= 1;
        let moved = BackboneSpec::new(b.block_kind(), b.base_channels(), b.num_blocks(), ds, b.double_channels_at().to_vec()).unwrap();
        let f = heads_for(b.stage_count());
        prop_assert!(total(&moved, &f) <= total(&b, &f));
    }

    #[test]
    fn adding_a_block_never_costs_less(b in backbone_strategy()) {
        prop_assume!(b.num_blocks() < 45);
        let longer = BackboneSpec::new(
            b.block_kind(),
            b.base_channels(),
            b.num_blocks() + 1,
            b.downsample_at().to_vec(),
            b.double_channels_at().to_vec(),
        )
        .unwrap();
        let f = heads_for(b.stage_count());
        prop_assert!(total(&longer, &f) >= total(&b, &f));
    }

    #[test]
    fn adding_fusion_or_heads_never_costs_less(seed in any::<u64>(), a in 1u32..=4, bb in 1u32..=4, o in 1u32..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = SpaceConfig::default().random_backbone(&mut rng);
        let t = backbone.stage_count();
        let f = FusionSpec::random(1, t, &mut rng);
        let mut more = f.clone();
        more.layers.push(FusionLayer { input_a: a.min(t), input_b: bb.min(t), output_level: o.min(t) });
        prop_assert!(total(&backbone, &more) >= total(&backbone, &f));
        let mut heads = f.clone();
        heads.heads_at.extend(1..=t);
        prop_assert!(total(&backbone, &heads) >= total(&backbone, &f));
    }
}
