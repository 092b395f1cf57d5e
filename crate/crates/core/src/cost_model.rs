//! Analytic FLOPS and parameter counts.
//!
//! Convention: one multiply-accumulate is 2 FLOPs; normalisation,
//! activations, element-wise adds and nearest-neighbour upsampling are free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch_space::{ArchEncoding, BlockKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("operation count overflowed u64 in {0}")]
    Overflow(String),
    #[error("invalid convolution: {0}")]
    InvalidConv(String),
}

/// One convolution with its output size already resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_ch: u32,
    pub out_ch: u32,
    pub kernel: u32,
    pub stride: u32,
    pub out_w: u32,
    pub out_h: u32,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub flops: u64,
    pub params: u64,
}

impl Conv {
    /// `params = k^2 * in * out (+ out)`; `flops = 2 * k^2 * in * out * out_w * out_h`.
    pub fn cost(&self) -> Result<LayerCost, CostError> {
        let dims = [self.in_ch, self.out_ch, self.kernel, self.stride, self.out_w, self.out_h];
        if dims.contains(&0) {
            return Err(CostError::InvalidConv(format!("{self:?} has a zero dimension")));
        }
        let overflow = || CostError::Overflow(format!("{self:?}"));
        let weights = (self.kernel as u64)
            .checked_mul(self.kernel as u64)
            .and_then(|v| v.checked_mul(self.in_ch as u64))
            .and_then(|v| v.checked_mul(self.out_ch as u64))
            .ok_or_else(overflow)?;
        let flops = weights
            .checked_mul(2)
            .and_then(|v| v.checked_mul(self.out_w as u64))
            .and_then(|v| v.checked_mul(self.out_h as u64))
            .ok_or_else(overflow)?;
        let params = if self.bias {
            weights.checked_add(self.out_ch as u64).ok_or_else(overflow)?
        } else {
            weights
        };
        Ok(LayerCost { flops, params })
    }
}

pub fn conv_cost(
    in_ch: u32,
    out_ch: u32,
    kernel: u32,
    stride: u32,
    out_w: u32,
    out_h: u32,
) -> Result<LayerCost, CostError> {
    Conv {
        in_ch,
        out_ch,
        kernel,
        stride,
        out_w,
        out_h,
        bias: false,
    }
    .cost()
}

/// Output length of a strided layer with "same" padding.
pub fn strided(len: u32, stride: u32) -> u32 {
    len.div_ceil(stride)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub label: String,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_flops: u64,
    pub total_params: u64,
    pub per_component: Vec<ComponentCost>,
    pub input_resolution: (u32, u32),
    /// Spatial reduction applied by the stem before block 1.
    pub stem_factor: u32,
    /// Anchor rows Z; each head emits Z + 3 channels per cell.
    pub anchor_rows: u32,
}

impl CostReport {
    /// FLOPS summed over components whose label starts with `prefix`.
    pub fn flops_of(&self, prefix: &str) -> u64 {
        self.per_component
            .iter()
            .filter(|c| c.label.starts_with(prefix))
            .map(|c| c.flops)
            .sum()
    }
}

pub const DEFAULT_RESOLUTION: (u32, u32) = (512, 288);
pub const DEFAULT_ANCHOR_ROWS: u32 = 72;
/// Extra head channels besides the Z offsets: ending row, confidence, one
/// padding channel.
pub const HEAD_EXTRA_CHANNELS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub resolution: (u32, u32),
    pub anchor_rows: u32,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            anchor_rows: DEFAULT_ANCHOR_ROWS,
        }
    }
}

struct Tally {
    report: CostReport,
}

impl Tally {
    fn add(&mut self, label: String, conv: Conv) -> Result<(), CostError> {
        let c = conv.cost()?;
        let overflow = || CostError::Overflow(label.clone());
        self.report.total_flops = self.report.total_flops.checked_add(c.flops).ok_or_else(overflow)?;
        self.report.total_params = self.report.total_params.checked_add(c.params).ok_or_else(overflow)?;
        self.report.per_component.push(ComponentCost {
            label,
            flops: c.flops,
            params: c.params,
        });
        Ok(())
    }
}

/// A feature map: channels and spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Feature {
    ch: u32,
    w: u32,
    h: u32,
}

fn conv(input_ch: u32, out_ch: u32, kernel: u32, stride: u32, out: (u32, u32)) -> Conv {
    Conv {
        in_ch: input_ch,
        out_ch,
        kernel,
        stride,
        out_w: out.0,
        out_h: out.1,
        bias: false,
    }
}

/// Cost of the whole candidate: stem, residual blocks, fusion layers and
/// heads.
///
/// The stem is two stride-2 3x3 convolutions (3 -> base -> base). Basic
/// blocks are two 3x3 convolutions; bottleneck blocks are 1x1 / 3x3 / 1x1
/// with 4x expansion and the stride on the 3x3. A block that changes
/// resolution or channel count has a 1x1 projection shortcut. Each fusion
/// layer projects both inputs to `c` channels with 1x1 convolutions (strided
/// when the target is coarser), concatenates them at the target level and
/// mixes with a final 1x1 to `c`. A head at level f reads the level-f
/// backbone feature plus every fusion output targeting f and predicts
/// `Z + 3` channels per cell with a biased 1x1 convolution.
pub fn candidate_cost(arch: &ArchEncoding, cfg: &CostConfig) -> Result<CostReport, CostError> {
    let backbone = &arch.backbone;
    let (w0, h0) = cfg.resolution;
    let base = backbone.base_channels();
    let mut tally = Tally {
        report: CostReport {
            total_flops: 0,
            total_params: 0,
            per_component: Vec::new(),
            input_resolution: cfg.resolution,
            stem_factor: crate::arch_space::STEM_FACTOR,
            anchor_rows: cfg.anchor_rows,
        },
    };

    let (w1, h1) = (strided(w0, 2), strided(h0, 2));
    tally.add("stem.conv1".into(), conv(3, base, 3, 2, (w1, h1)))?;
    let (w2, h2) = (strided(w1, 2), strided(h1, 2));
    tally.add("stem.conv2".into(), conv(base, base, 3, 2, (w2, h2)))?;

    let expansion = backbone.block_kind().expansion();
    let mut cur = Feature { ch: base, w: w2, h: h2 };
    let mut levels: Vec<Feature> = Vec::new();
    for b in 1..=backbone.num_blocks() {
        let downsample = backbone.downsample_at().contains(&b);
        let stride = if downsample { 2 } else { 1 };
        if downsample {
            levels.push(cur);
        }
        let width = backbone.block_width(b);
        let out = Feature {
            ch: width * expansion,
            w: strided(cur.w, stride),
            h: strided(cur.h, stride),
        };
        let at_out = (out.w, out.h);
        match backbone.block_kind() {
            BlockKind::Basic => {
                tally.add(format!("block{b}.conv1"), conv(cur.ch, width, 3, stride, at_out))?;
                tally.add(format!("block{b}.conv2"), conv(width, width, 3, 1, at_out))?;
            }
            BlockKind::Bottleneck => {
                tally.add(format!("block{b}.conv1"), conv(cur.ch, width, 1, 1, (cur.w, cur.h)))?;
                tally.add(format!("block{b}.conv2"), conv(width, width, 3, stride, at_out))?;
                tally.add(format!("block{b}.conv3"), conv(width, out.ch, 1, 1, at_out))?;
            }
        }
        if stride != 1 || cur.ch != out.ch {
            tally.add(format!("block{b}.shortcut"), conv(cur.ch, out.ch, 1, stride, at_out))?;
        }
        cur = out;
    }
    levels.push(cur);

    let fusion = &arch.fusion;
    let c = fusion.channels;
    let level = |l: u32| levels[(l - 1) as usize];
    let mut head_extra = vec![0u32; levels.len()];
    for (i, layer) in fusion.layers.iter().enumerate() {
        let target = level(layer.output_level);
        for (tag, input) in [("a", layer.input_a), ("b", layer.input_b)] {
            let src = level(input);
            let (stride, out) = if layer.output_level > input {
                (1 << (layer.output_level - input), (target.w, target.h))
            } else {
                (1, (src.w, src.h))
            };
            tally.add(format!("fusion{}.proj_{tag}", i + 1), conv(src.ch, c, 1, stride, out))?;
        }
        tally.add(format!("fusion{}.out", i + 1), conv(2 * c, c, 1, 1, (target.w, target.h)))?;
        head_extra[(layer.output_level - 1) as usize] += c;
    }

    for &l in &fusion.heads_at {
        let f = level(l);
        let head = Conv {
            bias: true,
            ..conv(
                f.ch + head_extra[(l - 1) as usize],
                cfg.anchor_rows + HEAD_EXTRA_CHANNELS,
                1,
                1,
                (f.w, f.h),
            )
        };
        tally.add(format!("head{l}"), head)?;
    }
    Ok(tally.report)
}
