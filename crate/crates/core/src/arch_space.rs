//! Candidate genome: backbone encoding grammar, fusion specification and
//! head placement, plus the mutation operators and the size of the space.
//!
//! A backbone is written as `<KIND>_<BASE>_<N>_[d1,d2(,d3)]_[c1,c2(,c3)]`,
//! e.g. `BB_64_13_[5,9]_[7,12]`: bottleneck blocks, 64 base channels, 13
//! blocks, stride-2 blocks at 5 and 9, channel doubling at blocks 7 and 12.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point_blend::BlendParamSet;

/// Allowed base channel widths.
pub const BASE_CHANNELS: [u32; 5] = [48, 64, 80, 96, 128];
pub const MIN_BLOCKS: u32 = 10;
pub const MAX_BLOCKS: u32 = 45;
/// Total spatial reduction of the fixed stem (two stride-2 3x3 convolutions).
pub const STEM_FACTOR: u32 = 4;
/// Smallest block index allowed in either position list; block 1 always
/// runs at the stem resolution and base width.
pub const MIN_POSITION: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("malformed encoding `{input}`: {reason}")]
    Syntax { input: String, reason: String },
    #[error("invalid {field}: {reason}")]
    Constraint { field: &'static str, reason: String },
    #[error("no valid mutation exists for this genome")]
    Exhausted,
}

fn constraint(field: &'static str, reason: impl Into<String>) -> ArchError {
    ArchError::Constraint {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    /// Two 3x3 convolutions.
    Basic,
    /// 1x1 / 3x3 / 1x1 with 4x expansion.
    Bottleneck,
}

impl BlockKind {
    pub fn code(self) -> &'static str {
        match self {
            BlockKind::Basic => "RB",
            BlockKind::Bottleneck => "BB",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "RB" => Some(BlockKind::Basic),
            "BB" => Some(BlockKind::Bottleneck),
            _ => None,
        }
    }

    /// Output channels per unit of block width.
    pub fn expansion(self) -> u32 {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }

    fn flipped(self) -> Self {
        match self {
            BlockKind::Basic => BlockKind::Bottleneck,
            BlockKind::Bottleneck => BlockKind::Basic,
        }
    }
}

/// Validated backbone genome. Construct through [`BackboneSpec::new`] or by
/// parsing an encoding string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BackboneSpec {
    block_kind: BlockKind,
    base_channels: u32,
    num_blocks: u32,
    downsample_at: Vec<u32>,
    double_channels_at: Vec<u32>,
}

impl BackboneSpec {
    pub fn new(
        block_kind: BlockKind,
        base_channels: u32,
        num_blocks: u32,
        downsample_at: Vec<u32>,
        double_channels_at: Vec<u32>,
    ) -> Result<Self, ArchError> {
        if !BASE_CHANNELS.contains(&base_channels) {
            return Err(constraint(
                "base_channels",
                format!("{base_channels} is not one of {BASE_CHANNELS:?}"),
            ));
        }
        if !(MIN_BLOCKS..=MAX_BLOCKS).contains(&num_blocks) {
            return Err(constraint(
                "num_blocks",
                format!("{num_blocks} outside [{MIN_BLOCKS}, {MAX_BLOCKS}]"),
            ));
        }
        if !(2..=3).contains(&downsample_at.len()) {
            return Err(constraint(
                "downsample_at",
                format!("expected 2 or 3 positions, got {}", downsample_at.len()),
            ));
        }
        if double_channels_at.len() != downsample_at.len() {
            return Err(constraint(
                "double_channels_at",
                format!(
                    "expected {} positions to match downsample_at, got {}",
                    downsample_at.len(),
                    double_channels_at.len()
                ),
            ));
        }
        check_positions("downsample_at", &downsample_at, num_blocks)?;
        check_positions("double_channels_at", &double_channels_at, num_blocks)?;
        Ok(Self {
            block_kind,
            base_channels,
            num_blocks,
            downsample_at,
            double_channels_at,
        })
    }

    pub fn block_kind(&self) -> BlockKind {
        self.block_kind
    }

    pub fn base_channels(&self) -> u32 {
        self.base_channels
    }

    pub fn num_blocks(&self) -> u32 {
        self.num_blocks
    }

    pub fn downsample_at(&self) -> &[u32] {
        &self.downsample_at
    }

    pub fn double_channels_at(&self) -> &[u32] {
        &self.double_channels_at
    }

    /// Number of stages (feature levels), 3 or 4.
    pub fn stage_count(&self) -> u32 {
        self.downsample_at.len() as u32 + 1
    }

    /// Canonical encoding string, no whitespace.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    /// Block width (before bottleneck expansion) of 1-based block `b`.
    pub fn block_width(&self, b: u32) -> u32 {
        let doublings = self.double_channels_at.iter().filter(|&&c| c <= b).count();
        self.base_channels << doublings
    }

    /// Per-block resolution and width schedule.
    pub fn stage_layout(&self) -> Vec<StageInfo> {
        (1..=self.num_blocks)
            .map(|b| {
                let downs = self.downsample_at.iter().filter(|&&d| d <= b).count() as u32;
                StageInfo {
                    block: b,
                    stage: downs + 1,
                    downsample_factor: STEM_FACTOR << downs,
                    channels: self.block_width(b),
                }
            })
            .collect()
    }
}

fn check_positions(field: &'static str, positions: &[u32], num_blocks: u32) -> Result<(), ArchError> {
    if let Some(&p) = positions
        .iter()
        .find(|&&p| p < MIN_POSITION || p > num_blocks)
    {
        return Err(constraint(
            field,
            format!("position {p} outside [{MIN_POSITION}, {num_blocks}]"),
        ));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(constraint(field, format!("{positions:?} is not strictly increasing")));
    }
    Ok(())
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}_{}_{}_{}",
            self.block_kind.code(),
            self.base_channels,
            self.num_blocks,
            fmt_list(&self.downsample_at),
            fmt_list(&self.double_channels_at)
        )
    }
}

fn fmt_list(items: &[u32]) -> String {
    let inner: Vec<String> = items.iter().map(u32::to_string).collect();
    format!("[{}]", inner.join(","))
}

impl FromStr for BackboneSpec {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_backbone(s)
    }
}

/// Parses an encoding string. Whitespace inside the brackets is tolerated
/// (`[5, 9]`), the output of [`BackboneSpec::encode`] never contains any.
pub fn parse_backbone(input: &str) -> Result<BackboneSpec, ArchError> {
    let syntax = |reason: &str| ArchError::Syntax {
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let s = input.trim();
    let mut head = s.splitn(4, '_');
    let kind = head.next().ok_or_else(|| syntax("missing block kind"))?;
    let base = head.next().ok_or_else(|| syntax("missing base channels"))?;
    let blocks = head.next().ok_or_else(|| syntax("missing block count"))?;
    let lists = head.next().ok_or_else(|| syntax("missing position lists"))?;

    let block_kind = BlockKind::from_code(kind)
        .ok_or_else(|| syntax(&format!("unknown block kind `{kind}` (expected RB or BB)")))?;
    let base_channels = parse_uint(base).ok_or_else(|| syntax("base channels is not an integer"))?;
    let num_blocks = parse_uint(blocks).ok_or_else(|| syntax("block count is not an integer"))?;

    let (first, second) = lists
        .split_once("]_[")
        .ok_or_else(|| syntax("expected `[..]_[..]` position lists"))?;
    let first = first
        .strip_prefix('[')
        .ok_or_else(|| syntax("position list must start with `[`"))?;
    let second = second
        .strip_suffix(']')
        .ok_or_else(|| syntax("position list must end with `]`"))?;
    let downsample_at = parse_list(first).ok_or_else(|| syntax("bad downsample position list"))?;
    let double_channels_at =
        parse_list(second).ok_or_else(|| syntax("bad channel-doubling position list"))?;

    BackboneSpec::new(
        block_kind,
        base_channels,
        num_blocks,
        downsample_at,
        double_channels_at,
    )
}

fn parse_uint(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_list(s: &str) -> Option<Vec<u32>> {
    s.split(',').map(|tok| parse_uint(tok.trim())).collect()
}

pub fn serialize_backbone(spec: &BackboneSpec) -> String {
    spec.encode()
}

impl Serialize for BackboneSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackboneSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_backbone(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageInfo {
    pub block: u32,
    /// 1-based stage (feature level) the block belongs to.
    pub stage: u32,
    /// Spatial reduction of the block output relative to the input image.
    pub downsample_factor: u32,
    /// Block width before any bottleneck expansion.
    pub channels: u32,
}

pub fn stage_layout(spec: &BackboneSpec) -> Vec<StageInfo> {
    spec.stage_layout()
}

/// Merges two feature levels into `output_level`. Levels are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FusionLayer {
    pub input_a: u32,
    pub input_b: u32,
    pub output_level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FusionSpec {
    pub layers: Vec<FusionLayer>,
    pub channels: u32,
    pub heads_at: BTreeSet<u32>,
}

pub const DEFAULT_FUSION_CHANNELS: u32 = 128;
pub const DEFAULT_FUSION_LAYERS: usize = 2;

impl FusionSpec {
    /// Checks the spec against a backbone with `stages` feature levels.
    pub fn validate(&self, stages: u32) -> Result<(), ArchError> {
        if self.channels == 0 {
            return Err(constraint("fusion.channels", "must be positive"));
        }
        if self.heads_at.is_empty() {
            return Err(constraint("fusion.heads_at", "at least one head is required"));
        }
        if let Some(&l) = self.heads_at.iter().find(|&&l| l == 0 || l > stages) {
            return Err(constraint(
                "fusion.heads_at",
                format!("level {l} outside [1, {stages}]"),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for level in [layer.input_a, layer.input_b, layer.output_level] {
                if level == 0 || level > stages {
                    return Err(constraint(
                        "fusion.layers",
                        format!("layer {i} references level {level} outside [1, {stages}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Clamps levels into `[1, stages]` after the backbone changed its stage
    /// count. Heads falling off the end move to the last level.
    pub fn fit_to_stages(&mut self, stages: u32) {
        for layer in &mut self.layers {
            layer.input_a = layer.input_a.clamp(1, stages);
            layer.input_b = layer.input_b.clamp(1, stages);
            layer.output_level = layer.output_level.clamp(1, stages);
        }
        self.heads_at = self.heads_at.iter().map(|&l| l.clamp(1, stages)).collect();
        if self.heads_at.is_empty() {
            self.heads_at.insert(stages);
        }
    }

    pub fn random<R: Rng + ?Sized>(num_layers: usize, stages: u32, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|_| FusionLayer {
                input_a: rng.random_range(1..=stages),
                input_b: rng.random_range(1..=stages),
                output_level: rng.random_range(1..=stages),
            })
            .collect();
        let mask = rng.random_range(1..(1u32 << stages));
        let heads_at = (1..=stages).filter(|l| mask & (1 << (l - 1)) != 0).collect();
        Self {
            layers,
            channels: DEFAULT_FUSION_CHANNELS,
            heads_at,
        }
    }
}

/// A complete candidate: backbone, fusion/head layout and post-processing
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchEncoding {
    pub backbone: BackboneSpec,
    pub fusion: FusionSpec,
    pub blend: BlendParamSet,
}

impl ArchEncoding {
    pub fn new(
        backbone: BackboneSpec,
        fusion: FusionSpec,
        blend: BlendParamSet,
    ) -> Result<Self, ArchError> {
        let arch = Self {
            backbone,
            fusion,
            blend,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        self.fusion.validate(self.backbone.stage_count())?;
        let levels: BTreeSet<u32> = self.blend.per_level.keys().copied().collect();
        if levels != self.fusion.heads_at {
            return Err(constraint(
                "blend.per_level",
                format!(
                    "levels {levels:?} do not match head levels {:?}",
                    self.fusion.heads_at
                ),
            ));
        }
        self.blend
            .validate()
            .map_err(|e| constraint("blend", e.to_string()))
    }

    /// Stable key identifying the structural part of the genome (backbone and
    /// fusion), used for de-duplicating evaluations.
    pub fn structure_key(&self) -> String {
        let layers: Vec<String> = self
            .fusion
            .layers
            .iter()
            .map(|l| format!("{}+{}>{}", l.input_a, l.input_b, l.output_level))
            .collect();
        let heads: Vec<String> = self.fusion.heads_at.iter().map(u32::to_string).collect();
        format!(
            "{}|{}|c{}|h{}",
            self.backbone,
            layers.join(";"),
            self.fusion.channels,
            heads.join(",")
        )
    }
}

/// Bounds of the searchable space. The default is the full space; tests and
/// benchmarks narrow it to something enumerable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub block_kinds: Vec<BlockKind>,
    pub base_channels: Vec<u32>,
    pub min_blocks: u32,
    pub max_blocks: u32,
    /// Allowed stage counts, subset of {3, 4}.
    pub stage_counts: Vec<u32>,
    /// Number of fusion layers M.
    pub fusion_layers: usize,
    /// Count head placement as part of the backbone space in
    /// [`space_cardinality`].
    pub include_head_placement: bool,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            block_kinds: vec![BlockKind::Basic, BlockKind::Bottleneck],
            base_channels: BASE_CHANNELS.to_vec(),
            min_blocks: MIN_BLOCKS,
            max_blocks: MAX_BLOCKS,
            stage_counts: vec![3, 4],
            fusion_layers: DEFAULT_FUSION_LAYERS,
            include_head_placement: true,
        }
    }
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<(), ArchError> {
        if self.block_kinds.is_empty() {
            return Err(constraint("block_kind", "space allows no block kind"));
        }
        if self.base_channels.is_empty()
            || self.base_channels.iter().any(|c| !BASE_CHANNELS.contains(c))
        {
            return Err(constraint(
                "base_channels",
                format!("{:?} must be a non-empty subset of {BASE_CHANNELS:?}", self.base_channels),
            ));
        }
        if self.min_blocks < MIN_BLOCKS || self.max_blocks > MAX_BLOCKS || self.min_blocks > self.max_blocks {
            return Err(constraint(
                "num_blocks",
                format!("range [{}, {}] invalid", self.min_blocks, self.max_blocks),
            ));
        }
        if self.stage_counts.is_empty() || self.stage_counts.iter().any(|t| !(3..=4).contains(t)) {
            return Err(constraint("downsample_at", "stage counts must be a non-empty subset of {3, 4}"));
        }
        Ok(())
    }

    pub fn contains(&self, spec: &BackboneSpec) -> bool {
        self.block_kinds.contains(&spec.block_kind)
            && self.base_channels.contains(&spec.base_channels)
            && (self.min_blocks..=self.max_blocks).contains(&spec.num_blocks)
            && self.stage_counts.contains(&spec.stage_count())
    }

    fn sorted_bases(&self) -> Vec<u32> {
        let mut bases = self.base_channels.clone();
        bases.sort_unstable();
        bases.dedup();
        bases
    }

    /// Uniformly random member of the space, drawn stratum by stratum
    /// (kind, width, depth, stage count), then positions uniformly.
    pub fn random_backbone<R: Rng + ?Sized>(&self, rng: &mut R) -> BackboneSpec {
        let kind = *self.block_kinds.choose(rng).expect("validated space");
        let base = *self.base_channels.choose(rng).expect("validated space");
        let n = rng.random_range(self.min_blocks..=self.max_blocks);
        let t = *self.stage_counts.choose(rng).expect("validated space");
        let k = (t - 1) as usize;
        let ds = random_positions(n, k, rng);
        let dc = random_positions(n, k, rng);
        BackboneSpec::new(kind, base, n, ds, dc).expect("sampled within invariants")
    }

    /// Every backbone in the space, in a fixed order. Only sensible for
    /// narrowed spaces; see [`space_cardinality`] for the size.
    pub fn enumerate_backbones(&self) -> Vec<BackboneSpec> {
        let mut out = Vec::new();
        for &kind in &self.block_kinds {
            for base in self.sorted_bases() {
                for n in self.min_blocks..=self.max_blocks {
                    for &t in &self.stage_counts {
                        let lists = position_combinations(n, (t - 1) as usize);
                        for ds in &lists {
                            for dc in &lists {
                                out.push(
                                    BackboneSpec::new(kind, base, n, ds.clone(), dc.clone())
                                        .expect("enumerated within invariants"),
                                );
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// All strictly increasing `k`-lists drawn from `[MIN_POSITION, num_blocks]`.
fn position_combinations(num_blocks: u32, k: usize) -> Vec<Vec<u32>> {
    fn rec(next: u32, last: u32, k: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for p in next..=last {
            cur.push(p);
            rec(p + 1, last, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(MIN_POSITION, num_blocks, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn random_positions<R: Rng + ?Sized>(num_blocks: u32, k: usize, rng: &mut R) -> Vec<u32> {
    let pool: Vec<u32> = (MIN_POSITION..=num_blocks).collect();
    let mut picked: Vec<u32> = pool.choose_multiple(rng, k).copied().collect();
    picked.sort_unstable();
    picked
}

/// Probabilities steering [`mutate_backbone`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Probability of a structural move (depth, width, kind, stage count)
    /// instead of a neighbouring position move.
    pub structural_prob: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            structural_prob: 0.25,
        }
    }
}

/// All specs reachable by moving one downsample or doubling position to a
/// neighbouring block.
pub fn position_neighbors(spec: &BackboneSpec) -> Vec<BackboneSpec> {
    let mut out = Vec::new();
    for which in [PositionList::Downsample, PositionList::Double] {
        let list = which.get(spec);
        for i in 0..list.len() {
            for delta in [-1i64, 1] {
                if let Some(next) = shift_position(spec, which, i, delta) {
                    out.push(next);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum PositionList {
    Downsample,
    Double,
}

impl PositionList {
    fn get(self, spec: &BackboneSpec) -> &[u32] {
        match self {
            PositionList::Downsample => &spec.downsample_at,
            PositionList::Double => &spec.double_channels_at,
        }
    }
}

fn shift_position(spec: &BackboneSpec, which: PositionList, i: usize, delta: i64) -> Option<BackboneSpec> {
    let list = which.get(spec);
    let moved = list[i] as i64 + delta;
    if moved < MIN_POSITION as i64 || moved > spec.num_blocks as i64 {
        return None;
    }
    let moved = moved as u32;
    if (i > 0 && list[i - 1] >= moved) || (i + 1 < list.len() && list[i + 1] <= moved) {
        return None;
    }
    let mut next = spec.clone();
    match which {
        PositionList::Downsample => next.downsample_at[i] = moved,
        PositionList::Double => next.double_channels_at[i] = moved,
    }
    Some(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StructuralMove {
    Deeper,
    Shallower,
    Wider,
    Narrower,
    FlipKind,
    AddStage,
    RemoveStage,
}

fn structural_moves(spec: &BackboneSpec, space: &SpaceConfig) -> Vec<StructuralMove> {
    let mut moves = Vec::new();
    let max_pos = spec
        .downsample_at
        .iter()
        .chain(&spec.double_channels_at)
        .copied()
        .max()
        .unwrap_or(0);
    if spec.num_blocks < space.max_blocks {
        moves.push(StructuralMove::Deeper);
    }
    if spec.num_blocks > space.min_blocks && max_pos < spec.num_blocks {
        moves.push(StructuralMove::Shallower);
    }
    let bases = space.sorted_bases();
    if let Some(pos) = bases.iter().position(|&b| b == spec.base_channels) {
        if pos + 1 < bases.len() {
            moves.push(StructuralMove::Wider);
        }
        if pos > 0 {
            moves.push(StructuralMove::Narrower);
        }
    }
    if space.block_kinds.contains(&spec.block_kind.flipped()) {
        moves.push(StructuralMove::FlipKind);
    }
    let t = spec.stage_count();
    // Needs room for one more strictly increasing position in each list.
    if t == 3 && space.stage_counts.contains(&4) && spec.num_blocks - MIN_POSITION + 1 > 2 {
        moves.push(StructuralMove::AddStage);
    }
    if t == 4 && space.stage_counts.contains(&3) {
        moves.push(StructuralMove::RemoveStage);
    }
    moves
}

fn apply_structural<R: Rng + ?Sized>(
    spec: &BackboneSpec,
    space: &SpaceConfig,
    mv: StructuralMove,
    rng: &mut R,
) -> BackboneSpec {
    let mut next = spec.clone();
    let bases = space.sorted_bases();
    match mv {
        StructuralMove::Deeper => next.num_blocks += 1,
        StructuralMove::Shallower => next.num_blocks -= 1,
        StructuralMove::Wider | StructuralMove::Narrower => {
            let pos = bases
                .iter()
                .position(|&b| b == spec.base_channels)
                .expect("move only offered for bases in the space");
            next.base_channels = if mv == StructuralMove::Wider {
                bases[pos + 1]
            } else {
                bases[pos - 1]
            };
        }
        StructuralMove::FlipKind => next.block_kind = spec.block_kind.flipped(),
        StructuralMove::AddStage => {
            for list in [&mut next.downsample_at, &mut next.double_channels_at] {
                let free: Vec<u32> = (MIN_POSITION..=spec.num_blocks)
                    .filter(|p| !list.contains(p))
                    .collect();
                let p = *free.choose(rng).expect("room checked by structural_moves");
                list.push(p);
                list.sort_unstable();
            }
        }
        StructuralMove::RemoveStage => {
            let i = rng.random_range(0..next.downsample_at.len());
            next.downsample_at.remove(i);
            let j = rng.random_range(0..next.double_channels_at.len());
            next.double_channels_at.remove(j);
        }
    }
    next
}

/// Applies exactly one mutation unit and returns a valid spec inside `space`.
///
/// Most moves shift one downsample or doubling position to a neighbouring
/// block. With probability `cfg.structural_prob` the move instead changes
/// depth by one block, steps the base width, flips the block kind or adds or
/// removes a stage. When the drawn family has no legal move the other one is
/// used.
pub fn mutate_backbone<R: Rng + ?Sized>(
    spec: &BackboneSpec,
    space: &SpaceConfig,
    cfg: &MutationConfig,
    rng: &mut R,
) -> Result<BackboneSpec, ArchError> {
    let structural_first = rng.random_bool(cfg.structural_prob.clamp(0.0, 1.0));
    let positional = position_neighbors(spec);
    let structural = structural_moves(spec, space);
    let use_structural = if structural_first {
        !structural.is_empty()
    } else {
        positional.is_empty() && !structural.is_empty()
    };
    let next = if use_structural {
        let mv = *structural.choose(rng).expect("non-empty");
        apply_structural(spec, space, mv, rng)
    } else {
        positional.choose(rng).cloned().ok_or(ArchError::Exhausted)?
    };
    debug_assert!(BackboneSpec::new(
        next.block_kind,
        next.base_channels,
        next.num_blocks,
        next.downsample_at.clone(),
        next.double_channels_at.clone()
    )
    .is_ok());
    Ok(next)
}

/// Resamples one level of one fusion layer, or toggles one head level while
/// keeping at least one head.
pub fn mutate_fusion<R: Rng + ?Sized>(spec: &FusionSpec, stages: u32, rng: &mut R) -> FusionSpec {
    let mut next = spec.clone();
    let field_units = 3 * spec.layers.len();
    let unit = rng.random_range(0..=field_units);
    if unit < field_units && stages > 1 {
        let layer = &mut next.layers[unit / 3];
        let slot = match unit % 3 {
            0 => &mut layer.input_a,
            1 => &mut layer.input_b,
            _ => &mut layer.output_level,
        };
        let current = *slot;
        let choices: Vec<u32> = (1..=stages).filter(|&l| l != current).collect();
        *slot = *choices.choose(rng).expect("stages > 1");
    } else {
        let togglable: Vec<u32> = (1..=stages)
            .filter(|l| !next.heads_at.contains(l) || next.heads_at.len() > 1)
            .collect();
        if let Some(&level) = togglable.choose(rng) {
            if !next.heads_at.remove(&level) {
                next.heads_at.insert(level);
            }
        }
    }
    next
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityReport {
    /// Valid backbone genomes (kind, width, depth, positions).
    pub backbone: u128,
    /// Backbone genomes times the non-empty head subsets of their levels.
    pub backbone_with_heads: u128,
    /// Fusion specs (layers and heads) for each allowed stage count.
    pub fusion_by_stages: Vec<(u32, u128)>,
    /// The figure to quote for the backbone space under this config.
    pub headline_backbone: u128,
    pub assumptions: Vec<String>,
}

/// Exact number of valid genomes under `config`.
pub fn space_cardinality(config: &SpaceConfig) -> CardinalityReport {
    let kinds = config.block_kinds.len() as u128;
    let bases = config.base_channels.len() as u128;
    let mut backbone = 0u128;
    let mut with_heads = 0u128;
    for n in config.min_blocks..=config.max_blocks {
        let slots = (n - MIN_POSITION + 1) as u64;
        for &t in &config.stage_counts {
            let per_list = binomial(slots, (t - 1) as u64);
            let count = per_list * per_list * kinds * bases;
            backbone += count;
            with_heads += count * ((1u128 << t) - 1);
        }
    }
    let m = config.fusion_layers as u32;
    let fusion_by_stages = config
        .stage_counts
        .iter()
        .map(|&t| {
            let t128 = t as u128;
            (t, t128.pow(3 * m) * ((1u128 << t) - 1))
        })
        .collect();
    let headline_backbone = if config.include_head_placement {
        with_heads
    } else {
        backbone
    };
    let assumptions = vec![
        format!("block kinds: {:?}", config.block_kinds),
        format!("base channels: {:?}", config.base_channels),
        format!("total blocks in [{}, {}]", config.min_blocks, config.max_blocks),
        format!("stage counts: {:?}", config.stage_counts),
        format!(
            "downsample and doubling positions: strictly increasing, in [{MIN_POSITION}, N], one doubling per downsample"
        ),
        "downsample and doubling positions are independent of each other".to_string(),
        format!(
            "head placement (non-empty subset of feature levels) {} in the backbone headline figure",
            if config.include_head_placement { "included" } else { "excluded" }
        ),
        format!("fusion: M = {m} layers, each picks (input_a, input_b, output) from t levels"),
        "fusion inputs may coincide (input_a == input_b); fusion width fixed".to_string(),
        "fusion count includes the non-empty head subsets".to_string(),
    ];
    CardinalityReport {
        backbone,
        backbone_with_heads: with_heads,
        fusion_by_stages,
        headline_backbone,
        assumptions,
    }
}
