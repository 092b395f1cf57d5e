//! Lane detector architecture search and adaptive point-blending
//! post-processing.
//!
//! - [`arch_space`]: backbone/fusion encodings, mutation, space size
//! - [`cost_model`]: analytic FLOPS and parameter counts
//! - [`search`]: Pareto archive, evaluators, search loops
//! - [`lane_model`]: grid/anchor lane proposals
//! - [`point_blend`]: score masking, Line-NMS and point blending
//! - [`metrics`]: lane IoU, F1 and TuSimple accuracy
//! - [`data_io`]: file formats and evaluator protocol
//! - [`synth`]: synthetic proposal corpus

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch_space;
pub mod cost_model;
pub mod data_io;
pub mod lane_model;
pub mod metrics;
pub mod point_blend;
pub mod search;
pub mod synth;

pub use arch_space::{
    parse_backbone, serialize_backbone, space_cardinality, ArchEncoding, ArchError, BackboneSpec, BlockKind,
    CardinalityReport, FusionLayer, FusionSpec, SpaceConfig,
};
pub use cost_model::{candidate_cost, CostConfig, CostError, CostReport};
pub use data_io::{DataError, SceneRecord};
pub use lane_model::{AnchorLayout, GridCell, HeadGrid, LaneLine, LanePoint, LaneProposalSet};
pub use metrics::{match_and_score, MatchConfig, MetricsReport};
pub use point_blend::{postprocess, BlendParamSet, BlendParamSpace, BlendParams};
pub use search::{Candidate, Evaluator, ParetoArchive, SearchConfig};
pub use synth::{generate_synthetic_scenes, SynthSceneConfig};
