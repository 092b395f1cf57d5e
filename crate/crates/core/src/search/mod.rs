//! Multi-objective search: the Pareto archive, evaluators, the outer search
//! loop and the post-processing inner loop.

mod archive;
mod blend_search;
mod engine;
mod evaluator;
mod exhaustive;
mod external;

pub use archive::{dominates, ArchiveError, Candidate, ParetoArchive};
pub use blend_search::{
    evaluate_blend, run_blend_inner_search, scene_counts, scene_levels, BlendSearchConfig, BlendSearchError,
    BlendSearchResult, ReplayScene,
};
pub use engine::{
    mutate_genome, random_genome, resume_search, run_search, MutationProbs, SearchConfig, SearchError,
};
pub use evaluator::{CostClass, EvalError, Evaluator, SyntheticEvaluator, SyntheticFeatures};
pub use exhaustive::{enumerate_genomes, exhaustive_front, front_recovery, non_dominated};
pub use external::{external_evaluator, ExternalEvaluator};
