use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch_space::{ArchEncoding, STEM_FACTOR};
use crate::cost_model::{candidate_cost, CostConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostClass {
    /// Seconds to minutes per call (post-processing replay).
    Cheap,
    /// Needs training; hours per call.
    Expensive,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluator timed out after {0:.1}s")]
    Timeout(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("failed to spawn evaluator: {0}")]
    Spawn(String),
    #[error("evaluator exited with {code:?}: {stderr}")]
    Exit { code: Option<i32>, stderr: String },
    #[error("{0}")]
    Other(String),
}

/// Maps a genome to a task score in `[0, 1]`, higher is better.
/// Implementations are called concurrently from search workers.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, eval_id: u64, arch: &ArchEncoding) -> Result<f64, EvalError>;

    /// Identical genomes always get identical scores.
    fn is_deterministic(&self) -> bool;

    fn cost_class(&self) -> CostClass;
}

/// Closed-form stand-in for a trained model's accuracy.
///
/// The score combines three genome features and squashes them with a
/// logistic:
/// - receptive field: sum over blocks of the block's downsample factor
///   relative to the stem;
/// - resolution: how fine the earliest prediction head is;
/// - capacity: log of the parameter count.
///
/// Only the backbone and head placement matter; blend parameters and fusion
/// wiring only enter through the parameter count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SyntheticEvaluator {
    pub cost: CostConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticFeatures {
    pub receptive_field: f64,
    pub resolution: f64,
    pub capacity: f64,
}

impl SyntheticEvaluator {
    pub fn features(&self, arch: &ArchEncoding) -> Result<SyntheticFeatures, EvalError> {
        let receptive_field: f64 = arch
            .backbone
            .stage_layout()
            .iter()
            .map(|s| (s.downsample_factor / STEM_FACTOR) as f64)
            .sum();
        let stages = arch.backbone.stage_count();
        let earliest = *arch
            .fusion
            .heads_at
            .first()
            .ok_or_else(|| EvalError::Other("genome has no heads".into()))?;
        let resolution = (stages - earliest) as f64 / (stages - 1) as f64;
        let report = candidate_cost(arch, &self.cost).map_err(|e| EvalError::Other(e.to_string()))?;
        Ok(SyntheticFeatures {
            receptive_field,
            resolution,
            capacity: (report.total_params as f64).ln(),
        })
    }

    pub fn score(&self, arch: &ArchEncoding) -> Result<f64, EvalError> {
        let f = self.features(arch)?;
        let z = 1.5 * f.receptive_field.ln() + 0.8 * f.resolution + 0.5 * (f.capacity - 14.0) - 5.0;
        Ok(1.0 / (1.0 + (-z).exp()))
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, _eval_id: u64, arch: &ArchEncoding) -> Result<f64, EvalError> {
        self.score(arch)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn cost_class(&self) -> CostClass {
        CostClass::Cheap
    }
}
