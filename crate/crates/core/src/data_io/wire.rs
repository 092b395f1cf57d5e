//! External evaluator protocol: one request line on the child's stdin, one
//! response line on its stdout.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DataError, FORMAT_VERSION};
use crate::arch_space::{ArchEncoding, FusionSpec};
use crate::point_blend::BlendParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub version: u32,
    pub eval_id: u64,
    /// Backbone encoding string.
    pub encoding: String,
    pub fusion: FusionSpec,
    pub blend: BlendParamSet,
    pub resolution: (u32, u32),
}

impl EvalRequest {
    pub fn new(eval_id: u64, arch: &ArchEncoding, resolution: (u32, u32)) -> Self {
        Self {
            version: FORMAT_VERSION,
            eval_id,
            encoding: arch.backbone.encode(),
            fusion: arch.fusion.clone(),
            blend: arch.blend.clone(),
            resolution,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests serialise")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    /// Must echo the request id when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_id: Option<u64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

impl EvalResponse {
    /// Parses the first non-empty line of `output` and checks it against the
    /// request id.
    pub fn parse(output: &str, expected_id: u64) -> Result<Self, DataError> {
        let line = output
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| DataError::schema("$", "empty response"))?;
        let resp: EvalResponse =
            serde_json::from_str(line).map_err(|e| DataError::schema("$", e.to_string()))?;
        if let Some(id) = resp.eval_id {
            if id != expected_id {
                return Err(DataError::schema(
                    "eval_id",
                    format!("response echoes {id}, request was {expected_id}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&resp.score) {
            return Err(DataError::schema("score", format!("{} outside [0, 1]", resp.score)));
        }
        Ok(resp)
    }
}
