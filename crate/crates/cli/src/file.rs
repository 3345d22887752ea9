//! Pipeline description files.
//!
//! A pipeline file is a JSON document:
//!
//! ```json
//! {
//!   "schema_version": "1",
//!   "variation": {
//!     "inter_die_fraction": 0.5, "systematic_fraction": 0.25,
//!     "random_fraction": 0.25, "total_sigma_ratio": 0.1,
//!     "spatial_corr_length": 2.0
//!   },
//!   "stages": [
//!     { "position": 0, "latch_overhead": 10,
//!       "gates": [ { "p": 2, "q": 8, "area_coefficient": 1, "x": 1, "L": 1, "U": 8 } ] }
//!   ],
//!   "correlation_matrix": [[1.0]]
//! }
//! ```
//!
//! `correlation_matrix` is optional and replaces the correlation derived from
//! the variation split. Files written by `optimize` also carry an
//! `optimization` block recording the query and whether it was met.

use serde::{Deserialize, Serialize};

use pipeyield_core::{CorrelationMatrix, Error, PipelineModel, Result, StageModel, VariationSpec};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    pub schema_version: String,
    pub variation: VariationSpec,
    pub stages: Vec<StageModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationRecord>,
}

/// Outcome of the optimization that produced a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationRecord {
    pub mode: String,
    pub target_delay: f64,
    pub target_yield: f64,
    pub achieved_yield: f64,
    pub total_area: f64,
    pub feasible: bool,
}

impl PipelineFile {
    pub fn from_model(p: &PipelineModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            variation: p.variation,
            stages: p.stages.clone(),
            correlation_matrix: p.correlation_override.as_ref().map(CorrelationMatrix::rows),
            optimization: None,
        }
    }

    pub fn to_model(&self) -> Result<PipelineModel> {
        check_schema(Some(&self.schema_version))?;
        let p = PipelineModel {
            stages: self.stages.clone(),
            variation: self.variation,
            correlation_override: None,
        };
        match &self.correlation_matrix {
            Some(rows) => p.with_correlation(CorrelationMatrix::from_rows(rows)?),
            None => {
                p.validate()?;
                Ok(p)
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pipeline file serializes");
        s.push('\n');
        s
    }
}

fn check_schema(version: Option<&str>) -> Result<()> {
    match version {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(Error::Invalid {
            field: "schema_version".into(),
            reason: format!("unsupported version \"{other}\", expected \"{SCHEMA_VERSION}\""),
        }),
        None => Err(Error::Invalid {
            field: "schema_version".into(),
            reason: format!("missing; expected \"{SCHEMA_VERSION}\""),
        }),
    }
}

fn parse_error(e: &serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses the raw document, keeping the optimization record.
pub fn parse_file(bytes: &[u8]) -> Result<PipelineFile> {
    // Syntax first, so a file with an unknown schema is reported as such
    // rather than as a field mismatch.
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| parse_error(&e))?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line: 1,
        column: 1,
        message: "expected a JSON object at the top level".into(),
    })?;
    match obj.get("schema_version") {
        None => check_schema(None)?,
        Some(serde_json::Value::String(s)) => check_schema(Some(s))?,
        Some(other) => {
            return Err(Error::Invalid {
                field: "schema_version".into(),
                reason: format!("expected a string, found {other}"),
            })
        }
    }
    serde_json::from_slice(bytes).map_err(|e| parse_error(&e))
}

pub fn parse_pipeline(bytes: &[u8]) -> Result<PipelineModel> {
    parse_file(bytes)?.to_model()
}

pub fn serialize_pipeline(p: &PipelineModel) -> String {
    PipelineFile::from_model(p).to_json()
}
