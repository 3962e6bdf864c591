use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{Bench, Check, Detector, ScenarioConfig};
use crate::correlator::CorrelogramSpec;
use crate::sources::TraceLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: TraceLabel,
    pub samples: u64,
    pub mean_rate_cps: f64,
    /// ⟨λ²⟩ / ⟨λ⟩² of the sampled intensity.
    pub g2_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagCounts {
    /// Photons generated per source beam, before the bench.
    pub beams: Vec<u64>,
    pub detectors: BTreeMap<Detector, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramSummary {
    pub a: Detector,
    pub b: Detector,
    pub spec: CorrelogramSpec,
    pub n_a: u64,
    pub n_b: u64,
    pub coincidences: u64,
    pub empty_input: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub correlograms: BTreeMap<String, String>,
    pub analyses: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub source_s: f64,
    pub bench_s: f64,
    pub correlate_s: f64,
    pub analysis_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    #[serde(flatten)]
    pub check: Check,
    pub value: Option<Value>,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn evaluate(check: &Check, report: &Value) -> Self {
        let value = report.pointer(&check.metric).cloned();
        let passed = match &value {
            Some(Value::Number(n)) => {
                let x = n.as_f64().unwrap_or(f64::NAN);
                check.equals.is_none()
                    && check.min.is_none_or(|m| x >= m)
                    && check.max.is_none_or(|m| x <= m)
            }
            Some(Value::Bool(b)) => check.equals == Some(*b),
            _ => false,
        };
        CheckOutcome {
            check: check.clone(),
            value,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub config: ScenarioConfig,
    pub bench: Bench,
    pub artifacts: Artifacts,
    pub trace: Vec<TraceSummary>,
    pub tags: TagCounts,
    pub correlograms: BTreeMap<String, CorrelogramSummary>,
    /// One block per requested analysis: its result fields, or `error`.
    pub analyses: BTreeMap<String, Value>,
    pub checks: Vec<CheckOutcome>,
    pub all_checks_passed: bool,
    /// False when any fit failed to converge.
    pub converged: bool,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failed_checks(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Numeric value at a JSON pointer into the report.
    pub fn metric(&self, pointer: &str) -> Option<f64> {
        serde_json::to_value(self).ok()?.pointer(pointer)?.as_f64()
    }
}

/// Written in place of a report when a stage fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub name: String,
    pub config: ScenarioConfig,
    pub stage: String,
    pub error: String,
}
