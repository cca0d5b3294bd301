//! UnixBench-style aggregation and a handful of evaluation ratios.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("no benchmark entries")]
    Empty,
    #[error("test `{test}`: {field} score {value} must be positive")]
    NonPositive {
        test: String,
        field: &'static str,
        value: f64,
    },
    #[error("{ratio}: denominator {value} must be positive")]
    Denominator { ratio: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub test: String,
    pub measured: f64,
    pub reference: f64,
}

impl BenchEntry {
    pub fn new(test: &str, measured: f64, reference: f64) -> Self {
        BenchEntry {
            test: test.to_string(),
            measured,
            reference,
        }
    }

    pub fn index(&self) -> f64 {
        self.measured / self.reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    pub aggregate: f64,
}

impl BenchReport {
    pub fn from_entries(entries: Vec<BenchEntry>) -> Result<Self, ScoreError> {
        let aggregate = unixbench_score(&entries)?;
        Ok(BenchReport { entries, aggregate })
    }
}

/// 100 × the geometric mean of `measured / reference`. A single entry is
/// exactly `measured / reference × 100`.
pub fn unixbench_score(entries: &[BenchEntry]) -> Result<f64, ScoreError> {
    if entries.is_empty() {
        return Err(ScoreError::Empty);
    }
    for e in entries {
        for (field, value) in [("measured", e.measured), ("reference", e.reference)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ScoreError::NonPositive {
                    test: e.test.clone(),
                    field,
                    value,
                });
            }
        }
    }
    if let [only] = entries {
        return Ok(only.index() * 100.0);
    }
    let mean_log = entries.iter().map(|e| e.index().ln()).sum::<f64>() / entries.len() as f64;
    Ok(mean_log.exp() * 100.0)
}

/// Raw quantities behind [`AnalysisRatios`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisInputs {
    pub performance_improvement: f64,
    pub resource_utilization: f64,
    pub time_to_target: f64,
    pub iterations: f64,
    pub larger_workload_performance: f64,
    pub smaller_workload_performance: f64,
    pub valid_configurations: f64,
    pub proposed_configurations: f64,
    pub performance_gain: f64,
    pub training_data_usage: f64,
    pub resources_used: f64,
    pub resources_available: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRatios {
    pub performance_efficiency: f64,
    pub adaptation_speed: f64,
    pub scaling_factor: f64,
    pub configuration_accuracy: f64,
    pub learning_efficiency: f64,
    pub resource_utilization: f64,
}

pub fn ratio(name: &'static str, numerator: f64, denominator: f64) -> Result<f64, ScoreError> {
    if !(denominator > 0.0) {
        return Err(ScoreError::Denominator {
            ratio: name,
            value: denominator,
        });
    }
    Ok(numerator / denominator)
}

pub fn analysis_ratios(i: &AnalysisInputs) -> Result<AnalysisRatios, ScoreError> {
    Ok(AnalysisRatios {
        performance_efficiency: ratio(
            "performance efficiency",
            i.performance_improvement,
            i.resource_utilization,
        )?,
        adaptation_speed: ratio("adaptation speed", i.time_to_target, i.iterations)?,
        scaling_factor: ratio(
            "scaling factor",
            i.larger_workload_performance,
            i.smaller_workload_performance,
        )?,
        configuration_accuracy: ratio(
            "configuration accuracy",
            i.valid_configurations,
            i.proposed_configurations,
        )?,
        learning_efficiency: ratio("learning efficiency", i.performance_gain, i.training_data_usage)?,
        resource_utilization: ratio("resource utilization", i.resources_used, i.resources_available)?,
    })
}
