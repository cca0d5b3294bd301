//! Rule-based rewards: answer validity, relative performance gain weighted by
//! modification complexity, their weighted combination, the warm-up reward,
//! and group normalization into advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{answer_violations, Answer, ConfigGroup, ConfigSpace};

/// Weights of the combined step reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_perf: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            alpha: 1.0,
            beta: 1.0,
            gamma_perf: 1.0,
        }
    }
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma_perf: f64) -> Self {
        Weights {
            alpha,
            beta,
            gamma_perf,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.alpha, self.beta, self.gamma_perf]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_answer: f64,
    pub r_perf: f64,
    pub weights: Weights,
    pub combined: f64,
}

/// One configuration modification as seen by the performance judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfTerm {
    pub p_base: f64,
    pub p_new: f64,
    pub lambda: f64,
    pub c_config: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfObservation {
    pub terms: Vec<PerfTerm>,
}

impl PerfObservation {
    pub fn single(term: PerfTerm) -> Self {
        PerfObservation { terms: vec![term] }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("term {index}: baseline score {value} must be positive")]
    NonPositiveBaseline { index: usize, value: f64 },
    #[error("term {index}: new score {value} must be positive")]
    NonPositiveScore { index: usize, value: f64 },
    #[error("term {index}: complexity bound {value} must be positive")]
    NonPositiveBound { index: usize, value: f64 },
    #[error("term {index}: complexity {c_config} outside [0, {c_max}] or lambda {lambda} negative")]
    Complexity {
        index: usize,
        c_config: f64,
        c_max: f64,
        lambda: f64,
    },
    #[error("cannot normalize an empty reward group")]
    EmptyGroup,
}

/// 1 iff `given` is a valid modification for the group; 0 for parse failures.
///
/// Bool assigns Yes/No to every candidate; Menu selects at least one
/// candidate and nothing else; Choice selects exactly one candidate; Value
/// assigns every candidate a literal inside its domain.
pub fn answer_reward(group: &ConfigGroup, given: Option<&Answer>, space: &ConfigSpace) -> f64 {
    match given {
        Some(a) if answer_violations(space, group.group_type, &group.candidate, a).is_empty() => 1.0,
        _ => 0.0,
    }
}

/// Sum over modifications of relative gain times `1 + lambda * c_config / c_max`.
pub fn perf_reward(obs: &PerfObservation) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for (index, t) in obs.terms.iter().enumerate() {
        if !(t.p_base > 0.0) {
            return Err(RewardError::NonPositiveBaseline {
                index,
                value: t.p_base,
            });
        }
        if !(t.p_new > 0.0) {
            return Err(RewardError::NonPositiveScore {
                index,
                value: t.p_new,
            });
        }
        if !(t.c_max > 0.0) {
            return Err(RewardError::NonPositiveBound {
                index,
                value: t.c_max,
            });
        }
        if !(t.lambda >= 0.0 && t.c_config >= 0.0 && t.c_config <= t.c_max) {
            return Err(RewardError::Complexity {
                index,
                c_config: t.c_config,
                c_max: t.c_max,
                lambda: t.lambda,
            });
        }
        total += ((t.p_new - t.p_base) / t.p_base) * (1.0 + t.lambda * t.c_config / t.c_max);
    }
    Ok(total)
}

pub fn combined_reward(r_answer: f64, r_format: f64, r_perf: f64, weights: Weights) -> RewardBreakdown {
    let combined = weights.alpha * r_answer + weights.beta * r_format + weights.gamma_perf * r_perf;
    RewardBreakdown {
        r_format,
        r_answer,
        r_perf,
        weights,
        combined,
    }
}

/// Per-configuration components of the warm-up reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupTerm {
    pub r_answer: f64,
    pub r_format: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn warmup_reward(terms: &[WarmupTerm]) -> f64 {
    terms
        .iter()
        .map(|t| t.alpha * t.r_answer + t.beta * t.r_format)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mu: f64,
    /// Population standard deviation (divisor G).
    pub sigma: f64,
    pub advantages: Vec<f64>,
}

/// Standardize a reward group. A group whose spread is zero (up to
/// `1e-12` relative to its mean) yields all-zero advantages.
pub fn normalize_group(rewards: &[f64]) -> Result<GroupStats, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let g = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / g;
    let sigma = var.sqrt();
    let degenerate = sigma <= 1e-12 * mu.abs().max(1.0);
    let advantages = if degenerate {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mu) / sigma).collect()
    };
    Ok(GroupStats {
        mu,
        sigma: if degenerate { 0.0 } else { sigma },
        advantages,
    })
}
