//! Kernel-configuration tuning as a verifiable reinforcement-learning harness.
//!
//! The crate models a typed configuration action space ([`config_space`]),
//! scores policy emissions with rule-based rewards ([`response`],
//! [`reward`]), runs them against a synthetic benchmark ([`env`]) and trains
//! a categorical policy ([`policy`]) with group-relative policy optimization
//! ([`trainer`]). [`score`] aggregates benchmark reports.

pub mod config_space;
pub mod dataset;
pub mod env;
pub mod policy;
pub mod response;
pub mod reward;
pub mod rng;
pub mod score;
pub mod trainer;

pub use config_space::{
    check_dependencies, group_by_dependency, validate_group, Answer, Assignment, ConfigGroup, ConfigSpace,
    ConfigSymbol, Domain, Kind, Literal, Toggle,
};
pub use dataset::{read_dataset, split_dataset, write_dataset, Dataset};
pub use env::{KernelEnv, KernelState, KnowledgeBase, ScoringOracle, SyntheticBenchmark};
pub use policy::{ActionSpace, PolicyParams};
pub use response::{format_reward, parse_answer, parse_response, render_answer, AgentResponse};
pub use reward::{
    answer_reward, combined_reward, normalize_group, perf_reward, warmup_reward, RewardBreakdown, Weights,
};
pub use score::{analysis_ratios, unixbench_score, BenchReport};
pub use trainer::{Phase, TrainConfig};
