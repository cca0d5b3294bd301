//! The tuning environment: kernel state, action application, a synthetic
//! benchmark with a planted optimum, and the knowledge base behind tool calls.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{
    check_dependencies, Answer, Assignment, AssignmentError, ConfigGroup, ConfigSpace, Domain, Literal,
};
use crate::reward::{answer_reward, combined_reward, perf_reward, PerfObservation, PerfTerm, RewardBreakdown, Weights};
use crate::rng::{derive_seed, seeded};

/// Name of the aggregate metric produced by [`SyntheticBenchmark`].
pub const SCORE: &str = "score";

pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("group index {index} out of range ({len} groups)")]
    GroupIndex { index: usize, len: usize },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("assignment violates dependencies: {0}")]
    DependencyInvalid(String),
    #[error("malformed knowledge base line {line}: {message}")]
    KnowledgeBase { line: usize, message: String },
    #[error("benchmark model does not cover symbol `{0}`")]
    Uncovered(String),
}

/// Desk-scale stand-in for a kernel build plus benchmark run.
pub trait ScoringOracle: Sync {
    fn metrics(&self, space: &ConfigSpace, assignment: &Assignment) -> Result<Metrics, EnvError>;

    /// Complexity weight of a modification.
    fn lambda(&self) -> f64 {
        0.0
    }

    /// One-term observation for a single modification: `c_config` is the
    /// number of symbols it changed and `c_max` the group's candidate count.
    fn observe(&self, base: &Metrics, new: &Metrics, changed: usize, group_size: usize) -> PerfObservation {
        PerfObservation::single(PerfTerm {
            p_base: base[SCORE],
            p_new: new[SCORE],
            lambda: self.lambda(),
            c_config: changed as f64,
            c_max: group_size.max(1) as f64,
        })
    }
}

/// Weight of a symbol's value in the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModel {
    /// Indicator weight per value of a finite domain.
    Table(Vec<(Literal, f64)>),
    /// Integer range: `bonus` at `peak`, otherwise
    /// `-(penalty + slope * |v - peak| / (hi - lo + 1))`.
    Range {
        lo: i64,
        hi: i64,
        peak: i64,
        bonus: f64,
        penalty: f64,
        slope: f64,
    },
}

impl FeatureModel {
    fn weight(&self, v: &Literal) -> Option<f64> {
        match (self, v) {
            (FeatureModel::Table(rows), v) => rows.iter().find(|(k, _)| k == v).map(|(_, w)| *w),
            (
                FeatureModel::Range {
                    lo,
                    hi,
                    peak,
                    bonus,
                    penalty,
                    slope,
                },
                Literal::Int(x),
            ) => {
                if x == peak {
                    Some(*bonus)
                } else {
                    let span = (hi - lo + 1) as f64;
                    Some(-(penalty + slope * (x - peak).abs() as f64 / span))
                }
            }
            _ => None,
        }
    }

    fn worst(&self) -> f64 {
        match self {
            FeatureModel::Table(rows) => rows.iter().map(|(_, w)| -w).fold(0.0, f64::max),
            FeatureModel::Range { penalty, slope, .. } => penalty + slope,
        }
    }
}

/// Pairwise bonus for a dependent pair both sitting at their planted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub child: String,
    pub parent: String,
    pub bonus: f64,
}

/// Seeded linear model over `(symbol, value)` indicator features plus
/// interaction terms on dependency edges.
///
/// Finite-domain features weigh the default value 0, a non-default planted
/// value `+bonus` and every other value a small penalty. Every feature is
/// therefore maximized only at the planted value and every interaction only
/// pays out at the planted pair, so the planted assignment is the unique
/// maximizer whenever it is dependency-valid. The offset puts the worst
/// possible score at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub seed: u64,
    pub workload: String,
    pub offset: f64,
    pub lambda: f64,
    pub planted: BTreeMap<String, Literal>,
    pub features: BTreeMap<String, FeatureModel>,
    pub interactions: Vec<Interaction>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Values a symbol can actually reach through group answers.
fn reachable_values(domain: &Domain) -> Vec<Literal> {
    match domain {
        Domain::Options(_) => {
            let (d, s) = (domain.default_value(), domain.selected_value());
            if d == s {
                vec![d]
            } else {
                vec![d, s]
            }
        }
        other => other.canonical_values(),
    }
}

impl SyntheticBenchmark {
    /// Draw a dependency-valid planted assignment, then the model around it.
    pub fn generate(space: &ConfigSpace, seed: u64, workload: &str) -> Self {
        let mut rng = seeded(derive_seed(seed, fnv1a(workload)));
        let mut planted = Assignment::new();
        for name in space.topological_order() {
            let sym = space.get(name).expect("topological order lists known symbols");
            let values = reachable_values(&sym.domain);
            let pick = values[rng.gen_range(0..values.len())].clone();
            let default = sym.domain.default_value();
            let feasible = pick == default
                || sym.depends_on.iter().all(|r| {
                    let parent = space.get(&r.symbol).expect("validated");
                    planted.effective(parent) == r.value
                });
            planted.set(name, if feasible { pick } else { default });
        }
        Self::build(space, planted.values, seed, workload, &mut rng)
    }

    /// Model with a caller-chosen planted assignment (missing symbols take
    /// their default).
    pub fn with_planted(space: &ConfigSpace, planted: &Assignment, seed: u64, workload: &str) -> Self {
        let mut rng = seeded(derive_seed(seed ^ 0x5eed, fnv1a(workload)));
        let full = space
            .symbols()
            .map(|s| (s.name.clone(), planted.effective(s)))
            .collect();
        Self::build(space, full, seed, workload, &mut rng)
    }

    fn build(
        space: &ConfigSpace,
        planted: BTreeMap<String, Literal>,
        seed: u64,
        workload: &str,
        rng: &mut crate::rng::Rng,
    ) -> Self {
        let mut features = BTreeMap::new();
        for sym in space.symbols() {
            let peak = planted[&sym.name].clone();
            let bonus = rng.gen_range(4.0..12.0);
            let model = match (&sym.domain, &peak) {
                (Domain::Range { lo, hi }, Literal::Int(p)) => FeatureModel::Range {
                    lo: *lo,
                    hi: *hi,
                    peak: *p,
                    bonus,
                    penalty: rng.gen_range(0.5..6.0),
                    slope: rng.gen_range(0.0..2.0),
                },
                (domain, _) => {
                    let values = match domain {
                        Domain::Options(opts) => opts.iter().cloned().map(Literal::Text).collect(),
                        d => d.canonical_values(),
                    };
                    let default = domain.default_value();
                    FeatureModel::Table(
                        values
                            .into_iter()
                            .map(|v| {
                                let w = if v == default {
                                    0.0
                                } else if v == peak {
                                    bonus
                                } else {
                                    -rng.gen_range(0.1..1.0)
                                };
                                (v, w)
                            })
                            .collect(),
                    )
                }
            };
            features.insert(sym.name.clone(), model);
        }
        let mut interactions = Vec::new();
        for name in space.topological_order() {
            let sym = space.get(name).expect("known");
            for req in &sym.depends_on {
                interactions.push(Interaction {
                    child: sym.name.clone(),
                    parent: req.symbol.clone(),
                    bonus: rng.gen_range(1.0..4.0),
                });
            }
        }
        let offset = 1.0 + features.values().map(FeatureModel::worst).sum::<f64>();
        SyntheticBenchmark {
            seed,
            workload: workload.to_string(),
            offset,
            lambda: 0.0,
            planted,
            features,
            interactions,
        }
    }

    pub fn planted_assignment(&self) -> Assignment {
        Assignment {
            values: self.planted.clone(),
        }
    }

    /// Raw model value; does not check dependencies.
    pub fn evaluate(&self, space: &ConfigSpace, assignment: &Assignment) -> Result<f64, EnvError> {
        let mut total = self.offset;
        for sym in space.symbols() {
            let v = assignment.effective(sym);
            let w = self
                .features
                .get(&sym.name)
                .and_then(|f| f.weight(&v))
                .ok_or_else(|| EnvError::Uncovered(sym.name.clone()))?;
            total += w;
        }
        for it in &self.interactions {
            let (Some(c), Some(p)) = (space.get(&it.child), space.get(&it.parent)) else {
                return Err(EnvError::Uncovered(it.child.clone()));
            };
            if assignment.effective(c) == self.planted[&it.child]
                && assignment.effective(p) == self.planted[&it.parent]
            {
                total += it.bonus;
            }
        }
        Ok(total)
    }

    pub fn to_fixture(&self) -> String {
        serde_json::to_string_pretty(self).expect("benchmark serializes")
    }

    pub fn from_fixture(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl ScoringOracle for SyntheticBenchmark {
    fn metrics(&self, space: &ConfigSpace, assignment: &Assignment) -> Result<Metrics, EnvError> {
        assignment.check_domains(space)?;
        let violations = check_dependencies(space, assignment)?;
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(EnvError::DependencyInvalid(msgs.join(", ")));
        }
        Ok(Metrics::from([(SCORE.to_string(), self.evaluate(space, assignment)?)]))
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Metrics of a dependency-valid assignment under the model seeded by
/// `(seed, workload)`.
pub fn synthetic_benchmark(
    space: &ConfigSpace,
    assignment: &Assignment,
    workload: &str,
    seed: u64,
) -> Result<Metrics, EnvError> {
    SyntheticBenchmark::generate(space, seed, workload).metrics(space, assignment)
}

/// Every dependency-valid assignment over reachable values, for spaces small
/// enough to enumerate (`limit` assignments at most). `None` when too large.
pub fn enumerate_valid_assignments(space: &ConfigSpace, limit: usize) -> Option<Vec<Assignment>> {
    let symbols: Vec<_> = space.symbols().collect();
    let choices: Vec<Vec<Literal>> = symbols.iter().map(|s| reachable_values(&s.domain)).collect();
    let total = choices
        .iter()
        .try_fold(1usize, |acc, c| acc.checked_mul(c.len()))?;
    if total > limit {
        return None;
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; symbols.len()];
    for _ in 0..total {
        let mut a = Assignment::new();
        for (k, sym) in symbols.iter().enumerate() {
            a.set(&sym.name, choices[k][idx[k]].clone());
        }
        if check_dependencies(space, &a).map(|v| v.is_empty()).unwrap_or(false) {
            out.push(a);
        }
        for k in 0..idx.len() {
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    Some(out)
}

/// Exhaustive search for the maximizers of `oracle` over valid assignments.
pub fn exhaustive_maximizers(
    space: &ConfigSpace,
    oracle: &dyn ScoringOracle,
    limit: usize,
) -> Option<(f64, Vec<Assignment>)> {
    let all = enumerate_valid_assignments(space, limit)?;
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    for a in all {
        let score = oracle.metrics(space, &a).ok()?[SCORE];
        if score > best {
            best = score;
            winners = vec![a];
        } else if score == best {
            winners.push(a);
        }
    }
    Some((best, winners))
}

/// Exact-key store of auxiliary configuration text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, String>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KbRecord {
    key: String,
    text: String,
}

impl KnowledgeBase {
    /// JSONL `{"key":..., "text":...}`; later duplicates are rejected.
    pub fn load(source: &str) -> Result<Self, EnvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: KbRecord = serde_json::from_str(trimmed).map_err(|e| EnvError::KnowledgeBase {
                line,
                message: e.to_string(),
            })?;
            if entries.insert(rec.key.clone(), rec.text).is_some() {
                return Err(EnvError::KnowledgeBase {
                    line,
                    message: format!("duplicate key {:?}", rec.key),
                });
            }
        }
        Ok(KnowledgeBase { entries })
    }

    /// One entry per symbol: help text, domain and dependency summary.
    pub fn from_space(space: &ConfigSpace) -> Self {
        let entries = space
            .symbols()
            .map(|s| {
                let domain = match &s.domain {
                    Domain::Bool => "Yes/No".to_string(),
                    Domain::Options(o) => o.join("/"),
                    Domain::Range { lo, hi } => format!("[{lo}, {hi}]"),
                    Domain::Set(items) => items.iter().map(ToString::to_string).collect::<Vec<_>>().join("/"),
                };
                let deps = if s.depends_on.is_empty() {
                    "no dependencies".to_string()
                } else {
                    let reqs: Vec<String> = s.depends_on.iter().map(ToString::to_string).collect();
                    format!("depends on {}", reqs.join(" && "))
                };
                let mut text = format!("{} ({}): {}; {}", s.name, s.kind, domain, deps);
                if let Some(help) = &s.help {
                    text.push_str(". ");
                    text.push_str(help);
                }
                (s.name.clone(), text)
            })
            .collect();
        KnowledgeBase { entries }
    }

    pub fn query(&self, query: &str) -> Option<&str> {
        self.entries.get(query).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn kb_query<'a>(kb: &'a KnowledgeBase, query: &str) -> Option<&'a str> {
    kb.query(query)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub assignment: Assignment,
    pub workload: String,
    pub metrics: Metrics,
}

/// A proposed modification of one group. `answer` is `None` when the
/// emission could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub group: usize,
    pub answer: Option<Answer>,
    pub r_format: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: KernelState,
    pub action: Action,
    pub reward: RewardBreakdown,
    pub next_state: KernelState,
    pub applied: bool,
}

/// One episode's environment: a space, its ordered groups and a scoring oracle.
pub struct KernelEnv<'a> {
    pub space: &'a ConfigSpace,
    pub groups: &'a [ConfigGroup],
    pub oracle: &'a dyn ScoringOracle,
    pub workload: String,
}

impl<'a> KernelEnv<'a> {
    pub fn new(
        space: &'a ConfigSpace,
        groups: &'a [ConfigGroup],
        oracle: &'a dyn ScoringOracle,
        workload: &str,
    ) -> Self {
        KernelEnv {
            space,
            groups,
            oracle,
            workload: workload.to_string(),
        }
    }

    /// Conservative default state: Bool "No", first option, domain minimum.
    pub fn reset(&self) -> Result<KernelState, EnvError> {
        let assignment = self.space.default_assignment();
        let metrics = self.oracle.metrics(self.space, &assignment)?;
        Ok(KernelState {
            assignment,
            workload: self.workload.clone(),
            metrics,
        })
    }

    /// Apply an action if it is a valid answer whose result is
    /// dependency-valid; otherwise leave the state unchanged with no
    /// answer or performance reward.
    pub fn step(&self, state: &KernelState, action: Action, weights: Weights) -> Result<Transition, EnvError> {
        let group = self.groups.get(action.group).ok_or(EnvError::GroupIndex {
            index: action.group,
            len: self.groups.len(),
        })?;
        let mut applied = None;
        if answer_reward(group, action.answer.as_ref(), self.space) == 1.0 {
            let answer = action.answer.as_ref().expect("valid answers are present");
            let mut next = state.assignment.clone();
            let changed = next.apply(self.space, &group.candidate, answer);
            if check_dependencies(self.space, &next)?.is_empty() {
                applied = Some((next, changed.len()));
            }
        }
        let accepted = applied.is_some();
        let (reward, next_state) = match applied {
            Some((assignment, changed)) => {
                let metrics = self.oracle.metrics(self.space, &assignment)?;
                let obs = self
                    .oracle
                    .observe(&state.metrics, &metrics, changed, group.candidate.len());
                let r_perf = perf_reward(&obs).expect("oracle metrics are positive");
                (
                    combined_reward(1.0, action.r_format, r_perf, weights),
                    KernelState {
                        assignment,
                        workload: state.workload.clone(),
                        metrics,
                    },
                )
            }
            None => (combined_reward(0.0, action.r_format, 0.0, weights), state.clone()),
        };
        Ok(Transition {
            state: state.clone(),
            applied: accepted,
            action,
            reward,
            next_state,
        })
    }
}
