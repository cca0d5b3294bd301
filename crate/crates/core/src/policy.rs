//! The policy side of the harness.
//!
//! [`PolicyParams`] is a categorical policy with one logit per (group,
//! canonical answer) pair, so every probability and gradient is available in
//! closed form. [`ExternalPolicy`] forwards a rendered prompt to a
//! text-completion endpoint instead; its output is scored, never
//! differentiated.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{Answer, ConfigGroup, ConfigSpace, Kind, Literal, Toggle};
use crate::env::KnowledgeBase;
use crate::response::{render_answer, Tag};
use crate::rng::{seeded, Rng};

/// Largest Bool/Value cartesian product enumerated in full.
const MAX_PRODUCT: usize = 64;
/// Menus up to this many candidates enumerate every non-empty subset.
const MAX_MENU_POWERSET: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("group index {index} out of range ({len} groups)")]
    GroupIndex { index: usize, len: usize },
    #[error("answer is not among the group's canonical answers")]
    UnknownAnswer,
    #[error("no snapshot of the old policy is set")]
    MissingSnapshot,
    #[error("parameter dimension {found} does not match the action space ({expected})")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Canonical answers of one group, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupActions {
    pub group_type: Kind,
    pub candidate: Vec<String>,
    pub answers: Vec<Answer>,
}

/// Product of per-candidate value lists, first candidate varying slowest.
/// Falls back to a default baseline plus one-at-a-time changes when the full
/// product exceeds [`MAX_PRODUCT`].
fn product_answers(candidate: &[String], values: &[Vec<Literal>]) -> Vec<Vec<Literal>> {
    let total = values
        .iter()
        .try_fold(1usize, |acc, v| acc.checked_mul(v.len()))
        .unwrap_or(usize::MAX);
    if total <= MAX_PRODUCT {
        let mut out: Vec<Vec<Literal>> = vec![Vec::new()];
        for vals in values {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(v.clone());
                        p
                    })
                })
                .collect();
        }
        return out;
    }
    let base: Vec<Literal> = values.iter().map(|v| v[0].clone()).collect();
    let mut out = vec![base.clone()];
    for (i, vals) in values.iter().enumerate().take(candidate.len()) {
        for v in &vals[1..] {
            let mut a = base.clone();
            a[i] = v.clone();
            out.push(a);
        }
    }
    out
}

/// Enumerate the finite canonical answer set of a group.
///
/// Bool and Value groups take the product of per-candidate values (Bool:
/// Yes, No; Value: range endpoints and midpoint, or every literal). Choice
/// groups pick each candidate. Menu groups take every non-empty subset up to
/// four candidates, otherwise each singleton plus the full set.
pub fn enumerate_answers(space: &ConfigSpace, group_type: Kind, candidate: &[String]) -> Vec<Answer> {
    match group_type {
        Kind::Bool => {
            let values = vec![vec![Toggle::Yes.literal(), Toggle::No.literal()]; candidate.len()];
            product_answers(candidate, &values)
                .into_iter()
                .map(|row| {
                    Answer::Bool(
                        candidate
                            .iter()
                            .cloned()
                            .zip(row.into_iter().map(|l| {
                                if l == Literal::yes() {
                                    Toggle::Yes
                                } else {
                                    Toggle::No
                                }
                            }))
                            .collect(),
                    )
                })
                .collect()
        }
        Kind::Value => {
            let values: Vec<Vec<Literal>> = candidate
                .iter()
                .map(|c| space.get(c).map(|s| s.domain.canonical_values()).unwrap_or_default())
                .collect();
            if values.iter().any(Vec::is_empty) {
                return Vec::new();
            }
            product_answers(candidate, &values)
                .into_iter()
                .map(|row| Answer::Value(candidate.iter().cloned().zip(row).collect()))
                .collect()
        }
        Kind::Choice => candidate.iter().cloned().map(Answer::Choice).collect(),
        Kind::Menu => {
            let k = candidate.len();
            if k <= MAX_MENU_POWERSET {
                (1u32..(1 << k))
                    .map(|mask| {
                        Answer::menu(
                            candidate
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| mask & (1 << i) != 0)
                                .map(|(_, c)| c.clone()),
                        )
                    })
                    .collect()
            } else {
                let mut out: Vec<Answer> = candidate.iter().map(|c| Answer::menu([c.clone()])).collect();
                out.push(Answer::menu(candidate.iter().cloned()));
                out
            }
        }
    }
}

/// Canonical answers of every group of an episode, laid out contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    pub groups: Vec<GroupActions>,
    offsets: Vec<usize>,
}

impl ActionSpace {
    pub fn new(space: &ConfigSpace, groups: &[ConfigGroup]) -> Self {
        let groups: Vec<GroupActions> = groups
            .iter()
            .map(|g| GroupActions {
                group_type: g.group_type,
                candidate: g.candidate.clone(),
                answers: enumerate_answers(space, g.group_type, &g.candidate),
            })
            .collect();
        let mut offsets = vec![0];
        for g in &groups {
            offsets.push(offsets.last().copied().unwrap_or(0) + g.answers.len());
        }
        ActionSpace { groups, offsets }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.answers.len()).collect()
    }

    pub fn answer(&self, group: usize, index: usize) -> &Answer {
        &self.groups[group].answers[index]
    }

    pub fn index_of(&self, group: usize, answer: &Answer) -> Result<usize, PolicyError> {
        let g = self.groups.get(group).ok_or(PolicyError::GroupIndex {
            index: group,
            len: self.groups.len(),
        })?;
        g.answers
            .iter()
            .position(|a| a == answer)
            .ok_or(PolicyError::UnknownAnswer)
    }
}

/// Per-group probabilities over canonical answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the first cumulative probability exceeding `u`.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Flat logit vector `theta` plus the optional old-policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub snapshot: Option<Vec<f64>>,
    offsets: Vec<usize>,
}

impl PolicyParams {
    /// Logits drawn i.i.d. uniform in [-0.01, 0.01].
    pub fn init(actions: &ActionSpace, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let theta = (0..actions.dim()).map(|_| rng.gen_range(-0.01..=0.01)).collect();
        PolicyParams {
            theta,
            snapshot: None,
            offsets: actions.offsets.clone(),
        }
    }

    pub fn from_theta(sizes: &[usize], theta: Vec<f64>) -> Result<Self, PolicyError> {
        let mut offsets = vec![0];
        for s in sizes {
            offsets.push(offsets.last().copied().unwrap_or(0) + s);
        }
        let expected = *offsets.last().unwrap_or(&0);
        if theta.len() != expected {
            return Err(PolicyError::Dimension {
                expected,
                found: theta.len(),
            });
        }
        Ok(PolicyParams {
            theta,
            snapshot: None,
            offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn check_compatible(&self, actions: &ActionSpace) -> Result<(), PolicyError> {
        if self.sizes() != actions.sizes() {
            return Err(PolicyError::Dimension {
                expected: actions.dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub fn group_range(&self, group: usize) -> Result<Range<usize>, PolicyError> {
        if group + 1 >= self.offsets.len() {
            return Err(PolicyError::GroupIndex {
                index: group,
                len: self.num_groups(),
            });
        }
        Ok(self.offsets[group]..self.offsets[group + 1])
    }

    /// θ_old ← θ.
    pub fn take_snapshot(&mut self) {
        self.snapshot = Some(self.theta.clone());
    }

    pub fn action_probs(&self, group: usize) -> Result<ActionDistribution, PolicyError> {
        let r = self.group_range(group)?;
        Ok(ActionDistribution {
            probs: softmax(&self.theta[r]),
        })
    }

    pub fn old_probs(&self, group: usize) -> Result<Vec<f64>, PolicyError> {
        let r = self.group_range(group)?;
        let snap = self.snapshot.as_ref().ok_or(PolicyError::MissingSnapshot)?;
        Ok(softmax(&snap[r]))
    }

    /// Text checkpoint: a `dim N` header, a `groups` line with per-group
    /// answer counts, then one logit per line in round-trip form.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("dim {}\ngroups", self.dim());
        for s in self.sizes() {
            out.push_str(&format!(" {s}"));
        }
        out.push('\n');
        for t in &self.theta {
            out.push_str(&format!("{t:e}\n"));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let bad = |line: usize, message: &str| CheckpointError::Malformed {
            line,
            message: message.to_string(),
        };
        let (n, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
        let dim: usize = header
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| bad(n, "expected `dim N`"))?;
        let (n, groups) = lines.next().ok_or_else(|| bad(2, "missing `groups` line"))?;
        let sizes: Vec<usize> = groups
            .strip_prefix("groups")
            .ok_or_else(|| bad(n, "expected `groups ...`"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(n, "group sizes must be integers")))
            .collect::<Result<_, _>>()?;
        let theta: Vec<f64> = lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| {
                l.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(n, "expected a finite real"))
            })
            .collect::<Result<_, _>>()?;
        if theta.len() != dim || sizes.iter().sum::<usize>() != dim {
            return Err(CheckpointError::Policy(PolicyError::Dimension {
                expected: dim,
                found: theta.len(),
            }));
        }
        Ok(PolicyParams::from_theta(&sizes, theta)?)
    }

    /// Greedy answer index; ties go to the lowest index.
    pub fn greedy(&self, group: usize) -> Result<usize, PolicyError> {
        let r = self.group_range(group)?;
        let logits = &self.theta[r];
        let mut best = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// A sampled answer with its probability under θ and θ_old.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub index: usize,
    pub prob: f64,
    pub prob_old: f64,
    pub explored: bool,
}

pub fn init_params(space: &ConfigSpace, groups: &[ConfigGroup], seed: u64) -> (ActionSpace, PolicyParams) {
    let actions = ActionSpace::new(space, groups);
    let params = PolicyParams::init(&actions, seed);
    (actions, params)
}

pub fn action_probs(params: &PolicyParams, group: usize) -> Result<ActionDistribution, PolicyError> {
    params.action_probs(group)
}

/// Inverse-CDF draw from π_θ. Requires a snapshot for the old probability.
pub fn sample_action(params: &PolicyParams, group: usize, rng: &mut Rng) -> Result<SampledAction, PolicyError> {
    let probs = params.action_probs(group)?.probs;
    let old = params.old_probs(group)?;
    let index = inverse_cdf(&probs, rng.gen::<f64>());
    Ok(SampledAction {
        index,
        prob: probs[index],
        prob_old: old[index],
        explored: false,
    })
}

/// ∂ log π(answer) / ∂ logits of the group: one-hot minus probabilities.
pub fn log_prob_grad(params: &PolicyParams, group: usize, index: usize) -> Result<Vec<f64>, PolicyError> {
    let mut grad = params.action_probs(group)?.probs;
    if index >= grad.len() {
        return Err(PolicyError::UnknownAnswer);
    }
    for g in grad.iter_mut() {
        *g = -*g;
    }
    grad[index] += 1.0;
    Ok(grad)
}

/// Rendering knobs of the toy emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitOptions {
    /// Probability of a deliberately malformed emission.
    pub format_noise: f64,
    /// Look up the first candidate in the knowledge base when it has an entry.
    pub tool_calls: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            format_noise: 0.0,
            tool_calls: true,
        }
    }
}

/// Emission of the toy policy for an already-chosen answer.
///
/// Always consumes exactly two uniform draws so the random stream does not
/// depend on `format_noise`.
pub fn emit_response(
    group: &ConfigGroup,
    answer: &Answer,
    kb: Option<&KnowledgeBase>,
    opts: EmitOptions,
    rng: &mut Rng,
) -> String {
    let noisy = rng.gen::<f64>() < opts.format_noise;
    let variant = rng.gen_range(0..6u32);
    let think = format!(
        "target: {}; {} group over {}",
        group.question,
        group.group_type,
        group.candidate.join(", ")
    );
    let think_block = format!("{}{}{}", Tag::Think.open(), think, Tag::Think.close());
    let tool = match (opts.tool_calls, group.candidate.first(), kb) {
        (true, Some(first), Some(kb)) if kb.query(first).is_some() => {
            format!("{}{}{}", Tag::ToolCall.open(), first, Tag::ToolCall.close())
        }
        _ => String::new(),
    };
    let answer_text = render_answer(answer);
    let answer_block = format!("{}{}{}", Tag::Answer.open(), answer_text, Tag::Answer.close());
    if !noisy {
        return format!("{think_block}{tool}{answer_block}");
    }
    match variant {
        0 => format!("{think_block}{tool}{}{answer_text}", Tag::Answer.open()),
        1 => format!("{answer_block}{think_block}"),
        2 => format!("{think_block}{think_block}{tool}{answer_block}"),
        3 => format!("{tool}{answer_block}"),
        4 => format!("Decision follows. {think_block}{tool}{answer_block}"),
        _ => format!(
            "{think_block}{answer_block}{}{}{}",
            Tag::ToolCall.open(),
            group.candidate.first().map(String::as_str).unwrap_or(""),
            Tag::ToolCall.close()
        ),
    }
}

/// Prompt handed to an external completion model.
pub fn render_prompt(group: &ConfigGroup) -> String {
    format!(
        "Role: Linux kernel configuration tuner.\n\
         Tuning target: {}\n\
         Group type: {}\n\
         Candidates: {}\n\
         Reply as {}...{}, then any number of {}SYMBOL{} knowledge lookups, \
         then {}JSON answer{}.\n",
        group.question,
        group.group_type,
        group.candidate.join(", "),
        Tag::Think.open(),
        Tag::Think.close(),
        Tag::ToolCall.open(),
        Tag::ToolCall.close(),
        Tag::Answer.open(),
        Tag::Answer.close(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// Transport-level failure; the caller may retry.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("completion endpoint failed: {0}")]
pub struct TransportError(pub String);

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        true
    }
}

/// Text-completion contract: prompt in, text out.
pub trait CompletionEndpoint: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError>;
}

impl<F> CompletionEndpoint for F
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, TransportError> + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        self(request)
    }
}

/// Policy backed by an external model.
pub struct ExternalPolicy<E> {
    pub endpoint: E,
    pub max_tokens: u32,
}

impl<E: CompletionEndpoint> ExternalPolicy<E> {
    pub fn new(endpoint: E) -> Self {
        ExternalPolicy {
            endpoint,
            max_tokens: 512,
        }
    }

    pub fn emit(&self, group: &ConfigGroup) -> Result<String, TransportError> {
        let req = CompletionRequest {
            prompt: render_prompt(group),
            max_tokens: self.max_tokens,
        };
        self.endpoint.complete(&req).map(|r| r.text)
    }

    /// Concurrent emissions; results are returned in request order.
    pub fn emit_batch(&self, groups: &[&ConfigGroup]) -> Vec<Result<String, TransportError>> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = groups
                .iter()
                .map(|g| scope.spawn(move || self.emit(g)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(TransportError("worker panicked".into()))))
                .collect()
        })
    }
}
