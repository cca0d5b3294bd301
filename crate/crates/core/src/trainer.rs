//! Group-relative policy optimization over the toy policy: ε-greedy group
//! rollouts, per-group advantage normalization, the clipped surrogate, one
//! smoothed gradient step per batch, and the warm-up and exploration drivers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{Answer, Assignment, ConfigGroup, ConfigSpace};
use crate::env::{Action, EnvError, KernelEnv, KernelState, KnowledgeBase, ScoringOracle, SCORE};
use crate::policy::{
    emit_response, log_prob_grad, sample_action, ActionSpace, EmitOptions, PolicyError, PolicyParams, SampledAction,
};
use crate::response::{format_reward, parse_answer, parse_response};
use crate::reward::{answer_reward, combined_reward, normalize_group, perf_reward, PerfObservation, RewardError, Weights};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    #[serde(rename = "explore")]
    Exploration,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Exploration => "explore",
        }
    }
}

/// Surrogate form. `Literal` is `min(ratio, 1 + ε) · A`; `TwoSided` is the
/// usual `min(ratio · A, clip(ratio, 1 − ε, 1 + ε) · A)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Literal,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub discount: f64,
    pub explore_eps0: f64,
    pub explore_decay: f64,
    pub learning_rate: f64,
    pub smoothing_coef: f64,
    /// Steps per episode; defaults to one pass over the episode's groups.
    pub steps_per_episode: Option<usize>,
    /// Episodes in exploration, update steps in warm-up.
    pub episodes: usize,
    pub weights: Weights,
    pub phase: Phase,
    pub format_noise: f64,
    pub objective: Objective,
    pub tool_calls: bool,
    /// Evaluate the greedy policy every this many episodes; 0 disables.
    pub eval_every: usize,
    pub workload: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            clip_eps: 0.2,
            discount: 0.99,
            explore_eps0: 0.2,
            explore_decay: 0.95,
            learning_rate: 0.1,
            smoothing_coef: 1.0,
            steps_per_episode: None,
            episodes: 500,
            weights: Weights::default(),
            phase: Phase::Exploration,
            format_noise: 0.0,
            objective: Objective::Literal,
            tool_calls: true,
            eval_every: 10,
            workload: "unixbench".to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if self.group_size < 2 {
            return Err(TrainError::GroupSize(self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad("clip_eps must be positive");
        }
        if !unit(self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !unit(self.explore_eps0) {
            return bad("explore_eps0 must lie in [0, 1]");
        }
        if !(self.explore_decay > 0.0 && self.explore_decay <= 1.0) {
            return bad("explore_decay must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !unit(self.smoothing_coef) {
            return bad("smoothing_coef must lie in [0, 1]");
        }
        if !unit(self.format_noise) {
            return bad("format_noise must lie in [0, 1]");
        }
        if !self.weights.is_valid() {
            return bad("weights must be finite and non-negative");
        }
        if self.steps_per_episode == Some(0) {
            return bad("steps_per_episode must be positive");
        }
        Ok(())
    }

    /// ε in effect during episode `k`.
    pub fn explore_eps_at(&self, k: usize) -> f64 {
        self.explore_eps0 * self.explore_decay.powi(k as i32)
    }

    fn emit_options(&self) -> EmitOptions {
        EmitOptions {
            format_noise: self.format_noise,
            tool_calls: self.tool_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("configured for {found:?}, expected {expected:?}")]
    Phase { expected: Phase, found: Phase },
    #[error("old-policy probability must be positive, got {0}")]
    ZeroProbability(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Everything the loops read but never mutate.
#[derive(Clone, Copy)]
pub struct Task<'a> {
    pub space: &'a ConfigSpace,
    pub groups: &'a [ConfigGroup],
    pub actions: &'a ActionSpace,
    pub kb: Option<&'a KnowledgeBase>,
}

/// One sampled action, as consumed by the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub group: usize,
    pub index: usize,
    pub prob_old: f64,
    pub reward: f64,
    pub advantage: f64,
}

/// Scored outcome of one of the G samples of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub sample: SampledAction,
    pub r_format: f64,
    pub r_answer: f64,
    pub r_perf: f64,
    pub reward: f64,
    pub kb_hits: usize,
    pub applied: bool,
    pub next_state: Option<KernelState>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub group_size: usize,
    pub records: Vec<ActionRecord>,
    /// Executed path: `(group, reward, applied)` per step.
    pub path: Vec<(usize, f64, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_format: f64,
    pub mean_r_answer: f64,
    pub mean_r_perf: f64,
    pub explore_eps: f64,
    pub episode_return: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub answers: Vec<(usize, Answer)>,
    pub valid: usize,
    pub total: usize,
    pub validity_rate: f64,
    pub base_score: f64,
    pub final_score: f64,
    /// Relative improvement over the default assignment, in percent.
    pub perf_gain: f64,
    /// Performance reward over every accepted modification of the pass.
    pub r_perf: f64,
    pub assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub episode: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    pub evals: Vec<EvalPoint>,
}

/// ε-greedy draw: one uniform decides the branch, then either a uniform
/// canonical answer or a draw from π_θ.
pub fn select_action(
    params: &PolicyParams,
    group: usize,
    explore_eps: f64,
    rng: &mut Rng,
) -> Result<SampledAction, PolicyError> {
    if rng.gen::<f64>() < explore_eps {
        let probs = params.action_probs(group)?.probs;
        let old = params.old_probs(group)?;
        let index = rng.gen_range(0..probs.len());
        return Ok(SampledAction {
            index,
            prob: probs[index],
            prob_old: old[index],
            explored: true,
        });
    }
    sample_action(params, group, rng)
}

/// Render, parse and score the emission for a chosen answer index. Returns
/// the format reward, the parsed answer and the number of knowledge-base hits.
fn emit_and_parse(
    task: &Task<'_>,
    group: usize,
    index: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> (f64, Option<Answer>, usize) {
    let g = &task.groups[group];
    let chosen = task.actions.answer(group, index);
    let text = emit_response(g, chosen, task.kb, config.emit_options(), rng);
    let parsed = parse_response(&text);
    let r_format = format_reward(&parsed);
    match parsed {
        Ok(resp) => {
            let hits = match task.kb {
                Some(kb) => resp.tool_calls.iter().filter(|q| kb.query(q.trim()).is_some()).count(),
                None => 0,
            };
            (r_format, parse_answer(&resp.answer, g.group_type).ok(), hits)
        }
        Err(_) => (r_format, None, 0),
    }
}

/// G samples for one group, each stepped from its own copy of `state`.
/// Results are in sample order.
pub fn rollout_group(
    task: &Task<'_>,
    env: &KernelEnv<'_>,
    state: &KernelState,
    params: &PolicyParams,
    group: usize,
    config: &TrainConfig,
    explore_eps: f64,
    rng: &mut Rng,
) -> Result<Vec<Outcome>, TrainError> {
    if config.group_size < 2 {
        return Err(TrainError::GroupSize(config.group_size));
    }
    let mut out = Vec::with_capacity(config.group_size);
    for _ in 0..config.group_size {
        let sample = select_action(params, group, explore_eps, rng)?;
        let (r_format, answer, kb_hits) = emit_and_parse(task, group, sample.index, config, rng);
        let tr = env.step(
            state,
            Action {
                group,
                answer,
                r_format,
            },
            config.weights,
        )?;
        out.push(Outcome {
            sample,
            r_format,
            r_answer: tr.reward.r_answer,
            r_perf: tr.reward.r_perf,
            reward: tr.reward.combined,
            kb_hits,
            applied: tr.applied,
            next_state: Some(tr.next_state),
        });
    }
    Ok(out)
}

/// `min(ratio, 1 + ε) · A`.
pub fn clipped_objective(prob_new: f64, prob_old: f64, advantage: f64, clip_eps: f64) -> Result<f64, TrainError> {
    if !(prob_old > 0.0) {
        return Err(TrainError::ZeroProbability(prob_old));
    }
    Ok((prob_new / prob_old).min(1.0 + clip_eps) * advantage)
}

/// `min(ratio · A, clip(ratio, 1 − ε, 1 + ε) · A)`.
pub fn clipped_objective_two_sided(
    prob_new: f64,
    prob_old: f64,
    advantage: f64,
    clip_eps: f64,
) -> Result<f64, TrainError> {
    if !(prob_old > 0.0) {
        return Err(TrainError::ZeroProbability(prob_old));
    }
    let ratio = prob_new / prob_old;
    Ok((ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage))
}

fn surrogate(form: Objective, prob_new: f64, prob_old: f64, advantage: f64, clip_eps: f64) -> Result<f64, TrainError> {
    match form {
        Objective::Literal => clipped_objective(prob_new, prob_old, advantage, clip_eps),
        Objective::TwoSided => clipped_objective_two_sided(prob_new, prob_old, advantage, clip_eps),
    }
}

/// Whether the ratio term (rather than a constant) is the active branch.
fn term_active(form: Objective, ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    match form {
        Objective::Literal => ratio < 1.0 + clip_eps,
        Objective::TwoSided => {
            !((advantage > 0.0 && ratio > 1.0 + clip_eps) || (advantage < 0.0 && ratio < 1.0 - clip_eps))
        }
    }
}

/// Surrogate under the current θ: the mean over each group of G samples,
/// summed over the steps of the trajectory.
pub fn batch_objective(
    params: &PolicyParams,
    traj: &Trajectory,
    clip_eps: f64,
    form: Objective,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for r in &traj.records {
        let p = params.action_probs(r.group)?.probs;
        let p_new = *p.get(r.index).ok_or(PolicyError::UnknownAnswer)?;
        total += surrogate(form, p_new, r.prob_old, r.advantage, clip_eps)?;
    }
    Ok(total / traj.group_size.max(1) as f64)
}

/// Gradient of [`batch_objective`] with respect to θ.
pub fn batch_gradient(
    params: &PolicyParams,
    traj: &Trajectory,
    clip_eps: f64,
    form: Objective,
) -> Result<Vec<f64>, TrainError> {
    let mut grad = vec![0.0; params.dim()];
    let n = traj.group_size.max(1) as f64;
    for r in &traj.records {
        if !(r.prob_old > 0.0) {
            return Err(TrainError::ZeroProbability(r.prob_old));
        }
        let range = params.group_range(r.group)?;
        let g = log_prob_grad(params, r.group, r.index)?;
        let p_new = params.action_probs(r.group)?.probs[r.index];
        let ratio = p_new / r.prob_old;
        if !term_active(form, ratio, r.advantage, clip_eps) {
            continue;
        }
        let scale = ratio * r.advantage / n;
        for (slot, gi) in grad[range].iter_mut().zip(g) {
            *slot += scale * gi;
        }
    }
    Ok(grad)
}

/// One ascent step on the batch surrogate, smoothed toward θ_old, followed
/// by a snapshot refresh. Returns the loss (negated objective) before the step.
pub fn update_policy(
    params: &mut PolicyParams,
    traj: &Trajectory,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let old = params.snapshot.clone().ok_or(PolicyError::MissingSnapshot)?;
    if old.len() != params.dim() {
        return Err(PolicyError::Dimension {
            expected: params.dim(),
            found: old.len(),
        }
        .into());
    }
    let objective = batch_objective(params, traj, config.clip_eps, config.objective)?;
    let grad = batch_gradient(params, traj, config.clip_eps, config.objective)?;
    let c = config.smoothing_coef;
    for ((theta, g), o) in params.theta.iter_mut().zip(&grad).zip(&old) {
        let stepped = *theta + config.learning_rate * g;
        *theta = o + c * (stepped - o);
    }
    params.take_snapshot();
    Ok(-objective)
}

/// Σ_{t=1..T} γ^t r_t.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    rewards
        .iter()
        .enumerate()
        .map(|(t, r)| discount.powi(t as i32 + 1) * r)
        .sum()
}

fn check_start(task: &Task<'_>, indices: &[usize], params: &PolicyParams, config: &TrainConfig, phase: Phase) -> Result<(), TrainError> {
    config.validate()?;
    if config.phase != phase {
        return Err(TrainError::Phase {
            expected: phase,
            found: config.phase,
        });
    }
    if indices.is_empty() || task.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    params.check_compatible(task.actions)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= task.groups.len()) {
        return Err(PolicyError::GroupIndex {
            index: bad,
            len: task.groups.len(),
        }
        .into());
    }
    Ok(())
}

#[derive(Default)]
struct Means {
    n: usize,
    reward: f64,
    r_format: f64,
    r_answer: f64,
    r_perf: f64,
}

impl Means {
    fn add(&mut self, reward: f64, r_format: f64, r_answer: f64, r_perf: f64) {
        self.n += 1;
        self.reward += reward;
        self.r_format += r_format;
        self.r_answer += r_answer;
        self.r_perf += r_perf;
    }

    fn point(&self, step: usize, explore_eps: f64, episode_return: Option<f64>, loss: f64) -> CurvePoint {
        let n = self.n.max(1) as f64;
        CurvePoint {
            step,
            mean_reward: self.reward / n,
            mean_r_format: self.r_format / n,
            mean_r_answer: self.r_answer / n,
            mean_r_perf: self.r_perf / n,
            explore_eps,
            episode_return,
            loss,
        }
    }
}

/// Environment-free phase: each step draws one group from `indices`,
/// scores G emissions on format and answer validity only, and updates.
pub fn run_warmup(
    task: &Task<'_>,
    indices: &[usize],
    mut params: PolicyParams,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    check_start(task, indices, &params, config, Phase::Warmup)?;
    let weights = Weights {
        gamma_perf: 0.0,
        ..config.weights
    };
    let mut rng = stream(seed, 1);
    params.take_snapshot();
    let mut curve = Vec::with_capacity(config.episodes);
    for step in 0..config.episodes {
        let group = indices[rng.gen_range(0..indices.len())];
        let mut rewards = Vec::with_capacity(config.group_size);
        let mut samples = Vec::with_capacity(config.group_size);
        let mut means = Means::default();
        for _ in 0..config.group_size {
            let sample = sample_action(&params, group, &mut rng)?;
            let (r_format, answer, _) = emit_and_parse(task, group, sample.index, config, &mut rng);
            let r_answer = answer_reward(&task.groups[group], answer.as_ref(), task.space);
            let reward = combined_reward(r_answer, r_format, 0.0, weights).combined;
            means.add(reward, r_format, r_answer, 0.0);
            rewards.push(reward);
            samples.push(sample);
        }
        let stats = normalize_group(&rewards)?;
        let records = samples
            .iter()
            .zip(&rewards)
            .zip(&stats.advantages)
            .map(|((s, &reward), &advantage)| ActionRecord {
                group,
                index: s.index,
                prob_old: s.prob_old,
                reward,
                advantage,
            })
            .collect();
        let traj = Trajectory {
            group_size: config.group_size,
            records,
            path: Vec::new(),
        };
        let loss = update_policy(&mut params, &traj, config)?;
        curve.push(means.point(step, 0.0, None, loss));
    }
    Ok(TrainOutcome {
        params,
        curve,
        evals: Vec::new(),
    })
}

/// Greedy decoding over `indices` from the default state. An answer counts
/// as valid when the environment accepts it.
pub fn evaluate_greedy(
    task: &Task<'_>,
    indices: &[usize],
    params: &PolicyParams,
    oracle: &dyn ScoringOracle,
    workload: &str,
) -> Result<EvalReport, TrainError> {
    params.check_compatible(task.actions)?;
    let env = KernelEnv::new(task.space, task.groups, oracle, workload);
    let mut state = env.reset()?;
    let base_score = state.metrics[SCORE];
    let mut answers = Vec::with_capacity(indices.len());
    let mut terms = Vec::new();
    let mut valid = 0;
    for &group in indices {
        let index = params.greedy(group)?;
        let answer = task.actions.answer(group, index).clone();
        let tr = env.step(
            &state,
            Action {
                group,
                answer: Some(answer.clone()),
                r_format: 1.0,
            },
            Weights::default(),
        )?;
        if tr.applied {
            valid += 1;
            let changed = state.assignment.clone().apply(task.space, &task.groups[group].candidate, &answer).len();
            terms.extend(oracle.observe(&state.metrics, &tr.next_state.metrics, changed, task.groups[group].candidate.len()).terms);
        }
        answers.push((group, answer));
        state = tr.next_state;
    }
    let final_score = state.metrics[SCORE];
    let total = indices.len();
    Ok(EvalReport {
        answers,
        valid,
        total,
        validity_rate: if total == 0 { 0.0 } else { valid as f64 / total as f64 },
        base_score,
        final_score,
        perf_gain: (final_score - base_score) / base_score * 100.0,
        r_perf: perf_reward(&PerfObservation { terms })?,
        assignment: state.assignment,
    })
}

/// Environment-coupled phase. Each episode resets the kernel, walks the
/// groups in `indices` order for T steps, and executes the first of the G
/// samples at every step. One update per episode; ε decays per episode.
/// `held_out` scores the periodic greedy evaluation (defaults to `oracle`).
pub fn run_exploration(
    task: &Task<'_>,
    indices: &[usize],
    oracle: &dyn ScoringOracle,
    held_out: Option<&dyn ScoringOracle>,
    mut params: PolicyParams,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    check_start(task, indices, &params, config, Phase::Exploration)?;
    let env = KernelEnv::new(task.space, task.groups, oracle, &config.workload);
    let steps = config.steps_per_episode.unwrap_or(indices.len());
    let mut rng = stream(seed, 2);
    params.take_snapshot();
    let mut curve = Vec::with_capacity(config.episodes);
    let mut evals = Vec::new();
    for episode in 0..config.episodes {
        let eps = config.explore_eps_at(episode);
        let mut state = env.reset()?;
        let mut traj = Trajectory {
            group_size: config.group_size,
            ..Trajectory::default()
        };
        let mut means = Means::default();
        for t in 0..steps {
            let group = indices[t % indices.len()];
            let mut outcomes = rollout_group(task, &env, &state, &params, group, config, eps, &mut rng)?;
            let rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
            let stats = normalize_group(&rewards)?;
            for (o, &advantage) in outcomes.iter().zip(&stats.advantages) {
                means.add(o.reward, o.r_format, o.r_answer, o.r_perf);
                traj.records.push(ActionRecord {
                    group,
                    index: o.sample.index,
                    prob_old: o.sample.prob_old,
                    reward: o.reward,
                    advantage,
                });
            }
            let executed = &mut outcomes[0];
            traj.path.push((group, executed.reward, executed.applied));
            state = executed.next_state.take().expect("rollouts carry their next state");
        }
        let path_rewards: Vec<f64> = traj.path.iter().map(|p| p.1).collect();
        let ret = discounted_return(&path_rewards, config.discount);
        let loss = update_policy(&mut params, &traj, config)?;
        curve.push(means.point(episode, eps, Some(ret), loss));
        if config.eval_every > 0 && (episode + 1) % config.eval_every == 0 {
            let report = evaluate_greedy(task, indices, &params, held_out.unwrap_or(oracle), &config.workload)?;
            evals.push(EvalPoint {
                episode: episode + 1,
                report,
            });
        }
    }
    Ok(TrainOutcome { params, curve, evals })
}
