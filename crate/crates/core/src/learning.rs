//! Monte Carlo policy iteration for tabular policies.
//!
//! The trainer is generic over an [`Environment`] so the same iteration
//! loop that trains grid players can be pointed at a small synthetic chain
//! whose action values have a closed form, which is how the estimator and
//! improvement step are validated.
//!
//! One training round plays a fixed batch of episodes with the current
//! policy (plus an exploration floor), estimates every-visit action values
//! from suffix-mean returns, and blends each visited state's distribution a
//! step toward the greedy one. Rounds reuse the same episode seeds, so
//! successive evaluations differ only through the policy and the stopping
//! rule compares like with like. Convergence is declared when the 3-round
//! moving average of the evaluation score stops moving; if the round budget
//! runs out first, the best-scoring round's policy is returned instead and
//! the result is flagged.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Level0Attacker, Level0Defender, PlayerKind, StateCodec, StateKey, TabularAttacker, TabularDefender, TabularPolicy};
use crate::exec;
use crate::powerflow::ScenarioParams;
use crate::rng::{child_seed, tag};
use crate::snfg::{run_episode_with, AttackerAgent, AttackerMemory, AttackerPresence, DefenderAgent, DefenderMemory, EngineError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no episode produced any learner decision, cannot estimate values")]
    NoData,
    #[error("cannot train a level-{0} player, levels start at 1")]
    InvalidLevel(usize),
    #[error("bad training config: {0}")]
    InvalidConfig(String),
}

/// One learner decision and the reward that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub key: StateKey,
    pub action: usize,
    pub n_actions: usize,
    pub reward: f64,
}

/// Anything the Monte Carlo trainer can run episodes against.
///
/// `rollout` plays one episode, choosing the learner's moves from `policy`
/// softened by the `exploration` floor (with that probability the move is
/// uniform), and returns the learner's decisions in step order. An episode
/// in which the learner never acts returns an empty trace and contributes
/// nothing to the round.
pub trait Environment: Sync {
    fn rollout(&self, policy: &TabularPolicy, exploration: f64, episode_seed: u64) -> Result<Vec<Transition>, TrainError>;
}

/// Per-state running sums of returns, one slot per move.
#[derive(Debug, Clone, PartialEq)]
pub struct QCell {
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
}

impl QCell {
    fn new(n_actions: usize) -> Self {
        Self {
            sums: vec![0.0; n_actions],
            counts: vec![0; n_actions],
        }
    }

    pub fn visits(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Every-visit action-value estimates from one evaluation round.
#[derive(Debug, Clone)]
pub struct QTable {
    pub cells: HashMap<StateKey, QCell>,
    /// Mean reward per learner step over all episodes with data; the
    /// convergence signal.
    pub mean_step_reward: f64,
    pub episodes_with_data: usize,
}

/// Plays one batch of episodes and accumulates suffix-mean returns.
///
/// The return credited to the decision at step `t` of an `N`-step trace is
/// the mean of the rewards from `t` onward, `(sum of r_t..r_{N-1}) / (N-t)`,
/// the undiscounted average-reward analogue of a Monte Carlo return.
pub fn evaluate_policy_core<E: Environment>(
    env: &E,
    policy: &TabularPolicy,
    exploration: f64,
    episode_seeds: &[u64],
) -> Result<QTable, TrainError> {
    let traces = exec::map_indexed(episode_seeds.len(), |i| env.rollout(policy, exploration, episode_seeds[i]));

    let mut cells: HashMap<StateKey, QCell> = HashMap::new();
    let mut reward_sum = 0.0;
    let mut step_count = 0usize;
    let mut episodes_with_data = 0usize;
    for trace in traces {
        let trace = trace?;
        if trace.is_empty() {
            continue;
        }
        episodes_with_data += 1;
        let n = trace.len();
        let mut suffix = 0.0;
        for t in (0..n).rev() {
            let tr = &trace[t];
            suffix += tr.reward;
            let g = suffix / (n - t) as f64;
            let cell = cells.entry(tr.key.clone()).or_insert_with(|| QCell::new(tr.n_actions));
            if cell.sums.len() != tr.n_actions {
                return Err(EngineError::CodecMismatch {
                    stored: cell.sums.len(),
                    actual: tr.n_actions,
                }
                .into());
            }
            cell.sums[tr.action] += g;
            cell.counts[tr.action] += 1;
        }
        reward_sum += trace.iter().map(|tr| tr.reward).sum::<f64>();
        step_count += n;
    }
    if episodes_with_data == 0 {
        return Err(TrainError::NoData);
    }
    Ok(QTable {
        cells,
        mean_step_reward: reward_sum / step_count as f64,
        episodes_with_data,
    })
}

/// Blends every estimated state one step toward its greedy move.
///
/// The greedy move is the argmax of the estimated values over moves that
/// were actually tried this round (ties to the lowest index); untried moves
/// cannot win. States absent from the policy start from uniform.
pub fn improve_policy(policy: &mut TabularPolicy, q: &QTable, step: f64) {
    for (key, cell) in &q.cells {
        let n = cell.sums.len();
        let mut best: Option<(usize, f64)> = None;
        for a in 0..n {
            if cell.counts[a] == 0 {
                continue;
            }
            let qhat = cell.sums[a] / cell.counts[a] as f64;
            if best.map_or(true, |(_, bq)| qhat > bq) {
                best = Some((a, qhat));
            }
        }
        let Some((greedy, _)) = best else { continue };
        let old: Vec<f64> = match policy.distribution(key) {
            Some(d) => d.to_vec(),
            None => vec![1.0 / n as f64; n],
        };
        let mut next: Vec<f64> = old.iter().map(|p| (1.0 - step) * p).collect();
        next[greedy] += step;
        policy.set_distribution(key.clone(), next);
    }
}

/// Hyperparameters for one policy training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Episodes per evaluation round; the same seeds are reused each round.
    pub episodes_per_round: usize,
    pub steps_per_episode: usize,
    /// Fraction of probability mass moved to the greedy move per round.
    pub improvement_step: f64,
    /// Stop when the 3-round moving average moves less than this.
    pub tolerance: f64,
    pub max_rounds: usize,
    /// Table entries visited fewer times than this across the whole
    /// training are dropped, leaving those states to the level-0 fallback.
    pub visit_threshold: u64,
    /// Probability that a training-time move is uniform instead of drawn
    /// from the policy, keeping value estimates alive for every move.
    pub exploration: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes_per_round: 2000,
            steps_per_episode: 100,
            improvement_step: 0.3,
            tolerance: 1e-3,
            max_rounds: 40,
            visit_threshold: 20,
            exploration: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.episodes_per_round == 0 || self.steps_per_episode == 0 || self.max_rounds == 0 {
            return Err(TrainError::InvalidConfig(
                "episodes_per_round, steps_per_episode and max_rounds must be positive".to_string(),
            ));
        }
        if !(self.improvement_step > 0.0 && self.improvement_step <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "improvement_step must be in (0, 1], got {}",
                self.improvement_step
            )));
        }
        if !(0.0..1.0).contains(&self.exploration) {
            return Err(TrainError::InvalidConfig(format!(
                "exploration must be in [0, 1), got {}",
                self.exploration
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(TrainError::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// One evaluation round's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub mean_step_reward: f64,
    /// 3-round moving average, present from the third round on.
    pub moving_average: Option<f64>,
    /// Table size after this round's evaluation (before improvement).
    pub table_states: usize,
    pub episodes_with_data: usize,
}

/// A finished training.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub policy: TabularPolicy,
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
    /// Which round's policy was kept: the last on convergence, otherwise
    /// the best-scoring one.
    pub selected_round: usize,
    /// Entries dropped by the visit-count floor.
    pub fallback_pruned: usize,
}

/// Runs Monte Carlo policy iteration against `env` until the evaluation
/// score settles or the round budget is exhausted.
pub fn train_policy_core<E: Environment>(
    env: &E,
    player: PlayerKind,
    codec: StateCodec,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let episode_seeds: Vec<u64> = (0..config.episodes_per_round)
        .map(|i| child_seed(seed, tag::EVAL, i as u64))
        .collect();

    let mut policy = TabularPolicy::new(player, codec);
    let mut rounds: Vec<RoundStats> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut best: Option<(usize, f64, TabularPolicy)> = None;
    let mut converged = false;
    let mut selected_round = 0;

    for round in 0..config.max_rounds {
        let q = evaluate_policy_core(env, &policy, config.exploration, &episode_seeds)?;
        for (key, cell) in &q.cells {
            policy.add_visits(key, cell.visits());
        }
        scores.push(q.mean_step_reward);
        let ma = moving_average(&scores, 3);
        rounds.push(RoundStats {
            round,
            mean_step_reward: q.mean_step_reward,
            moving_average: ma,
            table_states: policy.len(),
            episodes_with_data: q.episodes_with_data,
        });

        if best.as_ref().map_or(true, |(_, bv, _)| q.mean_step_reward > *bv) {
            best = Some((round, q.mean_step_reward, policy.clone()));
        }

        if let (Some(cur), Some(prev)) = (ma, moving_average(&scores[..scores.len() - 1], 3)) {
            if (cur - prev).abs() < config.tolerance {
                converged = true;
                selected_round = round;
                break;
            }
        }
        if round + 1 == config.max_rounds {
            break;
        }
        improve_policy(&mut policy, &q, config.improvement_step);
    }

    if !converged {
        let (round, _, best_policy) = best.expect("at least one round ran");
        policy = best_policy;
        selected_round = round;
    }
    let fallback_pruned = policy.retain_min_visits(config.visit_threshold);
    Ok(TrainResult {
        policy,
        rounds,
        converged,
        selected_round,
        fallback_pruned,
    })
}

fn moving_average(scores: &[f64], window: usize) -> Option<f64> {
    if scores.len() < window {
        return None;
    }
    let tail = &scores[scores.len() - window..];
    Some(tail.iter().sum::<f64>() / window as f64)
}

/// Writes per-round training statistics as CSV.
pub fn write_training_log<P: AsRef<Path>>(path: P, rounds: &[RoundStats]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "mean_step_reward", "moving_average", "table_states", "episodes_with_data"])?;
    for r in rounds {
        w.write_record(&[
            r.round.to_string(),
            r.mean_step_reward.to_string(),
            r.moving_average.map_or(String::new(), |v| v.to_string()),
            r.table_states.to_string(),
            r.episodes_with_data.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn explore_or_sample(policy: &TabularPolicy, key: &StateKey, n_actions: usize, exploration: f64, rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
    // Exactly two draws per decision, so the episode's remaining stream
    // does not shift as the policy table changes between rounds.
    let gate = rng.gen::<f64>();
    let u = rng.gen::<f64>();
    let uniform = ((u * n_actions as f64) as usize).min(n_actions - 1);
    if gate < exploration {
        return Ok(uniform);
    }
    Ok(policy.sample_with(key, n_actions, u)?.unwrap_or(uniform))
}

/// Defender agent that plays the learner policy with an exploration floor
/// and records its decisions for return estimation.
struct RecordingDefender<'p> {
    policy: &'p TabularPolicy,
    params: ScenarioParams,
    exploration: f64,
    trace: Vec<(StateKey, usize, usize)>,
}

impl DefenderAgent for RecordingDefender<'_> {
    fn decide(&mut self, memory: &DefenderMemory, move_space: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        let key = self.policy.codec().encode_defender(memory, &self.params);
        let action = explore_or_sample(self.policy, &key, move_space.len(), self.exploration, rng)?;
        self.trace.push((key, action, move_space.len()));
        Ok(action)
    }
}

struct RecordingAttacker<'p> {
    policy: &'p TabularPolicy,
    params: ScenarioParams,
    exploration: f64,
    trace: Vec<(StateKey, usize, usize)>,
}

impl AttackerAgent for RecordingAttacker<'_> {
    fn decide(&mut self, memory: &AttackerMemory, _q3_index: usize, move_space: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        let key = self.policy.codec().encode_attacker(memory, &self.params);
        let action = explore_or_sample(self.policy, &key, move_space.len(), self.exploration, rng)?;
        self.trace.push((key, action, move_space.len()));
        Ok(action)
    }
}

fn zip_rewards(trace: Vec<(StateKey, usize, usize)>, rewards: impl Iterator<Item = f64>) -> Vec<Transition> {
    trace
        .into_iter()
        .zip(rewards)
        .map(|((key, action, n_actions), reward)| Transition {
            key,
            action,
            n_actions,
            reward,
        })
        .collect()
}

/// Training environment with the defender as the learner. The opponent is a
/// frozen attacker policy, or the level-0 attacker when `opponent` is none.
pub struct DefenderSideEnv<'p> {
    pub params: ScenarioParams,
    pub presence: AttackerPresence,
    pub opponent: Option<&'p TabularPolicy>,
    pub n_steps: usize,
}

impl Environment for DefenderSideEnv<'_> {
    fn rollout(&self, policy: &TabularPolicy, exploration: f64, episode_seed: u64) -> Result<Vec<Transition>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let mut learner = RecordingDefender {
            policy,
            params: self.params,
            exploration,
            trace: Vec::with_capacity(self.n_steps),
        };
        let records = match self.opponent {
            None => {
                let mut opp = Level0Attacker::new(&self.params);
                run_episode_with(&self.params, self.presence, &mut learner, &mut opp, self.n_steps, &mut rng)?
            }
            Some(attacker) => {
                let mut opp = TabularAttacker::new(attacker, &self.params);
                run_episode_with(&self.params, self.presence, &mut learner, &mut opp, self.n_steps, &mut rng)?
            }
        };
        debug_assert_eq!(learner.trace.len(), records.len());
        Ok(zip_rewards(learner.trace, records.iter().map(|r| r.r_d)))
    }
}

/// Training environment with the attacker as the learner. Episodes where
/// the attacker never materializes produce empty traces.
pub struct AttackerSideEnv<'p> {
    pub params: ScenarioParams,
    pub presence: AttackerPresence,
    pub opponent: Option<&'p TabularPolicy>,
    pub n_steps: usize,
}

impl Environment for AttackerSideEnv<'_> {
    fn rollout(&self, policy: &TabularPolicy, exploration: f64, episode_seed: u64) -> Result<Vec<Transition>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let mut learner = RecordingAttacker {
            policy,
            params: self.params,
            exploration,
            trace: Vec::with_capacity(self.n_steps),
        };
        let records = match self.opponent {
            None => {
                let mut opp = Level0Defender::new(&self.params);
                run_episode_with(&self.params, self.presence, &mut opp, &mut learner, self.n_steps, &mut rng)?
            }
            Some(defender) => {
                let mut opp = TabularDefender::new(defender, &self.params);
                run_episode_with(&self.params, self.presence, &mut opp, &mut learner, self.n_steps, &mut rng)?
            }
        };
        if learner.trace.is_empty() {
            return Ok(Vec::new());
        }
        debug_assert_eq!(learner.trace.len(), records.len());
        Ok(zip_rewards(learner.trace, records.iter().map(|r| r.r_a)))
    }
}

/// One rung of a level-k training ladder.
#[derive(Debug)]
pub struct LadderStage {
    pub player: PlayerKind,
    pub level: usize,
    pub result: TrainResult,
}

/// A trained level-k player together with the opponents built on the way.
#[derive(Debug)]
pub struct LevelKOutcome {
    /// Trainings in the order they ran; the last one is the target.
    pub stages: Vec<LadderStage>,
}

impl LevelKOutcome {
    pub fn target(&self) -> &LadderStage {
        self.stages.last().expect("ladder has at least one stage")
    }

    pub fn all_converged(&self) -> bool {
        self.stages.iter().all(|s| s.result.converged)
    }
}

fn other(player: PlayerKind) -> PlayerKind {
    match player {
        PlayerKind::Defender => PlayerKind::Attacker,
        PlayerKind::Attacker => PlayerKind::Defender,
    }
}

/// Trains a level-`level` player by recursion: a level-k player best
/// responds to the opponent's level-(k-1) player, grounded in the level-0
/// heuristics. Both sides of the ladder train under attacker presence
/// probability `train_p` with seeds derived from `seed` by rung, so the
/// whole ladder is reproducible from one number.
pub fn train_level_k(
    params: &ScenarioParams,
    codec: StateCodec,
    player: PlayerKind,
    level: usize,
    train_p: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<LevelKOutcome, TrainError> {
    if level == 0 {
        return Err(TrainError::InvalidLevel(0));
    }
    let mut stages = Vec::new();
    build_ladder(params, codec, player, level, train_p, config, seed, &mut stages)?;
    Ok(LevelKOutcome { stages })
}

#[allow(clippy::too_many_arguments)]
fn build_ladder(
    params: &ScenarioParams,
    codec: StateCodec,
    player: PlayerKind,
    level: usize,
    train_p: f64,
    config: &TrainConfig,
    seed: u64,
    stages: &mut Vec<LadderStage>,
) -> Result<Option<usize>, TrainError> {
    if level == 0 {
        return Ok(None);
    }
    let opponent_idx = build_ladder(params, codec, other(player), level - 1, train_p, config, seed, stages)?;
    let opponent = opponent_idx.map(|i| stages[i].result.policy.clone());
    let rung = 2 * level as u64
        + match player {
            PlayerKind::Defender => 0,
            PlayerKind::Attacker => 1,
        };
    let stage_seed = child_seed(seed, tag::TRAIN, rung);
    let presence = AttackerPresence::Bernoulli(train_p);
    let result = match player {
        PlayerKind::Defender => {
            let env = DefenderSideEnv {
                params: *params,
                presence,
                opponent: opponent.as_ref(),
                n_steps: config.steps_per_episode,
            };
            train_policy_core(&env, player, codec, config, stage_seed)?
        }
        PlayerKind::Attacker => {
            let env = AttackerSideEnv {
                params: *params,
                presence,
                opponent: opponent.as_ref(),
                n_steps: config.steps_per_episode,
            };
            train_policy_core(&env, player, codec, config, stage_seed)?
        }
    };
    stages.push(LadderStage { player, level, result });
    Ok(Some(stages.len() - 1))
}
