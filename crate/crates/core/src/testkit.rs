//! A tiny chain MDP with closed-form answers, used to validate the Monte
//! Carlo trainer against exact dynamic programming.
//!
//! States sit on a line and the walker starts at 0. `walk` advances one
//! state with probability `walk_prob` and is free; `jump` advances
//! `jump_len` states surely but costs `jump_cost`. Landing on (or holding)
//! the last state pays 1 per step. Everything the trainer estimates by
//! sampling has an exact counterpart here: occupancies, mean step reward,
//! and even the expected value of the trainer's own suffix-mean estimator,
//! so agreement can be asserted to statistical precision instead of
//! eyeballed.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{StateKey, TabularPolicy};
use crate::learning::{explore_or_sample, Environment, TrainError, Transition};

#[derive(Debug, Clone, Copy)]
pub struct ToyChain {
    pub n_states: usize,
    /// Steps per episode.
    pub horizon: usize,
    /// Chance that `walk` actually advances.
    pub walk_prob: f64,
    pub jump_len: usize,
    pub jump_cost: f64,
}

impl Default for ToyChain {
    fn default() -> Self {
        Self {
            n_states: 6,
            horizon: 10,
            walk_prob: 0.5,
            jump_len: 2,
            jump_cost: 0.25,
        }
    }
}

pub const WALK: usize = 0;
pub const JUMP: usize = 1;

impl ToyChain {
    pub fn key(state: usize) -> StateKey {
        StateKey(vec![state as i32])
    }

    fn arrival(&self, state: usize) -> f64 {
        if state == self.n_states - 1 {
            1.0
        } else {
            0.0
        }
    }

    /// Exact outcome distribution of one action: `(probability, next
    /// state, reward)` rows summing to probability 1.
    pub fn transition(&self, state: usize, action: usize) -> Vec<(f64, usize, f64)> {
        let last = self.n_states - 1;
        match action {
            WALK => {
                let fwd = (state + 1).min(last);
                if fwd == state {
                    vec![(1.0, state, self.arrival(state))]
                } else {
                    vec![
                        (self.walk_prob, fwd, self.arrival(fwd)),
                        (1.0 - self.walk_prob, state, self.arrival(state)),
                    ]
                }
            }
            JUMP => {
                let to = (state + self.jump_len).min(last);
                vec![(1.0, to, self.arrival(to) - self.jump_cost)]
            }
            _ => panic!("chain has two actions"),
        }
    }

    fn mean_reward(&self, state: usize, action: usize) -> f64 {
        self.transition(state, action).iter().map(|(p, _, r)| p * r).sum()
    }

    /// Per-state action probabilities the trainer's behavior actually
    /// follows: the exploration floor mixed with the policy, and uniform
    /// where the table has no entry.
    pub fn behavior_matrix(&self, policy: &TabularPolicy, exploration: f64) -> Vec<[f64; 2]> {
        (0..self.n_states)
            .map(|s| match policy.distribution(&Self::key(s)) {
                Some(d) => {
                    let mix = |p: f64| exploration * 0.5 + (1.0 - exploration) * p;
                    [mix(d[0]), mix(d[1])]
                }
                None => [0.5, 0.5],
            })
            .collect()
    }

    /// State occupancy at each decision step under a behavior matrix,
    /// starting from state 0.
    fn occupancies(&self, behavior: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let s_n = self.n_states;
        let mut mu = vec![0.0; s_n];
        mu[0] = 1.0;
        let mut all = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            all.push(mu.clone());
            let mut next = vec![0.0; s_n];
            for s in 0..s_n {
                if mu[s] == 0.0 {
                    continue;
                }
                for a in 0..2 {
                    let w = mu[s] * behavior[s][a];
                    if w == 0.0 {
                        continue;
                    }
                    for (p, s2, _) in self.transition(s, a) {
                        next[s2] += w * p;
                    }
                }
            }
            mu = next;
        }
        all
    }

    /// Exact expected mean-per-step reward of one episode under a behavior
    /// matrix; the quantity the trainer reports per round.
    pub fn exact_mean_step_reward(&self, behavior: &[[f64; 2]]) -> f64 {
        let occupancies = self.occupancies(behavior);
        let mut total = 0.0;
        for mu in &occupancies {
            for s in 0..self.n_states {
                for a in 0..2 {
                    total += mu[s] * behavior[s][a] * self.mean_reward(s, a);
                }
            }
        }
        total / self.horizon as f64
    }

    /// Exact expectation of the trainer's every-visit suffix-mean estimate
    /// for each state-action, weighted by when visits happen, along with
    /// the expected visit mass. Pairs with zero mass are omitted.
    pub fn exact_q_estimates(&self, behavior: &[[f64; 2]]) -> HashMap<(usize, usize), f64> {
        let s_n = self.n_states;
        let t_n = self.horizon;
        let occupancies = self.occupancies(behavior);

        // r_b[s]: expected one-step behavior reward from s.
        let r_b: Vec<f64> = (0..s_n)
            .map(|s| (0..2).map(|a| behavior[s][a] * self.mean_reward(s, a)).sum())
            .collect();

        // m[j][s]: expected behavior reward j steps after standing in s.
        // c[j][s]: partial sums of m over 0..=j.
        let mut m = vec![r_b.clone()];
        for j in 1..t_n.max(1) {
            let prev = &m[j - 1];
            let mut row = vec![0.0; s_n];
            for s in 0..s_n {
                for a in 0..2 {
                    let w = behavior[s][a];
                    if w == 0.0 {
                        continue;
                    }
                    for (p, s2, _) in self.transition(s, a) {
                        row[s] += w * p * prev[s2];
                    }
                }
            }
            m.push(row);
        }
        let mut c = m.clone();
        for j in 1..c.len() {
            for s in 0..s_n {
                c[j][s] = c[j - 1][s] + m[j][s];
            }
        }

        let mut weighted: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
        for (t, mu) in occupancies.iter().enumerate() {
            let remaining = t_n - t;
            for s in 0..s_n {
                for a in 0..2 {
                    let w = mu[s] * behavior[s][a];
                    if w == 0.0 {
                        continue;
                    }
                    // E[G_t | s_t = s, a_t = a]: this step's reward plus
                    // the behavior rewards of the remaining steps, averaged.
                    let mut future = 0.0;
                    if remaining > 1 {
                        for (p, s2, _) in self.transition(s, a) {
                            future += p * c[remaining - 2][s2];
                        }
                    }
                    let g = (self.mean_reward(s, a) + future) / remaining as f64;
                    let cell = weighted.entry((s, a)).or_insert((0.0, 0.0));
                    cell.0 += w * g;
                    cell.1 += w;
                }
            }
        }
        weighted.into_iter().map(|(k, (num, den))| (k, num / den)).collect()
    }

    /// Best stationary deterministic policy by full enumeration, as
    /// `(action per state, exact score)`.
    pub fn enumerate_best_stationary(&self) -> (Vec<usize>, f64) {
        let s_n = self.n_states;
        let mut best: Option<(Vec<usize>, f64)> = None;
        for mask in 0..(1usize << s_n) {
            let actions: Vec<usize> = (0..s_n).map(|s| (mask >> s) & 1).collect();
            let behavior: Vec<[f64; 2]> = actions
                .iter()
                .map(|&a| if a == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect();
            let score = self.exact_mean_step_reward(&behavior);
            if best.as_ref().map_or(true, |(_, b)| score > *b) {
                best = Some((actions, score));
            }
        }
        best.unwrap()
    }
}

impl Environment for ToyChain {
    fn rollout(&self, policy: &TabularPolicy, exploration: f64, episode_seed: u64) -> Result<Vec<Transition>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let mut state = 0usize;
        let mut trace = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let key = Self::key(state);
            let action = explore_or_sample(policy, &key, 2, exploration, &mut rng)?;
            let (next, reward) = match action {
                WALK => {
                    let fwd = (state + 1).min(self.n_states - 1);
                    let next = if fwd != state && rng.gen::<f64>() < self.walk_prob { fwd } else { state };
                    (next, self.arrival(next))
                }
                _ => {
                    let to = (state + self.jump_len).min(self.n_states - 1);
                    (to, self.arrival(to) - self.jump_cost)
                }
            };
            trace.push(Transition {
                key,
                action,
                n_actions: 2,
                reward,
            });
            state = next;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{PlayerKind, StateCodec};
    use crate::learning::{evaluate_policy_core, train_policy_core, TrainConfig};
    use crate::rng::{child_seed, tag};

    #[test]
    fn transitions_are_distributions() {
        let chain = ToyChain::default();
        for s in 0..chain.n_states {
            for a in 0..2 {
                let rows = chain.transition(s, a);
                let total: f64 = rows.iter().map(|(p, _, _)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        // Spot values: jumping from 3 lands on the last state for 0.75.
        assert_eq!(chain.transition(3, JUMP), vec![(1.0, 5, 0.75)]);
        // Walking on the last state holds it for a full point.
        assert_eq!(chain.transition(5, WALK), vec![(1.0, 5, 1.0)]);
    }

    #[test]
    fn exact_score_matches_hand_computation() {
        // Two states, two steps, all-walk: step 0 pays 0.5 in expectation,
        // step 1 pays 0.5 * 0.5 + 0.5 * 1 = 0.75, so the mean is 0.625.
        let chain = ToyChain {
            n_states: 2,
            horizon: 2,
            walk_prob: 0.5,
            jump_len: 2,
            jump_cost: 0.25,
        };
        let behavior = vec![[1.0, 0.0], [1.0, 0.0]];
        assert!((chain.exact_mean_step_reward(&behavior) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_q_estimate_tiny_case() {
        // Same two-state chain, all-walk. For (s=1, walk): visits at t=1
        // only (mass 0.5), G_1 = 1. For (s=0, walk) visits at t=0 (mass 1)
        // with G_0 = (0.5 + 0.75) / 2 = 0.625 and at t=1 (mass 0.5) with
        // G_1 = 0.5, so E = (1 * 0.625 + 0.5 * 0.5) / 1.5.
        let chain = ToyChain {
            n_states: 2,
            horizon: 2,
            walk_prob: 0.5,
            jump_len: 2,
            jump_cost: 0.25,
        };
        let behavior = vec![[1.0, 0.0], [1.0, 0.0]];
        let q = chain.exact_q_estimates(&behavior);
        assert!((q[&(1, WALK)] - 1.0).abs() < 1e-12);
        let expect = (0.625 + 0.25) / 1.5;
        assert!((q[&(0, WALK)] - expect).abs() < 1e-12);
        assert!(!q.contains_key(&(0, JUMP)));
    }

    #[test]
    fn sampled_q_estimates_agree_with_the_oracle() {
        let chain = ToyChain::default();
        let policy = TabularPolicy::new(PlayerKind::Defender, StateCodec::default());
        let seeds: Vec<u64> = (0..20_000).map(|i| child_seed(404, tag::EVAL, i)).collect();
        let q = evaluate_policy_core(&chain, &policy, 0.0, &seeds).unwrap();

        let behavior = chain.behavior_matrix(&policy, 0.0);
        let oracle = chain.exact_q_estimates(&behavior);
        assert!((q.mean_step_reward - chain.exact_mean_step_reward(&behavior)).abs() < 5e-3);

        let mut checked = 0;
        for ((s, a), expect) in &oracle {
            let cell = &q.cells[&ToyChain::key(*s)];
            if cell.counts[*a] < 2_000 {
                continue; // skip thin cells, their noise floor is higher
            }
            let got = cell.sums[*a] / cell.counts[*a] as f64;
            assert!(
                (got - expect).abs() < 3e-2,
                "state {s} action {a}: sampled {got}, exact {expect}"
            );
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} cells had enough visits");
    }

    #[test]
    fn training_reaches_the_enumerated_optimum() {
        let chain = ToyChain::default();
        let (_, best_score) = chain.enumerate_best_stationary();
        let config = TrainConfig {
            episodes_per_round: 2_000,
            steps_per_episode: chain.horizon,
            max_rounds: 25,
            ..TrainConfig::default()
        };
        let result = train_policy_core(&chain, PlayerKind::Defender, StateCodec::default(), &config, 2024).unwrap();
        let score = chain.exact_mean_step_reward(&chain.behavior_matrix(&result.policy, 0.0));
        assert!(
            score >= best_score - 0.05,
            "trained {score} vs optimum {best_score} (converged: {})",
            result.converged
        );
    }
}
