//! The iterated semi network-form game engine.
//!
//! One episode is a fixed-length sequence of simultaneous-move steps between
//! the tap-changing defender and the reactive-injection attacker. Attacker
//! existence is sampled once per episode; an absent attacker's decision node
//! is disabled and `q3` holds. Each step runs the same pipeline:
//!
//! 1. draw this step's load,
//! 2. both players observe the previous step's solved state (binned, with an
//!    optional noise hook),
//! 3. both update their scalar memory statistics from the last two solved
//!    states,
//! 4. both select moves simultaneously from their memories,
//! 5. the moves are applied and the flows re-solved,
//! 6. rewards are scored on the post-move voltages.
//!
//! Every random draw comes from the single episode stream passed in, in a
//! fixed order, so an episode is a pure function of (params, seed).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::powerflow::{attacker_reward, defender_reward, solve_flows, FlowSolution, ScenarioParams};

/// Sign with sign(0) = 0. `f64::signum` maps 0.0 to 1.0, which would let a
/// held tap pollute the memory statistics.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Draws whether the attacker exists for an episode. Exactly one uniform is
/// consumed regardless of `p`, keeping downstream draws aligned across
/// protocols.
pub fn sample_attacker_existence(p: f64, rng: &mut ChaCha8Rng) -> bool {
    rng.gen::<f64>() < p
}

/// Draws one step's load: `p2` uniform on `[p2_min, p2_max]`, `q2` at the
/// fixed power-factor ratio. Degenerate bounds collapse to a point draw.
pub fn sample_load(params: &ScenarioParams, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u = rng.gen::<f64>();
    let p2 = params.p2_min + u * (params.p2_max - params.p2_min);
    (p2, params.q2_ratio * p2)
}

/// The defender's candidate tap targets: one step up, hold, one step down,
/// clamped to the regulation range. Duplicates from clamping collapse, so at
/// a rail the space has two entries instead of three. Order is fixed
/// (up candidate first) because policy vectors index into it.
pub fn defender_move_space(v1: f64, params: &ScenarioParams) -> Vec<f64> {
    let up = params.v_max.min(v1 + params.delta_v);
    let down = params.v_min.max(v1 - params.delta_v);
    let mut space = vec![up, v1, down];
    space.dedup();
    space
}

/// The attacker's `n_attacker_levels` reactive settings, equally spaced and
/// symmetric on `[-p3_max, p3_max]`. Odd level counts keep 0 as a setting.
pub fn attacker_move_space(params: &ScenarioParams) -> Vec<f64> {
    let n = params.n_attacker_levels;
    (0..n)
        .map(|i| params.p3_max * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
        .collect()
}

/// Index of the 0.0 setting, the episode-start `q3`.
pub fn neutral_q3_index(params: &ScenarioParams) -> usize {
    (params.n_attacker_levels - 1) / 2
}

/// Defender memory statistic: leaky accumulator of the co-movement of the
/// controlled voltage `V1` and the far-end voltage `V3`. Drops toward zero
/// with rate `1/n` and is bounded by `n` in magnitude.
pub fn update_defender_statistic(m: f64, v1_now: f64, v1_prev: f64, v3_now: f64, v3_prev: f64, n: u32) -> f64 {
    (1.0 - 1.0 / n as f64) * m + sign(v1_now - v1_prev) * sign(v3_now - v3_prev)
}

/// Attacker memory statistic: leaky accumulator of the sign of the `V3`
/// change left after removing the attacker's own contribution, quantized at
/// the tap step. A residual at least one tap step up counts +1; any negative
/// residual counts -1 (floor is asymmetric by construction).
pub fn update_attacker_statistic(m: f64, v3_now: f64, v3_prev: f64, q3_now: f64, q3_prev: f64, params: &ScenarioParams) -> f64 {
    let residual = (v3_now - v3_prev) - (q3_now - q3_prev) * params.x2;
    let c = sign((residual / params.delta_v).floor());
    (1.0 - 1.0 / params.n_memory as f64) * m + c
}

/// Defender move identifier: the direction actually taken. At a rail the
/// clamped candidate equals hold, and the identifier reflects that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TapMove {
    Up,
    Hold,
    Down,
}

impl TapMove {
    /// Signed direction: +1 up, 0 hold, -1 down.
    pub fn delta(self) -> i32 {
        match self {
            TapMove::Up => 1,
            TapMove::Hold => 0,
            TapMove::Down => -1,
        }
    }

    /// Stable small code for state keys: Up 0, Hold 1, Down 2.
    pub fn code(self) -> i32 {
        match self {
            TapMove::Up => 0,
            TapMove::Hold => 1,
            TapMove::Down => 2,
        }
    }
}

fn direction_of(target: f64, v1: f64) -> TapMove {
    if target > v1 {
        TapMove::Up
    } else if target < v1 {
        TapMove::Down
    } else {
        TapMove::Hold
    }
}

/// Round-to-nearest bin index.
pub fn bin_value(v: f64, width: f64) -> i32 {
    (v / width).round() as i32
}

/// What the defender sees each step: binned voltages at all three nodes and
/// the binned head-end flows, from the previous solved state. Fields are bin
/// indices; multiply by the configured widths to recover per-unit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefenderObservation {
    pub v1: i32,
    pub v2: i32,
    pub v3: i32,
    pub p1: i32,
    pub q1: i32,
}

/// What the attacker sees each step: binned voltages at his own and the load
/// node, plus the generator operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackerObservation {
    pub v2: i32,
    pub v3: i32,
    pub p3: i32,
    pub q3: i32,
}

impl DefenderObservation {
    pub fn v1_value(&self, params: &ScenarioParams) -> f64 {
        self.v1 as f64 * params.voltage_bin
    }
    pub fn v2_value(&self, params: &ScenarioParams) -> f64 {
        self.v2 as f64 * params.voltage_bin
    }
    pub fn v3_value(&self, params: &ScenarioParams) -> f64 {
        self.v3 as f64 * params.voltage_bin
    }
}

impl AttackerObservation {
    pub fn v2_value(&self, params: &ScenarioParams) -> f64 {
        self.v2 as f64 * params.voltage_bin
    }
    pub fn v3_value(&self, params: &ScenarioParams) -> f64 {
        self.v3 as f64 * params.voltage_bin
    }
}

fn noisy(v: f64, params: &ScenarioParams, rng: &mut ChaCha8Rng) -> f64 {
    if params.obs_noise > 0.0 {
        v + (rng.gen::<f64>() * 2.0 - 1.0) * params.obs_noise
    } else {
        v
    }
}

/// Bins the defender's view of a solved state.
pub fn observe_defender(state: &GridState, params: &ScenarioParams, rng: &mut ChaCha8Rng) -> DefenderObservation {
    DefenderObservation {
        v1: bin_value(noisy(state.flows.v1, params, rng), params.voltage_bin),
        v2: bin_value(noisy(state.flows.v2, params, rng), params.voltage_bin),
        v3: bin_value(noisy(state.flows.v3, params, rng), params.voltage_bin),
        p1: bin_value(noisy(state.flows.p1, params, rng), params.flow_bin),
        q1: bin_value(noisy(state.flows.q1, params, rng), params.flow_bin),
    }
}

/// Bins the attacker's view of a solved state.
pub fn observe_attacker(state: &GridState, params: &ScenarioParams, rng: &mut ChaCha8Rng) -> AttackerObservation {
    AttackerObservation {
        v2: bin_value(noisy(state.flows.v2, params, rng), params.voltage_bin),
        v3: bin_value(noisy(state.flows.v3, params, rng), params.voltage_bin),
        p3: bin_value(params.p3, params.flow_bin),
        q3: bin_value(state.q3, params.flow_bin),
    }
}

/// One player's decision context: the binned observation, the player's own
/// previous move, and the scalar memory statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerMemory<O, M> {
    pub observation: O,
    pub previous_move: M,
    pub statistic: f64,
}

pub type DefenderMemory = PlayerMemory<DefenderObservation, TapMove>;
pub type AttackerMemory = PlayerMemory<AttackerObservation, usize>;

/// Complete physical state after one step's moves were applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub step_index: usize,
    /// Substation tap voltage, per unit.
    pub v1: f64,
    /// Node-2 load draw this step.
    pub p2: f64,
    pub q2: f64,
    /// Attacker's reactive setting and its index in the move space.
    pub q3: f64,
    pub q3_index: usize,
    pub flows: FlowSolution,
}

/// One row of an episode: post-move state, both move identifiers, both
/// rewards, and whether the attacker was present. With the attacker absent,
/// `attacker_move` is the hold (current `q3` index) and `q3` is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: GridState,
    pub defender_move: TapMove,
    pub attacker_move: usize,
    pub r_d: f64,
    pub r_a: f64,
    pub attacker_present: bool,
}

/// Attacker existence protocol. `Bernoulli(p)` draws once per episode;
/// `FromStep(k)` forces absence before step `k` and presence from it on
/// (the mid-run entry used by the attack-at-step protocol).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackerPresence {
    Bernoulli(f64),
    FromStep(usize),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("policy distribution has {stored} entries but the move space has {actual}; the policy's discretization does not match this scenario")]
    CodecMismatch { stored: usize, actual: usize },
    #[error("agent chose move {index} outside a move space of {len}")]
    MoveOutOfRange { index: usize, len: usize },
}

/// A defender decision rule. `decide` returns an index into `move_space`.
pub trait DefenderAgent {
    fn decide(&mut self, memory: &DefenderMemory, move_space: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EngineError>;
}

/// An attacker decision rule. `decide` returns an index into `move_space`
/// (absolute settings, not offsets); `q3_index` is the current setting.
pub trait AttackerAgent {
    fn decide(&mut self, memory: &AttackerMemory, q3_index: usize, move_space: &[f64], rng: &mut ChaCha8Rng)
        -> Result<usize, EngineError>;
}

fn make_state(step_index: usize, v1: f64, p2: f64, q2: f64, q3_index: usize, space: &[f64], params: &ScenarioParams) -> GridState {
    let q3 = space[q3_index];
    GridState {
        step_index,
        v1,
        p2,
        q2,
        q3,
        q3_index,
        flows: solve_flows(v1, p2, q2, params.p3, q3, params),
    }
}

/// Runs one episode under an explicit presence protocol.
pub fn run_episode_with<D: DefenderAgent, A: AttackerAgent>(
    params: &ScenarioParams,
    presence: AttackerPresence,
    defender: &mut D,
    attacker: &mut A,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepRecord>, EngineError> {
    let a_space = attacker_move_space(params);
    let exists = match presence {
        AttackerPresence::Bernoulli(p) => sample_attacker_existence(p, rng),
        AttackerPresence::FromStep(_) => false,
    };

    let (p2, q2) = sample_load(params, rng);
    let mut cur = make_state(0, params.v1_init, p2, q2, neutral_q3_index(params), &a_space, params);
    // The pre-episode state doubles as its own predecessor: step-0 deltas
    // are zero and contribute nothing to either statistic.
    let mut prev = cur;
    let mut d_stat = 0.0;
    let mut a_stat = 0.0;
    let mut d_prev_move = TapMove::Hold;
    let mut a_prev_move = cur.q3_index;

    let mut records = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let present = match presence {
            AttackerPresence::Bernoulli(_) => exists,
            AttackerPresence::FromStep(k) => step >= k,
        };

        let (p2_new, q2_new) = sample_load(params, rng);
        let d_obs = observe_defender(&cur, params, rng);
        let a_obs = observe_attacker(&cur, params, rng);
        d_stat = update_defender_statistic(d_stat, cur.v1, prev.v1, cur.flows.v3, prev.flows.v3, params.n_memory);
        a_stat = update_attacker_statistic(a_stat, cur.flows.v3, prev.flows.v3, cur.q3, prev.q3, params);

        let d_space = defender_move_space(cur.v1, params);
        let d_mem = DefenderMemory {
            observation: d_obs,
            previous_move: d_prev_move,
            statistic: d_stat,
        };
        let d_idx = defender.decide(&d_mem, &d_space, rng)?;
        if d_idx >= d_space.len() {
            return Err(EngineError::MoveOutOfRange {
                index: d_idx,
                len: d_space.len(),
            });
        }

        let a_idx = if present {
            let a_mem = AttackerMemory {
                observation: a_obs,
                previous_move: a_prev_move,
                statistic: a_stat,
            };
            let idx = attacker.decide(&a_mem, cur.q3_index, &a_space, rng)?;
            if idx >= a_space.len() {
                return Err(EngineError::MoveOutOfRange {
                    index: idx,
                    len: a_space.len(),
                });
            }
            idx
        } else {
            cur.q3_index
        };

        let d_move = direction_of(d_space[d_idx], cur.v1);
        let next = make_state(step, d_space[d_idx], p2_new, q2_new, a_idx, &a_space, params);
        let r_d = defender_reward(next.flows.v2, next.flows.v3, params.epsilon);
        let r_a = attacker_reward(next.flows.v2, params.epsilon);
        records.push(StepRecord {
            state: next,
            defender_move: d_move,
            attacker_move: a_idx,
            r_d,
            r_a,
            attacker_present: present,
        });

        prev = cur;
        cur = next;
        d_prev_move = d_move;
        a_prev_move = a_idx;
    }
    Ok(records)
}

/// Runs one episode with attacker existence drawn once at probability `p`.
pub fn run_episode<D: DefenderAgent, A: AttackerAgent>(
    params: &ScenarioParams,
    p: f64,
    defender: &mut D,
    attacker: &mut A,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepRecord>, EngineError> {
    run_episode_with(params, AttackerPresence::Bernoulli(p), defender, attacker, n_steps, rng)
}

/// Trajectory CSV header, one row per step per episode.
pub const TRAJECTORY_HEADER: &[&str] = &[
    "episode", "step", "attacker_present", "v1", "v2", "v3", "p2", "q2", "q3", "P1", "Q1", "d_move", "a_move", "r_D", "r_A",
];

/// Writes episodes in the long trajectory format.
pub fn write_trajectories<W: Write>(out: W, episodes: &[Vec<StepRecord>]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for (e, steps) in episodes.iter().enumerate() {
        for rec in steps {
            let s = &rec.state;
            w.write_record(&[
                e.to_string(),
                s.step_index.to_string(),
                rec.attacker_present.to_string(),
                s.v1.to_string(),
                s.flows.v2.to_string(),
                s.flows.v3.to_string(),
                s.p2.to_string(),
                s.q2.to_string(),
                s.q3.to_string(),
                s.flows.p1.to_string(),
                s.flows.q1.to_string(),
                rec.defender_move.delta().to_string(),
                rec.attacker_move.to_string(),
                rec.r_d.to_string(),
                rec.r_a.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes episodes to a trajectory CSV file.
pub fn write_trajectory_file<P: AsRef<Path>>(path: P, episodes: &[Vec<StepRecord>]) -> Result<(), csv::Error> {
    let file = std::fs::File::create(path.as_ref()).map_err(csv::Error::from)?;
    write_trajectories(file, episodes)
}
