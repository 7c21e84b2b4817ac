//! Level-0 players: the fixed, non-learning anchors of the level-k
//! hierarchy.
//!
//! The attacker is the drift-and-strike heuristic: it predicts the load-node
//! voltage for every reachable setting through the linear sensitivity
//! `dV2/dq3 = x1`, strikes the worst one when the predicted excursion beats
//! its threshold, and otherwise creeps its setting one level toward nominal
//! voltage, pulling the regulating defender along. The defender is a plain
//! dead-band regulator on the mean of the two downstream voltages, the
//! behavior a tap controller would ship with.

use rand_chacha::ChaCha8Rng;

use crate::powerflow::ScenarioParams;
use crate::snfg::{attacker_move_space, AttackerAgent, AttackerMemory, AttackerObservation, DefenderAgent, DefenderMemory, DefenderObservation, EngineError};

/// Picks the level-0 attacker's next setting index.
///
/// Scans all settings `q` with the hypothetical voltage
/// `V2(q) = v2 + x1 * (q - q3)`. If the largest deviation `|V2(q) - 1|`
/// strictly exceeds `theta_a`, strikes at its argmax (ties prefer the larger
/// swing `|q - q3|`, then the lowest index). Otherwise drifts one level up
/// when `v2 < 1` and one level down otherwise, saturating at the ends.
pub fn level0_attacker_move(obs: &AttackerObservation, q3_index: usize, params: &ScenarioParams) -> usize {
    let space = attacker_move_space(params);
    attacker_move_in(obs, q3_index, &space, params)
}

fn attacker_move_in(obs: &AttackerObservation, q3_index: usize, space: &[f64], params: &ScenarioParams) -> usize {
    let v2 = obs.v2_value(params);
    let q3 = space[q3_index];
    let mut best_idx = 0usize;
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_swing = f64::NEG_INFINITY;
    for (i, &q) in space.iter().enumerate() {
        let dev = (v2 + params.x1 * (q - q3) - 1.0).abs();
        let swing = (q - q3).abs();
        if dev > best_dev || (dev == best_dev && swing > best_swing) {
            best_idx = i;
            best_dev = dev;
            best_swing = swing;
        }
    }
    if best_dev > params.theta_a {
        best_idx
    } else if v2 < 1.0 {
        (q3_index + 1).min(space.len() - 1)
    } else {
        q3_index.saturating_sub(1)
    }
}

/// Picks the level-0 defender's move index: a dead-band regulator on the
/// mean of the observed `V2` and `V3`. Above `1 + delta_v/2` it steps the
/// tap down, below `1 - delta_v/2` it steps up, inside the band it holds.
/// The move space is ordered highest target first, so "most upward" is
/// index 0 and "most downward" is the last index; at a rail those collapse
/// into the hold, which is exactly the clamped behavior.
pub fn level0_defender_move(obs: &DefenderObservation, move_space: &[f64], params: &ScenarioParams) -> usize {
    let mean = 0.5 * (obs.v2_value(params) + obs.v3_value(params));
    let band = 0.5 * params.delta_v;
    if mean > 1.0 + band {
        move_space.len() - 1
    } else if mean < 1.0 - band {
        0
    } else {
        // Hold: the entry nearest the observed tap voltage.
        let v1 = obs.v1_value(params);
        let mut best = 0;
        for (i, &v) in move_space.iter().enumerate() {
            if (v - v1).abs() < (move_space[best] - v1).abs() {
                best = i;
            }
        }
        best
    }
}

/// Engine adapter for the level-0 attacker. Caches the move space; the
/// decision itself is deterministic and consumes no randomness.
pub struct Level0Attacker {
    params: ScenarioParams,
    space: Vec<f64>,
}

impl Level0Attacker {
    pub fn new(params: &ScenarioParams) -> Self {
        Self {
            params: *params,
            space: attacker_move_space(params),
        }
    }
}

impl AttackerAgent for Level0Attacker {
    fn decide(&mut self, memory: &AttackerMemory, q3_index: usize, _space: &[f64], _rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        Ok(attacker_move_in(&memory.observation, q3_index, &self.space, &self.params))
    }
}

/// Engine adapter for the level-0 defender.
pub struct Level0Defender {
    params: ScenarioParams,
}

impl Level0Defender {
    pub fn new(params: &ScenarioParams) -> Self {
        Self { params: *params }
    }
}

impl DefenderAgent for Level0Defender {
    fn decide(&mut self, memory: &DefenderMemory, move_space: &[f64], _rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        Ok(level0_defender_move(&memory.observation, move_space, &self.params))
    }
}
