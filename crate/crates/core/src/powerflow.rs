//! Linearized power flow for the 3-node radial feeder and the per-step rewards.
//!
//! Node 1 is the substation with a tap-settable voltage `v1`. Node 2 carries
//! the aggregate load `(p2, q2)`. Node 3 hosts a distributed generator with
//! fixed real output `p3` and a reactive setting `q3` that the attacker can
//! command. All quantities are per unit; the nominal voltage is 1.0.
//!
//! With flows oriented toward the feeder head, the branch flows are
//!
//! ```text
//! P2 = -p3          Q2 = -q3
//! P1 = P2 + p2      Q1 = Q2 + q2
//! ```
//!
//! and the linearized voltage drops are
//!
//! ```text
//! V2 = v1 - (r1 * P1 + x1 * Q1)
//! V3 = V2 - (r2 * P2 + x2 * Q2)
//! ```
//!
//! Losses are neglected, so conservation is exact and voltages are affine in
//! the injections.

use serde::{Deserialize, Serialize};

/// Physical and game constants for one scenario.
///
/// `p2_max`/`p2_min` bound the uniform load draw, `q2_ratio` fixes the load
/// power factor, `p3` is the generator's real output and `p3_max` the bound
/// on its commandable reactive swing. `epsilon` is the acceptable voltage
/// band half-width, `theta_a` the attacker's strike threshold, and
/// `delta_v` the tap step size on `v1 in [v_min, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub r1: f64,
    pub x1: f64,
    pub r2: f64,
    pub x2: f64,
    pub p2_max: f64,
    pub p2_min: f64,
    pub q2_ratio: f64,
    pub p3: f64,
    pub p3_max: f64,
    pub epsilon: f64,
    pub theta_a: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v1_init: f64,
    pub delta_v: f64,
    pub n_attacker_levels: usize,
    pub n_memory: u32,
    /// Observation bin width for voltages, per unit.
    pub voltage_bin: f64,
    /// Observation bin width for line flows and generator quantities, per unit.
    pub flow_bin: f64,
    /// Half-width of the uniform observation noise; 0 disables the hook.
    pub obs_noise: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            r1: 0.03,
            x1: 0.03,
            r2: 0.03,
            x2: 0.03,
            p2_max: 1.4,
            p2_min: 1.35,
            q2_ratio: 0.5,
            p3: 1.0,
            p3_max: 1.0,
            epsilon: 0.05,
            theta_a: 0.07,
            v_min: 0.90,
            v_max: 1.10,
            v1_init: 1.0,
            delta_v: 0.02,
            n_attacker_levels: 11,
            n_memory: 10,
            voltage_bin: 0.01,
            flow_bin: 0.05,
            obs_noise: 0.0,
        }
    }
}

impl ScenarioParams {
    /// Returns a copy with `p2_max` moved and the load band width preserved.
    pub fn with_p2_max(mut self, p2_max: f64) -> Self {
        let width = self.p2_max - self.p2_min;
        self.p2_max = p2_max;
        self.p2_min = p2_max - width;
        self
    }

    /// Returns a copy with the attacker capability bound replaced. The real
    /// output `p3` is left alone; use `with_generator` to move both.
    pub fn with_p3_max(mut self, p3_max: f64) -> Self {
        self.p3_max = p3_max;
        self
    }

    /// Returns a copy with the generator running at the new capability.
    pub fn with_generator(mut self, p3_max: f64) -> Self {
        self.p3_max = p3_max;
        self.p3 = p3_max;
        self
    }

    pub fn validate(&self) -> Result<(), crate::config::ConfigError> {
        use crate::config::ConfigError::Invalid;
        let err = |m: &str| Err(Invalid(m.to_string()));
        if !(self.r1 > 0.0 && self.x1 > 0.0 && self.r2 > 0.0 && self.x2 > 0.0) {
            return err("line impedances must be positive");
        }
        if self.p2_min > self.p2_max {
            return err("p2_min must not exceed p2_max");
        }
        if self.q2_ratio < 0.0 {
            return err("q2_ratio must be non-negative");
        }
        if self.p3_max < 0.0 {
            return err("p3_max must be non-negative");
        }
        if self.epsilon <= 0.0 {
            return err("epsilon must be positive");
        }
        if self.theta_a <= self.epsilon {
            return err("theta_a must exceed epsilon");
        }
        if self.v_min >= self.v_max {
            return err("v_min must be below v_max");
        }
        if self.v1_init < self.v_min || self.v1_init > self.v_max {
            return err("v1_init must lie in [v_min, v_max]");
        }
        if self.delta_v <= 0.0 {
            return err("delta_v must be positive");
        }
        if self.n_attacker_levels < 3 || self.n_attacker_levels % 2 == 0 {
            return err("n_attacker_levels must be odd and at least 3");
        }
        if self.n_memory == 0 {
            return err("n_memory must be at least 1");
        }
        if self.voltage_bin <= 0.0 || self.flow_bin <= 0.0 {
            return err("observation bin widths must be positive");
        }
        if self.obs_noise < 0.0 {
            return err("obs_noise must be non-negative");
        }
        Ok(())
    }
}

/// Solved branch flows and node voltages. `p1, q1, p2, q2` here are the
/// per-segment line flows (capitalized in the equations above), not the
/// node-2 load injections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub p1: f64,
    pub q1: f64,
    pub p2: f64,
    pub q2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

/// Solves the linearized flow equations for one operating point.
/// `p2`/`q2` are the node-2 load, `p3`/`q3` the node-3 injections.
pub fn solve_flows(v1: f64, p2: f64, q2: f64, p3: f64, q3: f64, params: &ScenarioParams) -> FlowSolution {
    let flow_p2 = -p3;
    let flow_q2 = -q3;
    let flow_p1 = flow_p2 + p2;
    let flow_q1 = flow_q2 + q2;
    let v2 = v1 - (params.r1 * flow_p1 + params.x1 * flow_q1);
    let v3 = v2 - (params.r2 * flow_p2 + params.x2 * flow_q2);
    FlowSolution {
        p1: flow_p1,
        q1: flow_q1,
        p2: flow_p2,
        q2: flow_q2,
        v1,
        v2,
        v3,
    }
}

/// Attacker reward: 1 whenever the load-node voltage is strictly outside the
/// acceptable band `1 +- epsilon`, else 0. The step function is 0 at 0, so a
/// voltage exactly on the band edge earns nothing.
pub fn attacker_reward(v2: f64, epsilon: f64) -> f64 {
    let high = if v2 > 1.0 + epsilon { 1.0 } else { 0.0 };
    let low = if v2 < 1.0 - epsilon { 1.0 } else { 0.0 };
    high + low
}

/// Defender reward: negative quadratic voltage deviation at both regulated
/// nodes, normalized by the band half-width.
pub fn defender_reward(v2: f64, v3: f64, epsilon: f64) -> f64 {
    let d2 = (v2 - 1.0) / epsilon;
    let d3 = (v3 - 1.0) / epsilon;
    -(d2 * d2) - (d3 * d3)
}
