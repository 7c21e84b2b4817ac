//! Simulator and policy-training toolkit for attacker-defender games on a
//! three-node radial distribution feeder.
//!
//! A voltage-regulating defender (the substation tap changer) and a
//! reactive-power attacker (a compromised distributed generator) move
//! simultaneously each step over a linearized power flow. Players learn
//! tabular policies by Monte Carlo policy iteration stacked into a level-k
//! hierarchy on top of scripted level-0 heuristics. On top of the engine
//! sit the experiment pipelines: presence-probability sweeps, design-space
//! sweeps over load and generator sizing, reward-slope extraction, and the
//! social-welfare break-even arithmetic.
//!
//! Everything is deterministic given a seed: episode randomness comes from
//! counter-derived streams, so results are independent of thread count and
//! scheduling. The `parallel` feature (on by default) runs episode batches
//! on a work-stealing pool; without it the same code runs sequentially and
//! produces identical output.

pub mod agents;
pub mod config;
pub mod exec;
pub mod learning;
pub mod powerflow;
pub mod rng;
pub mod snfg;
pub mod studies;
pub mod testkit;

pub use agents::{
    level0_attacker_move, level0_defender_move, Level0Attacker, Level0Defender, PlayerKind, PolicyError, StateCodec,
    StateKey, TabularAttacker, TabularDefender, TabularPolicy,
};
pub use config::{ConfigError, RunConfig, SimulateConfig, SweepConfig};
pub use learning::{
    train_level_k, train_policy_core, Environment, LevelKOutcome, TrainConfig, TrainError, TrainResult,
};
pub use powerflow::{attacker_reward, defender_reward, solve_flows, FlowSolution, ScenarioParams};
pub use snfg::{
    run_episode, run_episode_with, AttackerPresence, EngineError, GridState, StepRecord, TapMove,
};
pub use studies::{
    analyze_welfare, break_even_cpq, design_sweep, evaluate_matchup, extract_slope, mix_rewards, p_sweep,
    welfare_cost_rate, AttackerSpec, DefenderSpec, MatchupStats, SlopeFit, StudiesError, SweepRecord, SweepResult,
    WelfareParams, WelfareRow,
};
