//! Tabular stochastic policies over coarsened information states, plus the
//! execution-time agents that play them.
//!
//! A policy maps a [`StateKey`] (the player's memory, re-binned by
//! [`StateCodec`]) to a probability distribution over move indices. Keys the
//! policy has never stored are handled differently by context: during
//! training the learner explores them uniformly, while at execution time the
//! agent falls back to the level-0 heuristic for that player, so a partially
//! trained table degrades toward the anchor behavior instead of acting
//! arbitrarily.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::powerflow::ScenarioParams;
use crate::snfg::{AttackerAgent, AttackerMemory, DefenderAgent, DefenderMemory, EngineError};

use super::level0::{level0_attacker_move, level0_defender_move};

/// Magic string identifying policy files.
pub const POLICY_FORMAT: &str = "gridgame-policy";
/// Bumped on incompatible changes to the policy file layout.
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayerKind {
    Defender,
    Attacker,
}

impl fmt::Display for PlayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlayerKind::Defender => write!(f, "defender"),
            PlayerKind::Attacker => write!(f, "attacker"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("not a policy file (format {found:?})")]
    Format { found: String },
    #[error("unsupported policy file version {found}")]
    Version { found: u32 },
    #[error("malformed state key {0:?}")]
    KeyParse(String),
    #[error("invalid distribution for key {key}: {reason}")]
    BadDistribution { key: String, reason: String },
    #[error("codec is incompatible with the scenario: {0}")]
    BadCodec(String),
}

/// How to coarsen a player memory into a table key.
///
/// Key bins must be integer multiples of the observation bins so that the
/// re-binning is a pure integer division of the observation indices and two
/// runs can never disagree about a key through floating-point drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateCodec {
    /// Key bin width for voltages, per unit.
    pub voltage_key_bin: f64,
    /// Key bin width for power flows, per unit.
    pub flow_key_bin: f64,
    /// Key bin width for the memory statistic.
    pub statistic_bin: f64,
    /// Whether the player's previous move is part of the key.
    pub include_previous_move: bool,
}

impl Default for StateCodec {
    fn default() -> Self {
        Self {
            voltage_key_bin: 0.02,
            flow_key_bin: 0.5,
            statistic_bin: 2.0,
            include_previous_move: true,
        }
    }
}

fn bin_ratio(key_bin: f64, obs_bin: f64, what: &str) -> Result<i32, PolicyError> {
    let r = key_bin / obs_bin;
    if !r.is_finite() || (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
        return Err(PolicyError::BadCodec(format!(
            "{what} key bin {key_bin} is not a positive integer multiple of the observation bin {obs_bin}"
        )));
    }
    Ok(r.round() as i32)
}

impl StateCodec {
    /// Checks the codec against the scenario's observation bins.
    pub fn validate(&self, params: &ScenarioParams) -> Result<(), PolicyError> {
        bin_ratio(self.voltage_key_bin, params.voltage_bin, "voltage")?;
        bin_ratio(self.flow_key_bin, params.flow_bin, "flow")?;
        if !(self.statistic_bin > 0.0) {
            return Err(PolicyError::BadCodec(format!(
                "statistic bin must be positive, got {}",
                self.statistic_bin
            )));
        }
        Ok(())
    }

    fn voltage_ratio(&self, params: &ScenarioParams) -> i32 {
        (self.voltage_key_bin / params.voltage_bin).round() as i32
    }

    fn flow_ratio(&self, params: &ScenarioParams) -> i32 {
        (self.flow_key_bin / params.flow_bin).round() as i32
    }

    fn statistic_key(&self, statistic: f64) -> i32 {
        (statistic / self.statistic_bin).round() as i32
    }

    /// Encodes a defender memory as `[v1, v2, v3, p1, q1, prev?, stat]`.
    pub fn encode_defender(&self, memory: &DefenderMemory, params: &ScenarioParams) -> StateKey {
        let vr = self.voltage_ratio(params);
        let fr = self.flow_ratio(params);
        let o = &memory.observation;
        let mut k = vec![
            o.v1.div_euclid(vr),
            o.v2.div_euclid(vr),
            o.v3.div_euclid(vr),
            o.p1.div_euclid(fr),
            o.q1.div_euclid(fr),
        ];
        if self.include_previous_move {
            k.push(memory.previous_move.code() as i32);
        }
        k.push(self.statistic_key(memory.statistic));
        StateKey(k)
    }

    /// Encodes an attacker memory as `[v2, v3, p3, q3, prev?, stat]`.
    pub fn encode_attacker(&self, memory: &AttackerMemory, params: &ScenarioParams) -> StateKey {
        let vr = self.voltage_ratio(params);
        let fr = self.flow_ratio(params);
        let o = &memory.observation;
        let mut k = vec![
            o.v2.div_euclid(vr),
            o.v3.div_euclid(vr),
            o.p3.div_euclid(fr),
            o.q3.div_euclid(fr),
        ];
        if self.include_previous_move {
            k.push(memory.previous_move as i32);
        }
        k.push(self.statistic_key(memory.statistic));
        StateKey(k)
    }
}

/// A coarsened information state: the codec's integer bin indices in a fixed
/// component order. Serialized as colon-joined integers, e.g. `50:48:-2:1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub Vec<i32>);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ":")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for StateKey {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(PolicyError::KeyParse(s.to_string()));
        }
        s.split(':')
            .map(|c| c.parse::<i32>().map_err(|_| PolicyError::KeyParse(s.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(StateKey)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyEntry {
    p: Vec<f64>,
    visits: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    format: String,
    version: u32,
    player: PlayerKind,
    codec: StateCodec,
    entries: BTreeMap<String, PolicyEntry>,
}

/// A stochastic move policy stored as an explicit state table.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    player: PlayerKind,
    codec: StateCodec,
    table: HashMap<StateKey, Vec<f64>>,
    visits: HashMap<StateKey, u64>,
}

impl TabularPolicy {
    pub fn new(player: PlayerKind, codec: StateCodec) -> Self {
        Self {
            player,
            codec,
            table: HashMap::new(),
            visits: HashMap::new(),
        }
    }

    pub fn player(&self) -> PlayerKind {
        self.player
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &StateKey> {
        self.table.keys()
    }

    pub fn distribution(&self, key: &StateKey) -> Option<&[f64]> {
        self.table.get(key).map(Vec::as_slice)
    }

    pub fn set_distribution(&mut self, key: StateKey, dist: Vec<f64>) {
        assert!(!dist.is_empty(), "empty move distribution");
        self.table.insert(key, dist);
    }

    pub fn visit_count(&self, key: &StateKey) -> u64 {
        self.visits.get(key).copied().unwrap_or(0)
    }

    pub fn add_visits(&mut self, key: &StateKey, count: u64) {
        *self.visits.entry(key.clone()).or_insert(0) += count;
    }

    /// Drops every entry visited fewer than `min_visits` times during
    /// training, so those states route to the level-0 fallback at execution.
    /// Returns how many entries were removed.
    pub fn retain_min_visits(&mut self, min_visits: u64) -> usize {
        let before = self.table.len();
        let visits = &self.visits;
        self.table.retain(|k, _| visits.get(k).copied().unwrap_or(0) >= min_visits);
        let table = &self.table;
        self.visits.retain(|k, _| table.contains_key(k));
        before - self.table.len()
    }

    /// Samples a move for `key` using an externally drawn uniform `u` in
    /// `[0, 1)`. `Ok(None)` means the key is not in the table. The caller's
    /// move space length must match the stored distribution.
    pub fn sample_with(&self, key: &StateKey, n_actions: usize, u: f64) -> Result<Option<usize>, EngineError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(dist) => {
                if dist.len() != n_actions {
                    return Err(EngineError::CodecMismatch {
                        stored: dist.len(),
                        actual: n_actions,
                    });
                }
                let mut cum = 0.0;
                for (i, &p) in dist.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return Ok(Some(i));
                    }
                }
                // Rounding can leave cum slightly below 1.
                Ok(Some(dist.len() - 1))
            }
        }
    }

    pub fn sample(&self, key: &StateKey, n_actions: usize, rng: &mut ChaCha8Rng) -> Result<Option<usize>, EngineError> {
        let u = rng.gen::<f64>();
        self.sample_with(key, n_actions, u)
    }

    /// Training-time sampling: unknown keys explore uniformly. Consumes
    /// exactly one draw either way, so the stream stays aligned as the table
    /// grows between training rounds.
    pub fn sample_or_uniform(&self, key: &StateKey, n_actions: usize, rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        let u = rng.gen::<f64>();
        match self.sample_with(key, n_actions, u)? {
            Some(i) => Ok(i),
            None => Ok(((u * n_actions as f64) as usize).min(n_actions - 1)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let entries: BTreeMap<String, PolicyEntry> = self
            .table
            .iter()
            .map(|(k, dist)| {
                (
                    k.to_string(),
                    PolicyEntry {
                        p: dist.clone(),
                        visits: self.visit_count(k),
                    },
                )
            })
            .collect();
        let file = PolicyFile {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            player: self.player,
            codec: self.codec,
            entries,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        if file.format != POLICY_FORMAT {
            return Err(PolicyError::Format { found: file.format });
        }
        if file.version != POLICY_VERSION {
            return Err(PolicyError::Version { found: file.version });
        }
        let mut policy = TabularPolicy::new(file.player, file.codec);
        for (key_text, entry) in file.entries {
            let key = StateKey::from_str(&key_text)?;
            validate_distribution(&entry.p).map_err(|reason| PolicyError::BadDistribution {
                key: key_text.clone(),
                reason,
            })?;
            policy.visits.insert(key.clone(), entry.visits);
            policy.table.insert(key, entry.p);
        }
        Ok(policy)
    }
}

fn validate_distribution(p: &[f64]) -> Result<(), String> {
    if p.is_empty() {
        return Err("empty".to_string());
    }
    let mut sum = 0.0;
    for &w in p {
        if !w.is_finite() || w < 0.0 {
            return Err(format!("weight {w} out of range"));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("weights sum to {sum}"));
    }
    Ok(())
}

/// Plays a trained defender policy, counting how often it had to fall back
/// to the level-0 regulator because the state was never trained.
pub struct TabularDefender<'p> {
    policy: &'p TabularPolicy,
    params: ScenarioParams,
    pub decisions: u64,
    pub fallback_decisions: u64,
}

impl<'p> TabularDefender<'p> {
    pub fn new(policy: &'p TabularPolicy, params: &ScenarioParams) -> Self {
        assert_eq!(policy.player(), PlayerKind::Defender, "defender agent needs a defender policy");
        Self {
            policy,
            params: *params,
            decisions: 0,
            fallback_decisions: 0,
        }
    }
}

impl DefenderAgent for TabularDefender<'_> {
    fn decide(&mut self, memory: &DefenderMemory, move_space: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        self.decisions += 1;
        // One draw per decision regardless of branch keeps the episode
        // stream identical across policies of different coverage.
        let u = rng.gen::<f64>();
        let key = self.policy.codec().encode_defender(memory, &self.params);
        match self.policy.sample_with(&key, move_space.len(), u)? {
            Some(i) => Ok(i),
            None => {
                self.fallback_decisions += 1;
                Ok(level0_defender_move(&memory.observation, move_space, &self.params))
            }
        }
    }
}

/// Plays a trained attacker policy with the same fallback contract.
pub struct TabularAttacker<'p> {
    policy: &'p TabularPolicy,
    params: ScenarioParams,
    pub decisions: u64,
    pub fallback_decisions: u64,
}

impl<'p> TabularAttacker<'p> {
    pub fn new(policy: &'p TabularPolicy, params: &ScenarioParams) -> Self {
        assert_eq!(policy.player(), PlayerKind::Attacker, "attacker agent needs an attacker policy");
        Self {
            policy,
            params: *params,
            decisions: 0,
            fallback_decisions: 0,
        }
    }
}

impl AttackerAgent for TabularAttacker<'_> {
    fn decide(&mut self, memory: &AttackerMemory, q3_index: usize, move_space: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EngineError> {
        self.decisions += 1;
        let u = rng.gen::<f64>();
        let key = self.policy.codec().encode_attacker(memory, &self.params);
        match self.policy.sample_with(&key, move_space.len(), u)? {
            Some(i) => Ok(i),
            None => {
                self.fallback_decisions += 1;
                Ok(level0_attacker_move(&memory.observation, q3_index, &self.params))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};
    use crate::snfg::{bin_value, AttackerObservation, DefenderObservation, TapMove};

    fn params() -> ScenarioParams {
        ScenarioParams::default()
    }

    fn defender_memory() -> DefenderMemory {
        let p = params();
        DefenderMemory {
            observation: DefenderObservation {
                v1: bin_value(1.0, p.voltage_bin),
                v2: bin_value(0.967, p.voltage_bin),
                v3: bin_value(0.997, p.voltage_bin),
                p1: bin_value(2.4, p.flow_bin),
                q1: bin_value(0.7, p.flow_bin),
            },
            previous_move: TapMove::Hold,
            statistic: 3.4,
        }
    }

    #[test]
    fn codec_defaults_validate_against_default_scenario() {
        StateCodec::default().validate(&params()).unwrap();
    }

    #[test]
    fn codec_rejects_non_integer_ratio() {
        let mut c = StateCodec::default();
        c.voltage_key_bin = 0.015;
        assert!(c.validate(&params()).is_err());
        c.voltage_key_bin = 0.005; // finer than the observation bin
        assert!(c.validate(&params()).is_err());
        let mut c = StateCodec::default();
        c.statistic_bin = 0.0;
        assert!(c.validate(&params()).is_err());
    }

    #[test]
    fn defender_key_components() {
        // Observation bins: v1 100, v2 97, v3 100, p1 48, q1 14. With key
        // ratios 2 (voltage) and 10 (flow): [50, 48, 50, 4, 1], previous
        // move code 1, statistic 3.4 / 2.0 rounds to 2.
        let key = StateCodec::default().encode_defender(&defender_memory(), &params());
        assert_eq!(key, StateKey(vec![50, 48, 50, 4, 1, 1, 2]));
    }

    #[test]
    fn attacker_key_components_negative_flows() {
        let p = params();
        let memory = AttackerMemory {
            observation: AttackerObservation {
                v2: bin_value(0.967, p.voltage_bin),
                v3: bin_value(0.997, p.voltage_bin),
                p3: bin_value(1.0, p.flow_bin),
                q3: bin_value(-0.6, p.flow_bin),
            },
            previous_move: 3,
            statistic: -4.9,
        };
        // q3 bin -12 re-bins to -2 under floor division by 10, not toward
        // zero; -4.9 / 2.0 rounds to -2.
        let key = StateCodec::default().encode_attacker(&memory, &p);
        assert_eq!(key, StateKey(vec![48, 50, 2, -2, 3, -2]));
    }

    #[test]
    fn previous_move_is_optional_in_keys() {
        let mut codec = StateCodec::default();
        codec.include_previous_move = false;
        let key = codec.encode_defender(&defender_memory(), &params());
        assert_eq!(key.0.len(), 6);
        assert_eq!(key, StateKey(vec![50, 48, 50, 4, 1, 2]));
    }

    #[test]
    fn key_text_round_trip() {
        let key = StateKey(vec![50, -3, 0, 12]);
        let text = key.to_string();
        assert_eq!(text, "50:-3:0:12");
        assert_eq!(StateKey::from_str(&text).unwrap(), key);
        assert!(StateKey::from_str("").is_err());
        assert!(StateKey::from_str("1:x:3").is_err());
    }

    #[test]
    fn sampling_contract() {
        let mut policy = TabularPolicy::new(PlayerKind::Defender, StateCodec::default());
        let key = StateKey(vec![1, 2, 3]);
        let mut rng = stream(7, tag::SIMULATE, 0);

        // Unknown key: None, and the uniform variant explores all actions.
        assert_eq!(policy.sample(&key, 3, &mut rng).unwrap(), None);
        let mut seen = [false; 3];
        for _ in 0..100 {
            seen[policy.sample_or_uniform(&key, 3, &mut rng).unwrap()] = true;
        }
        assert_eq!(seen, [true; 3]);

        // Stored one-hot: deterministic.
        policy.set_distribution(key.clone(), vec![0.0, 1.0, 0.0]);
        for _ in 0..20 {
            assert_eq!(policy.sample(&key, 3, &mut rng).unwrap(), Some(1));
        }

        // Stored length must match the move space length.
        match policy.sample(&key, 2, &mut rng) {
            Err(EngineError::CodecMismatch { stored: 3, actual: 2 }) => {}
            other => panic!("expected codec mismatch, got {other:?}"),
        }
    }

    #[test]
    fn sampling_frequencies_follow_distribution() {
        let mut policy = TabularPolicy::new(PlayerKind::Attacker, StateCodec::default());
        let key = StateKey(vec![0]);
        policy.set_distribution(key.clone(), vec![0.25, 0.75]);
        let mut rng = stream(11, tag::SIMULATE, 0);
        let n = 20_000;
        let mut hits = 0usize;
        for _ in 0..n {
            if policy.sample(&key, 2, &mut rng).unwrap() == Some(1) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn sample_with_handles_rounding_shortfall() {
        let mut policy = TabularPolicy::new(PlayerKind::Defender, StateCodec::default());
        let key = StateKey(vec![0]);
        policy.set_distribution(key.clone(), vec![0.3, 0.7 - 1e-12]);
        assert_eq!(policy.sample_with(&key, 2, 1.0 - 1e-13).unwrap(), Some(1));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let mut policy = TabularPolicy::new(PlayerKind::Defender, StateCodec::default());
        policy.set_distribution(StateKey(vec![50, 48, 50, 4, 1, 1, 2]), vec![0.1, 0.2, 0.7]);
        policy.set_distribution(StateKey(vec![-1, 0, 2, 0, 0, 1, 0]), vec![1.0, 0.0]);
        policy.add_visits(&StateKey(vec![50, 48, 50, 4, 1, 1, 2]), 42);
        policy.save(&path).unwrap();

        let loaded = TabularPolicy::load(&path).unwrap();
        assert_eq!(loaded.player(), PlayerKind::Defender);
        assert_eq!(loaded.codec(), policy.codec());
        assert_eq!(loaded.len(), 2);
        assert_eq!(
            loaded.distribution(&StateKey(vec![50, 48, 50, 4, 1, 1, 2])),
            Some(&[0.1, 0.2, 0.7][..])
        );
        assert_eq!(loaded.visit_count(&StateKey(vec![50, 48, 50, 4, 1, 1, 2])), 42);
        assert_eq!(loaded.visit_count(&StateKey(vec![-1, 0, 2, 0, 0, 1, 0])), 0);
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();

        let path = dir.path().join("format.json");
        std::fs::write(
            &path,
            r#"{"format":"something-else","version":1,"player":"defender","codec":{},"entries":{}}"#,
        )
        .unwrap();
        assert!(matches!(TabularPolicy::load(&path), Err(PolicyError::Format { .. })));

        let path = dir.path().join("version.json");
        std::fs::write(
            &path,
            r#"{"format":"gridgame-policy","version":99,"player":"defender","codec":{},"entries":{}}"#,
        )
        .unwrap();
        assert!(matches!(TabularPolicy::load(&path), Err(PolicyError::Version { found: 99 })));

        let path = dir.path().join("dist.json");
        std::fs::write(
            &path,
            r#"{"format":"gridgame-policy","version":1,"player":"defender","codec":{},
               "entries":{"1:2": {"p": [0.9, 0.3], "visits": 5}}}"#,
        )
        .unwrap();
        assert!(matches!(TabularPolicy::load(&path), Err(PolicyError::BadDistribution { .. })));

        let path = dir.path().join("neg.json");
        std::fs::write(
            &path,
            r#"{"format":"gridgame-policy","version":1,"player":"defender","codec":{},
               "entries":{"1:2": {"p": [-0.1, 1.1], "visits": 5}}}"#,
        )
        .unwrap();
        assert!(matches!(TabularPolicy::load(&path), Err(PolicyError::BadDistribution { .. })));
    }

    #[test]
    fn retain_min_visits_prunes_untrusted_entries() {
        let mut policy = TabularPolicy::new(PlayerKind::Attacker, StateCodec::default());
        let keep = StateKey(vec![1]);
        let drop = StateKey(vec![2]);
        policy.set_distribution(keep.clone(), vec![1.0]);
        policy.set_distribution(drop.clone(), vec![1.0]);
        policy.add_visits(&keep, 20);
        policy.add_visits(&drop, 19);
        assert_eq!(policy.retain_min_visits(20), 1);
        assert!(policy.distribution(&keep).is_some());
        assert!(policy.distribution(&drop).is_none());
        assert_eq!(policy.visit_count(&drop), 0);
    }

    #[test]
    fn execution_agent_uses_policy_and_falls_back() {
        let p = params();
        let memory = defender_memory();
        let codec = StateCodec::default();
        let key = codec.encode_defender(&memory, &p);

        let mut policy = TabularPolicy::new(PlayerKind::Defender, codec);
        policy.set_distribution(key, vec![0.0, 0.0, 1.0]);

        let space = vec![1.02, 1.00, 0.98];
        let mut rng = stream(3, tag::SIMULATE, 0);
        let mut agent = TabularDefender::new(&policy, &p);
        assert_eq!(agent.decide(&memory, &space, &mut rng).unwrap(), 2);
        assert_eq!((agent.decisions, agent.fallback_decisions), (1, 0));

        // A memory the table has never seen routes to the dead-band
        // regulator: mean observed voltage 0.982 is low, so step up.
        let mut unseen = memory;
        unseen.statistic = -9.0;
        unseen.observation.v2 = bin_value(0.97, p.voltage_bin);
        unseen.observation.v3 = bin_value(0.994, p.voltage_bin);
        assert_eq!(agent.decide(&unseen, &space, &mut rng).unwrap(), 0);
        assert_eq!((agent.decisions, agent.fallback_decisions), (2, 1));
    }

    #[test]
    fn attacker_execution_agent_falls_back_to_drift() {
        let p = params();
        let policy = TabularPolicy::new(PlayerKind::Attacker, StateCodec::default());
        let mut agent = TabularAttacker::new(&policy, &p);
        let memory = AttackerMemory {
            observation: AttackerObservation {
                v2: bin_value(0.99, p.voltage_bin),
                v3: bin_value(0.99, p.voltage_bin),
                p3: bin_value(1.0, p.flow_bin),
                q3: bin_value(0.0, p.flow_bin),
            },
            previous_move: 5,
            statistic: 0.0,
        };
        let space = crate::snfg::attacker_move_space(&p);
        let mut rng = stream(5, tag::SIMULATE, 0);
        // Empty table: every decision is a fallback, here a drift up.
        assert_eq!(agent.decide(&memory, 5, &space, &mut rng).unwrap(), 6);
        assert_eq!((agent.decisions, agent.fallback_decisions), (1, 1));
    }
}
