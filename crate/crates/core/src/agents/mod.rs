//! Decision rules: the scripted level-0 players and tabular learned
//! policies over discretized memory states.

mod level0;
mod tabular;

pub use level0::{level0_attacker_move, level0_defender_move, Level0Attacker, Level0Defender};
pub use tabular::{PlayerKind, PolicyError, StateCodec, StateKey, TabularAttacker, TabularDefender, TabularPolicy, POLICY_FORMAT, POLICY_VERSION};
