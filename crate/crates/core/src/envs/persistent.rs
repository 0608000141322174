//! Two-state POMDPs whose hidden state never changes.
//!
//! The state is `s0` or `s1` with equal probability and persists for the
//! whole episode. Proposition `A` holds on a transition out of `s0`, so the
//! persistent RM moves to `u1` on the first step iff the state is `s0`.
//!
//! In the uninformative variant every observation is `o`. In the revealing
//! variant each observation is `o` or `o^(i)` with probability 0.5.

use std::fmt;
use std::str::FromStr;

use crate::product::{Dist, ObservationModel, Outcome, Pomdp, PomdpDef};
use crate::rm::{PropSet, RewardMachine};

pub const PERSISTENT_RM: &str = include_str!("../../rms/persistent.rm");

/// Observation tokens.
pub const OBS_O: usize = 0;
pub const OBS_REVEAL_S0: usize = 1;
pub const OBS_REVEAL_S1: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PersistentVariant {
    Uninformative,
    Revealing,
}

impl PersistentVariant {
    pub fn name(self) -> &'static str {
        match self {
            PersistentVariant::Uninformative => "uninformative",
            PersistentVariant::Revealing => "revealing",
        }
    }
}

impl fmt::Display for PersistentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PersistentVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uninformative" => Ok(PersistentVariant::Uninformative),
            "revealing" => Ok(PersistentVariant::Revealing),
            other => Err(format!("unknown persistent variant `{other}`")),
        }
    }
}

/// The revealing observation for state `s`.
pub fn reveal(s: usize) -> usize {
    OBS_REVEAL_S0 + s
}

/// Builds the POMDP. Taking action `a_i` in state `s_i` pays 1.
pub fn make_persistent(variant: PersistentVariant) -> Pomdp {
    let transitions = (0..2)
        .flat_map(|s| {
            (0..2).map(move |a| {
                vec![Outcome {
                    next: s,
                    prob: 1.0,
                    reward: if a == s { 1.0 } else { 0.0 },
                }]
            })
        })
        .collect();
    let observe = |s: usize| match variant {
        PersistentVariant::Uninformative => Dist::point(OBS_O),
        PersistentVariant::Revealing => Dist::new(vec![(OBS_O, 0.5), (reveal(s), 0.5)]),
    };
    Pomdp::new(PomdpDef {
        n_states: 2,
        n_observations: 3,
        n_actions: 2,
        transitions,
        observations: ObservationModel::StateOnly((0..2).map(observe).collect()),
        initial: Dist::uniform(2),
        fully_observable: false,
    })
    .expect("persistent POMDP tables are well formed")
}

pub fn persistent_rm() -> RewardMachine {
    RewardMachine::from_text(PERSISTENT_RM).expect("bundled persistent.rm is valid")
}

/// `A` holds iff the transition leaves `s0`.
pub fn persistent_label(s: usize, _a: usize, _next: usize) -> PropSet {
    if s == 0 {
        PropSet::singleton(0)
    } else {
        PropSet::empty()
    }
}
