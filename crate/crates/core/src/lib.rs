//! Reward machines under noisy symbol grounding.
//!
//! The crate parses and validates reward machines, infers the RM state from
//! observation histories with three methods (Naive, IBU, TDM), builds the
//! equivalent product POMDP, and trains linear Q-learning agents on the Gold
//! Mining grid.

pub mod abstraction;
pub mod envs;
pub mod inference;
pub mod learner;
pub mod metrics;
pub mod product;
pub mod rm;
