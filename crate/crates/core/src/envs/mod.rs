//! Concrete environments.

pub mod gold;
pub mod persistent;
