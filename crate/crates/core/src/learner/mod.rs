//! Linear Q-learning.
//!
//! Three parameterizations over a location, a memory vector of six binary
//! flags and an RM-state input:
//!
//! - Oracle: `Q(loc, u, a)`, one weight per combination.
//! - Memory-only: `Q1(loc, a) + 1/6 · Σ_i Q2(loc, mem_i, a)`.
//! - Belief-conditioned: `Σ_u b(u) · [Q1(u) + Q2(loc, u, a) + 1/6 · Σ_i Q3(loc, u, mem_i, a)]`,
//!   summed over non-terminal `u`. Terminal mass contributes zero.
//!
//! `Q2` and `Q3` are indexed by the flag's value, not by `i`, so all six
//! flags share one table.

mod train;

pub use train::{
    evaluate_policy, train_run, CurvePoint, Evaluation, GoldTask, LearningCurve, Method,
    TrainConfig,
};

use rand::Rng;
use thiserror::Error;

use crate::envs::gold::TRACKED_CELLS;
use crate::inference::InferenceError;
use crate::product::ModelError;

pub const N_MEMORY: usize = TRACKED_CELLS.len();

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("{param:?} Q-function cannot take {input} input")]
    InputMismatch {
        param: Parameterization,
        input: &'static str,
    },
    #[error("{what} {index} out of range (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which cells the agent has dug at this episode, in [`TRACKED_CELLS`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MemoryFlags {
    pub mined: [bool; N_MEMORY],
}

impl MemoryFlags {
    pub fn new() -> Self {
        MemoryFlags::default()
    }

    pub fn set(&mut self, slot: usize) {
        self.mined[slot] = true;
    }

    pub fn count(&self) -> usize {
        self.mined.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parameterization {
    Oracle,
    MemoryOnly,
    BeliefConditioned,
}

#[derive(Debug, Clone, Copy)]
pub enum QInput<'a> {
    Oracle {
        loc: usize,
        u: usize,
    },
    Memory {
        loc: usize,
        mem: &'a MemoryFlags,
    },
    Belief {
        loc: usize,
        belief: &'a [f64],
        mem: &'a MemoryFlags,
    },
}

impl QInput<'_> {
    fn kind(&self) -> &'static str {
        match self {
            QInput::Oracle { .. } => "oracle",
            QInput::Memory { .. } => "memory",
            QInput::Belief { .. } => "belief",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TieBreak {
    Random,
    Lowest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    param: Parameterization,
    n_loc: usize,
    n_u: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl LinearQ {
    /// Zero-initialized weights. `n_u` counts non-terminal RM states and is
    /// ignored by the memory-only form.
    pub fn new(param: Parameterization, n_loc: usize, n_u: usize, n_actions: usize) -> Self {
        let len = match param {
            Parameterization::Oracle => n_loc * n_u * n_actions,
            Parameterization::MemoryOnly => n_loc * n_actions + n_loc * 2 * n_actions,
            Parameterization::BeliefConditioned => {
                n_u + n_loc * n_u * n_actions + n_loc * n_u * 2 * n_actions
            }
        };
        LinearQ {
            param,
            n_loc,
            n_u,
            n_actions,
            weights: vec![0.0; len],
        }
    }

    pub fn parameterization(&self) -> Parameterization {
        self.param
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn oracle_idx(&self, loc: usize, u: usize, a: usize) -> usize {
        (loc * self.n_u + u) * self.n_actions + a
    }

    fn mem_q1(&self, loc: usize, a: usize) -> usize {
        loc * self.n_actions + a
    }

    fn mem_q2(&self, loc: usize, v: bool, a: usize) -> usize {
        self.n_loc * self.n_actions + (loc * 2 + v as usize) * self.n_actions + a
    }

    fn bel_q1(&self, u: usize) -> usize {
        u
    }

    fn bel_q2(&self, loc: usize, u: usize, a: usize) -> usize {
        self.n_u + (loc * self.n_u + u) * self.n_actions + a
    }

    fn bel_q3(&self, loc: usize, u: usize, v: bool, a: usize) -> usize {
        self.n_u
            + self.n_loc * self.n_u * self.n_actions
            + ((loc * self.n_u + u) * 2 + v as usize) * self.n_actions
            + a
    }

    fn check(&self, input: &QInput<'_>, a: usize) -> Result<(), LearnerError> {
        let range = |what, index, size| {
            if index < size {
                Ok(())
            } else {
                Err(LearnerError::OutOfRange { what, index, size })
            }
        };
        range("action", a, self.n_actions)?;
        match (self.param, input) {
            (Parameterization::Oracle, QInput::Oracle { loc, u }) => {
                range("location", *loc, self.n_loc)?;
                range("RM state", *u, self.n_u)
            }
            (Parameterization::MemoryOnly, QInput::Memory { loc, .. }) => {
                range("location", *loc, self.n_loc)
            }
            (Parameterization::BeliefConditioned, QInput::Belief { loc, belief, .. }) => {
                range("location", *loc, self.n_loc)?;
                range("belief length", self.n_u, belief.len() + 1)
            }
            (param, input) => Err(LearnerError::InputMismatch {
                param,
                input: input.kind(),
            }),
        }
    }

    /// The Q-value, computed directly from the decomposition.
    pub fn q_value(&self, input: &QInput<'_>, a: usize) -> Result<f64, LearnerError> {
        self.check(input, a)?;
        let w = &self.weights;
        Ok(match *input {
            QInput::Oracle { loc, u } => w[self.oracle_idx(loc, u, a)],
            QInput::Memory { loc, mem } => {
                let sum: f64 = mem.mined.iter().map(|&v| w[self.mem_q2(loc, v, a)]).sum();
                w[self.mem_q1(loc, a)] + sum / N_MEMORY as f64
            }
            QInput::Belief { loc, belief, mem } => {
                let mut total = 0.0;
                for (u, &b) in belief.iter().enumerate().take(self.n_u) {
                    let q3: f64 = mem
                        .mined
                        .iter()
                        .map(|&v| w[self.bel_q3(loc, u, v, a)])
                        .sum();
                    total +=
                        b * (w[self.bel_q1(u)] + w[self.bel_q2(loc, u, a)] + q3 / N_MEMORY as f64);
                }
                total
            }
        })
    }

    /// `∇_w Q(input, a)` as sparse `(index, value)` pairs. Indices may repeat.
    pub fn features(
        &self,
        input: &QInput<'_>,
        a: usize,
    ) -> Result<Vec<(usize, f64)>, LearnerError> {
        self.check(input, a)?;
        let share = 1.0 / N_MEMORY as f64;
        Ok(match *input {
            QInput::Oracle { loc, u } => vec![(self.oracle_idx(loc, u, a), 1.0)],
            QInput::Memory { loc, mem } => {
                let mut f = vec![(self.mem_q1(loc, a), 1.0)];
                f.extend(mem.mined.iter().map(|&v| (self.mem_q2(loc, v, a), share)));
                f
            }
            QInput::Belief { loc, belief, mem } => {
                let mut f = Vec::with_capacity(self.n_u * (2 + N_MEMORY));
                for (u, &b) in belief.iter().enumerate().take(self.n_u) {
                    if b == 0.0 {
                        continue;
                    }
                    f.push((self.bel_q1(u), b));
                    f.push((self.bel_q2(loc, u, a), b));
                    f.extend(
                        mem.mined
                            .iter()
                            .map(|&v| (self.bel_q3(loc, u, v, a), b * share)),
                    );
                }
                f
            }
        })
    }

    pub fn q_values(&self, input: &QInput<'_>) -> Result<Vec<f64>, LearnerError> {
        (0..self.n_actions)
            .map(|a| self.q_value(input, a))
            .collect()
    }

    pub fn max_q(&self, input: &QInput<'_>) -> Result<f64, LearnerError> {
        Ok(self
            .q_values(input)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// ε-greedy action selection.
pub fn select_action(
    q: &LinearQ,
    input: &QInput<'_>,
    epsilon: f64,
    tie: TieBreak,
    rng: &mut impl Rng,
) -> Result<usize, LearnerError> {
    if epsilon > 0.0 && rng.random_bool(epsilon) {
        return Ok(rng.random_range(0..q.n_actions));
    }
    let values = q.q_values(input)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<usize> = (0..values.len()).filter(|&a| values[a] == best).collect();
    Ok(match tie {
        TieBreak::Lowest => argmax[0],
        TieBreak::Random if argmax.len() == 1 => argmax[0],
        TieBreak::Random => argmax[rng.random_range(0..argmax.len())],
    })
}

/// One Q-learning step. `next` is `None` on terminal transitions. Returns
/// the TD error.
pub fn td_update(
    q: &mut LinearQ,
    input: &QInput<'_>,
    a: usize,
    reward: f64,
    next: Option<&QInput<'_>>,
    alpha: f64,
    gamma: f64,
) -> Result<f64, LearnerError> {
    let target = match next {
        Some(n) => reward + gamma * q.max_q(n)?,
        None => reward,
    };
    let delta = target - q.q_value(input, a)?;
    for (i, v) in q.features(input, a)? {
        q.weights[i] += alpha * delta * v;
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mem(bits: u8) -> MemoryFlags {
        let mut m = MemoryFlags::new();
        for i in 0..N_MEMORY {
            if bits & (1 << i) != 0 {
                m.set(i);
            }
        }
        m
    }

    #[test]
    fn zero_weights_give_zero() {
        let m = mem(0b101);
        let b = [0.7, 0.3, 0.0];
        for (p, input) in [
            (Parameterization::Oracle, QInput::Oracle { loc: 3, u: 1 }),
            (
                Parameterization::MemoryOnly,
                QInput::Memory { loc: 3, mem: &m },
            ),
            (
                Parameterization::BeliefConditioned,
                QInput::Belief {
                    loc: 3,
                    belief: &b,
                    mem: &m,
                },
            ),
        ] {
            let q = LinearQ::new(p, 16, 2, 5);
            assert_eq!(q.q_values(&input).unwrap(), vec![0.0; 5]);
        }
    }

    #[test]
    fn mismatched_input_rejected() {
        let q = LinearQ::new(Parameterization::Oracle, 16, 2, 5);
        let m = MemoryFlags::new();
        assert!(matches!(
            q.q_value(&QInput::Memory { loc: 0, mem: &m }, 0),
            Err(LearnerError::InputMismatch { .. })
        ));
        assert!(matches!(
            q.q_value(&QInput::Oracle { loc: 0, u: 2 }, 0),
            Err(LearnerError::OutOfRange { .. })
        ));
        assert!(matches!(
            q.q_value(&QInput::Oracle { loc: 0, u: 0 }, 5),
            Err(LearnerError::OutOfRange { .. })
        ));
    }

    #[test]
    fn terminal_oracle_update() {
        let mut q = LinearQ::new(Parameterization::Oracle, 16, 2, 5);
        let input = QInput::Oracle { loc: 4, u: 1 };
        td_update(&mut q, &input, 2, 1.0, None, 0.01, 0.99).unwrap();
        let nonzero: Vec<_> = q
            .weights()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].1 - 0.01).abs() < 1e-15);
        assert_eq!(q.q_value(&input, 2).unwrap(), *nonzero[0].1);
    }

    #[test]
    fn zero_td_error_leaves_weights() {
        let mut q = LinearQ::new(Parameterization::Oracle, 16, 2, 5);
        let before = q.clone();
        td_update(
            &mut q,
            &QInput::Oracle { loc: 0, u: 0 },
            0,
            0.0,
            Some(&QInput::Oracle { loc: 1, u: 0 }),
            0.5,
            0.9,
        )
        .unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn greedy_choices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = LinearQ::new(Parameterization::Oracle, 16, 2, 5);
        let input = QInput::Oracle { loc: 0, u: 0 };
        assert_eq!(
            select_action(&q, &input, 0.0, TieBreak::Lowest, &mut rng).unwrap(),
            0
        );
        let i = q.oracle_idx(0, 0, 3);
        q.weights_mut()[i] = 0.5;
        assert_eq!(
            select_action(&q, &input, 0.0, TieBreak::Random, &mut rng).unwrap(),
            3
        );
    }

    #[test]
    fn uniform_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = LinearQ::new(Parameterization::Oracle, 16, 2, 5);
        let input = QInput::Oracle { loc: 0, u: 0 };
        let mut counts = [0usize; 5];
        let n = 10_000;
        for _ in 0..n {
            counts[select_action(&q, &input, 1.0, TieBreak::Lowest, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.47, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn belief_update_splits_by_mass() {
        let mut q = LinearQ::new(Parameterization::BeliefConditioned, 16, 2, 5);
        let m = MemoryFlags::new();
        let b = [0.7, 0.3, 0.0];
        td_update(
            &mut q,
            &QInput::Belief {
                loc: 5,
                belief: &b,
                mem: &m,
            },
            1,
            1.0,
            None,
            0.1,
            0.99,
        )
        .unwrap();
        let w = q.weights();
        let ratio = w[q.bel_q2(5, 0, 1)] / w[q.bel_q2(5, 1, 1)];
        assert!((ratio - 0.7 / 0.3).abs() < 1e-12);
    }
}
