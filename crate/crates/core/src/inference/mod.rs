//! RM-state beliefs and the three inference algorithms.
//!
//! * **Naive** tracks one discrete state, `û_t = δu(û_{t-1}, M(h_t))`.
//! * **IBU** pushes a belief through the machine, weighting every
//!   assignment by the model's distribution:
//!   `ũ_t[u] = Σ_{σ, u'} 1[δu(u', σ) = u] · ũ_{t-1}[u'] · M(h_t)[σ]`.
//! * **TDM** asks the model for the belief directly.
//!
//! Beliefs range over `U ∪ F`; mass on a terminal state stays there. The
//! [`exact`] submodule holds the forward filter on the product POMDP that
//! computes the true posterior `Pr(u_t | h_t)`, used as a test oracle.

pub mod exact;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::abstraction::{AbstractionModel, History, PropDist, RmBeliefModel, Token};
use crate::product::{ModelError, NORM_TOL};
use crate::rm::{PropSet, RewardMachine, RmError, RmStateId};

pub use exact::{
    exact_filter, exact_filter_init, exact_filter_step, ExactFilterModel, JointBelief,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("belief has a negative or non-finite entry")]
    NegativeMass,
    #[error("belief sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("belief has {got} entries, the machine has {expected} states")]
    WrongSize { expected: usize, got: usize },
    #[error("{method} inference needs a {expected}, got a {got}")]
    ModelMismatch {
        method: InferenceMethod,
        expected: &'static str,
        got: &'static str,
    },
    #[error("observation {observation} has zero likelihood under the prior")]
    ImpossibleEvidence { observation: Token },
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A distribution over RM states `U ∪ F`, indexed by [`RmStateId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, InferenceError> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(InferenceError::NegativeMass);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(InferenceError::NotNormalized(sum));
        }
        Ok(Belief { probs })
    }

    pub fn dirac(n_states: usize, u: RmStateId) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[u.0] = 1.0;
        Belief { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, u: RmStateId) -> f64 {
        self.probs[u.0]
    }

    /// The state carrying all the mass, if there is one.
    pub fn as_dirac(&self) -> Option<RmStateId> {
        let pos = self.probs.iter().position(|p| *p == 1.0)?;
        self.probs
            .iter()
            .enumerate()
            .all(|(i, p)| i == pos || *p == 0.0)
            .then_some(RmStateId(pos))
    }

    pub fn total_variation(&self, other: &Belief) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Point mass on the machine's initial state.
pub fn init_belief(rm: &RewardMachine) -> Belief {
    Belief::dirac(rm.n_states(), rm.initial())
}

/// One Naive step: the machine's successor under the classifier's output.
pub fn naive_update(
    rm: &RewardMachine,
    current: RmStateId,
    sigma: PropSet,
) -> Result<RmStateId, InferenceError> {
    Ok(rm.step(current, sigma)?.0)
}

/// One IBU step. Rejects `m` if its mass differs from 1 by more than
/// [`NORM_TOL`] or it has the wrong number of entries.
pub fn ibu_update(
    rm: &RewardMachine,
    belief: &Belief,
    m: &PropDist,
) -> Result<Belief, InferenceError> {
    let n_u = rm.n_states();
    if belief.len() != n_u {
        return Err(InferenceError::WrongSize {
            expected: n_u,
            got: belief.len(),
        });
    }
    let expected = 1usize << rm.n_props();
    if m.probs().len() != expected {
        return Err(ModelError::Shape {
            what: "proposition distribution".into(),
            expected,
            got: m.probs().len(),
        }
        .into());
    }
    let sum: f64 = m.probs().iter().sum();
    if m.probs().iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(ModelError::BadProbability {
            what: "proposition distribution".into(),
        }
        .into());
    }
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(ModelError::NotNormalized {
            what: "proposition distribution".into(),
            sum,
        }
        .into());
    }

    let mut next = vec![0.0; n_u];
    for (u, &mass) in belief.probs().iter().enumerate() {
        let u = RmStateId(u);
        if rm.is_terminal(u) {
            next[u.0] += mass;
            continue;
        }
        if mass == 0.0 {
            continue;
        }
        for (sigma, p) in m.support() {
            let (target, _) = rm.step(u, sigma)?;
            next[target.0] += mass * p;
        }
    }
    Ok(Belief { probs: next })
}

/// Queries an RM belief model and checks its output.
pub fn tdm_predict(
    model: &dyn RmBeliefModel,
    h: &History,
    n_states: usize,
) -> Result<Belief, InferenceError> {
    let raw = model.belief(h);
    if raw.len() != n_states {
        return Err(InferenceError::WrongSize {
            expected: n_states,
            got: raw.len(),
        });
    }
    Belief::new(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InferenceMethod {
    Naive,
    Ibu,
    Tdm,
}

impl InferenceMethod {
    pub const ALL: [InferenceMethod; 3] = [
        InferenceMethod::Naive,
        InferenceMethod::Ibu,
        InferenceMethod::Tdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InferenceMethod::Naive => "naive",
            InferenceMethod::Ibu => "ibu",
            InferenceMethod::Tdm => "tdm",
        }
    }

    fn model_form(self) -> &'static str {
        match self {
            InferenceMethod::Naive => "proposition classifier",
            InferenceMethod::Ibu => "proposition distribution",
            InferenceMethod::Tdm => "RM belief model",
        }
    }
}

impl fmt::Display for InferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InferenceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InferenceMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown inference method `{s}`"))
    }
}

/// Running inference for one episode. Holds the history so that models
/// can be queried on `h_t` at every step.
#[derive(Debug, Clone)]
pub struct InferenceState {
    method: InferenceMethod,
    model: AbstractionModel,
    rm: Arc<RewardMachine>,
    history: History,
    current: Belief,
}

impl InferenceState {
    pub fn new(
        method: InferenceMethod,
        model: AbstractionModel,
        rm: Arc<RewardMachine>,
        first_observation: Token,
    ) -> Result<Self, InferenceError> {
        let matches = matches!(
            (method, &model),
            (InferenceMethod::Naive, AbstractionModel::Classifier(_))
                | (InferenceMethod::Ibu, AbstractionModel::Distribution(_))
                | (InferenceMethod::Tdm, AbstractionModel::RmBelief(_))
        );
        if !matches {
            return Err(InferenceError::ModelMismatch {
                method,
                expected: method.model_form(),
                got: model.form(),
            });
        }
        let history = History::new(first_observation);
        let current = match &model {
            AbstractionModel::RmBelief(m) => tdm_predict(m.as_ref(), &history, rm.n_states())?,
            _ => init_belief(&rm),
        };
        Ok(InferenceState {
            method,
            model,
            rm,
            history,
            current,
        })
    }

    pub fn method(&self) -> InferenceMethod {
        self.method
    }

    pub fn belief(&self) -> &Belief {
        &self.current
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Extends the history with `(a_t, o_{t+1})` and updates the belief.
    pub fn observe(
        &mut self,
        action: Token,
        observation: Token,
    ) -> Result<&Belief, InferenceError> {
        self.history.push(action, observation);
        self.current = match &self.model {
            AbstractionModel::Classifier(m) => {
                let u = self.current.as_dirac().expect("naive beliefs are Dirac");
                if self.rm.is_terminal(u) {
                    // Updates stop once a terminal state is predicted.
                    return Ok(&self.current);
                }
                let next = naive_update(&self.rm, u, m.classify(&self.history))?;
                Belief::dirac(self.rm.n_states(), next)
            }
            AbstractionModel::Distribution(m) => {
                ibu_update(&self.rm, &self.current, &m.distribution(&self.history))?
            }
            AbstractionModel::RmBelief(m) => {
                tdm_predict(m.as_ref(), &self.history, self.rm.n_states())?
            }
        };
        Ok(&self.current)
    }
}
