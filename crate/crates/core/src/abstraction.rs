//! Labelling functions, observation-action histories and abstraction models.
//!
//! An abstraction model maps the agent's history to one of three outputs,
//! each feeding one inference method:
//!
//! | form                        | output               | used by |
//! |-----------------------------|----------------------|---------|
//! | [`PropClassifier`]          | a single [`PropSet`] | Naive   |
//! | [`PropDistributionModel`]   | a [`PropDist`]       | IBU     |
//! | [`RmBeliefModel`]           | a [`Belief`] vector  | TDM     |
//!
//! Before any transition (`t = 1`) the conventions are: the empty set, a
//! point mass on the empty set, and a point mass on the initial RM state.

use std::fmt;
use std::sync::Arc;

use crate::inference::Belief;
use crate::product::{ModelError, Pomdp, NORM_TOL};
use crate::rm::{PropSet, RewardMachine};

/// Opaque observation or action identifier supplied by an environment.
pub type Token = usize;

/// `h_t = (o_1, a_1, …, a_{t-1}, o_t)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct History {
    observations: Vec<Token>,
    actions: Vec<Token>,
}

impl History {
    pub fn new(first_observation: Token) -> Self {
        History {
            observations: vec![first_observation],
            actions: Vec::new(),
        }
    }

    pub fn from_parts(observations: Vec<Token>, actions: Vec<Token>) -> Option<Self> {
        (!observations.is_empty() && observations.len() == actions.len() + 1).then_some(History {
            observations,
            actions,
        })
    }

    pub fn push(&mut self, action: Token, observation: Token) {
        self.actions.push(action);
        self.observations.push(observation);
    }

    /// The time index `t`, i.e. the number of observations.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn observations(&self) -> &[Token] {
        &self.observations
    }

    pub fn actions(&self) -> &[Token] {
        &self.actions
    }

    pub fn last_observation(&self) -> Token {
        *self.observations.last().expect("histories are non-empty")
    }

    /// `(o_{t-1}, a_{t-1}, o_t)`, or `None` at `t = 1`.
    pub fn last_transition(&self) -> Option<(Token, Token, Token)> {
        let t = self.observations.len();
        (t >= 2).then(|| {
            (
                self.observations[t - 2],
                self.actions[t - 2],
                self.observations[t - 1],
            )
        })
    }

    /// All transitions `(o_i, a_i, o_{i+1})` in order.
    pub fn transitions(&self) -> impl Iterator<Item = (Token, Token, Token)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(|(i, a)| (self.observations[i], *a, self.observations[i + 1]))
    }

    /// The prefix `h_t` for `1 ≤ t ≤ len()`.
    pub fn prefix(&self, t: usize) -> History {
        History {
            observations: self.observations[..t].to_vec(),
            actions: self.actions[..t - 1].to_vec(),
        }
    }
}

/// Ground-truth `L(s, a, s')` over an enumerable environment.
pub trait LabellingFunction: Send + Sync {
    fn label(&self, s: usize, a: usize, next: usize) -> PropSet;
}

impl<F> LabellingFunction for F
where
    F: Fn(usize, usize, usize) -> PropSet + Send + Sync,
{
    fn label(&self, s: usize, a: usize, next: usize) -> PropSet {
        self(s, a, next)
    }
}

/// A distribution over the `2^|AP|` assignments, stored densely by bit
/// pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PropDist {
    probs: Vec<f64>,
}

impl PropDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if !probs.len().is_power_of_two() {
            return Err(ModelError::Shape {
                what: "proposition distribution".into(),
                expected: probs.len().next_power_of_two(),
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ModelError::BadProbability {
                what: "proposition distribution".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(ModelError::NotNormalized {
                what: "proposition distribution".into(),
                sum,
            });
        }
        Ok(PropDist { probs })
    }

    /// Builds a distribution from sparse `(assignment, probability)` pairs.
    pub fn from_pairs(n_props: usize, pairs: &[(PropSet, f64)]) -> Result<Self, ModelError> {
        let mut probs = vec![0.0; 1 << n_props];
        for (s, p) in pairs {
            let i = s.bits() as usize;
            if i >= probs.len() {
                return Err(ModelError::OutOfRange {
                    what: "proposition distribution".into(),
                    index: i,
                    size: probs.len(),
                });
            }
            probs[i] += p;
        }
        PropDist::new(probs)
    }

    pub fn point(n_props: usize, sigma: PropSet) -> Self {
        let mut probs = vec![0.0; 1 << n_props];
        probs[sigma.bits() as usize] = 1.0;
        PropDist { probs }
    }

    /// Skips validation; used by callers that check normalization
    /// themselves, such as the IBU update.
    pub fn from_raw(probs: Vec<f64>) -> Self {
        PropDist { probs }
    }

    pub fn prob(&self, sigma: PropSet) -> f64 {
        self.probs
            .get(sigma.bits() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Non-zero entries in bit order.
    pub fn support(&self) -> impl Iterator<Item = (PropSet, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (PropSet::from_bits(i as u32), *p))
    }
}

pub trait PropClassifier: Send + Sync {
    fn classify(&self, h: &History) -> PropSet;
}

pub trait PropDistributionModel: Send + Sync {
    fn distribution(&self, h: &History) -> PropDist;
}

/// Predicts the RM-state belief directly. The output is raw; it is checked
/// against the belief invariants by [`crate::inference::tdm_predict`].
pub trait RmBeliefModel: Send + Sync {
    fn belief(&self, h: &History) -> Vec<f64>;
}

/// `M: H → Z` in one of its three concrete forms.
#[derive(Clone)]
pub enum AbstractionModel {
    Classifier(Arc<dyn PropClassifier>),
    Distribution(Arc<dyn PropDistributionModel>),
    RmBelief(Arc<dyn RmBeliefModel>),
}

impl AbstractionModel {
    pub fn form(&self) -> &'static str {
        match self {
            AbstractionModel::Classifier(_) => "proposition classifier",
            AbstractionModel::Distribution(_) => "proposition distribution",
            AbstractionModel::RmBelief(_) => "RM belief model",
        }
    }
}

impl fmt::Debug for AbstractionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AbstractionModel({})", self.form())
    }
}

/// Recovers `L(s_{t-1}, a_{t-1}, s_t)` from a history of a fully observable
/// environment, where each observation token is the state index.
pub struct ExactClassifier {
    label: Arc<dyn LabellingFunction>,
}

impl PropClassifier for ExactClassifier {
    fn classify(&self, h: &History) -> PropSet {
        h.last_transition()
            .map_or(PropSet::empty(), |(s, a, n)| self.label.label(s, a, n))
    }
}

/// The classifier's output as a point mass.
pub struct ExactDistribution {
    classifier: ExactClassifier,
    n_props: usize,
}

impl PropDistributionModel for ExactDistribution {
    fn distribution(&self, h: &History) -> PropDist {
        PropDist::point(self.n_props, self.classifier.classify(h))
    }
}

/// Replays the labelled history through the RM and returns a Dirac belief
/// on the resulting state.
pub struct ExactRmBelief {
    classifier: ExactClassifier,
    rm: Arc<RewardMachine>,
}

impl RmBeliefModel for ExactRmBelief {
    fn belief(&self, h: &History) -> Vec<f64> {
        let sigmas = h
            .transitions()
            .map(|(s, a, n)| self.classifier.label.label(s, a, n));
        let (states, _) = self.rm.run(sigmas).expect("labels fit the RM propositions");
        Belief::dirac(
            self.rm.n_states(),
            *states.last().expect("run yields the initial state"),
        )
        .into_probs()
    }
}

fn require_mdp(env: &Pomdp) -> Result<(), ModelError> {
    if env.is_fully_observable() {
        Ok(())
    } else {
        Err(ModelError::NotFullyObservable)
    }
}

/// Exact proposition classifier for a fully observable environment.
pub fn exact_classifier(
    env: &Pomdp,
    label: Arc<dyn LabellingFunction>,
) -> Result<AbstractionModel, ModelError> {
    require_mdp(env)?;
    Ok(AbstractionModel::Classifier(Arc::new(ExactClassifier {
        label,
    })))
}

/// Exact proposition distribution (a point mass on the true label).
pub fn exact_distribution(
    env: &Pomdp,
    rm: &RewardMachine,
    label: Arc<dyn LabellingFunction>,
) -> Result<AbstractionModel, ModelError> {
    require_mdp(env)?;
    Ok(AbstractionModel::Distribution(Arc::new(
        ExactDistribution {
            classifier: ExactClassifier { label },
            n_props: rm.n_props(),
        },
    )))
}

/// Exact RM-state predictor (a Dirac on the true RM state).
pub fn exact_rm_belief(
    env: &Pomdp,
    rm: Arc<RewardMachine>,
    label: Arc<dyn LabellingFunction>,
) -> Result<AbstractionModel, ModelError> {
    require_mdp(env)?;
    Ok(AbstractionModel::RmBelief(Arc::new(ExactRmBelief {
        classifier: ExactClassifier { label },
        rm,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_shape() {
        let mut h = History::new(4);
        assert_eq!(h.len(), 1);
        assert_eq!(h.last_transition(), None);
        h.push(1, 5);
        h.push(2, 6);
        assert_eq!(h.last_transition(), Some((5, 2, 6)));
        assert_eq!(
            h.transitions().collect::<Vec<_>>(),
            vec![(4, 1, 5), (5, 2, 6)]
        );
        assert_eq!(
            h.prefix(2),
            History::from_parts(vec![4, 5], vec![1]).unwrap()
        );
        assert!(History::from_parts(vec![1, 2], vec![]).is_none());
        assert!(History::from_parts(vec![], vec![]).is_none());
    }

    #[test]
    fn prop_dist_validation() {
        assert!(PropDist::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            PropDist::new(vec![0.5, 0.6]),
            Err(ModelError::NotNormalized { .. })
        ));
        assert!(matches!(
            PropDist::new(vec![1.5, -0.5]),
            Err(ModelError::BadProbability { .. })
        ));
        assert!(matches!(
            PropDist::new(vec![0.2, 0.3, 0.5]),
            Err(ModelError::Shape { .. })
        ));
        let d = PropDist::from_pairs(2, &[(PropSet::empty(), 0.7), (PropSet::singleton(0), 0.3)])
            .unwrap();
        assert_eq!(d.prob(PropSet::singleton(0)), 0.3);
        assert_eq!(d.support().count(), 2);
    }
}
