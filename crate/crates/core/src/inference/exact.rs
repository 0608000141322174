//! Forward filtering on an enumerable product POMDP.
//!
//! The posterior over product states `(s, u)` after `h_t` is
//! `b_t(x') ∝ ω'(o_t | x', a_{t-1}) · Σ_x P'(x' | x, a_{t-1}) · b_{t-1}(x)`,
//! and its marginal over `u` is `Pr(u_t | h_t)`.

use std::sync::Arc;

use super::{Belief, InferenceError};
use crate::abstraction::{History, RmBeliefModel, Token};
use crate::product::ProductPomdp;

/// A distribution over the states of a product POMDP.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    probs: Vec<f64>,
}

impl JointBelief {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        JointBelief { probs }
    }

    /// Marginal over the RM coordinate.
    pub fn rm_marginal(&self, product: &ProductPomdp) -> Belief {
        let mut out = vec![0.0; product.n_rm_states()];
        for (i, p) in self.probs.iter().enumerate() {
            out[product.split(i).1 .0] += p;
        }
        Belief { probs: out }
    }
}

fn normalize(mut unnorm: Vec<f64>, observation: Token) -> Result<Vec<f64>, InferenceError> {
    let z: f64 = unnorm.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Err(InferenceError::ImpossibleEvidence { observation });
    }
    for p in &mut unnorm {
        *p /= z;
    }
    Ok(unnorm)
}

/// Conditions the product's initial distribution on the first observation.
pub fn exact_filter_init(
    product: &ProductPomdp,
    o1: Token,
) -> Result<(JointBelief, Belief), InferenceError> {
    let p = product.pomdp();
    let mut unnorm = vec![0.0; p.n_states()];
    for &(x, mu) in p.initial().entries() {
        unnorm[x] += mu * p.observe(x, None).prob(o1);
    }
    let joint = JointBelief {
        probs: normalize(unnorm, o1)?,
    };
    let marginal = joint.rm_marginal(product);
    Ok((joint, marginal))
}

/// One predict-correct step of the forward filter.
pub fn exact_filter_step(
    product: &ProductPomdp,
    prior: &JointBelief,
    action: Token,
    observation: Token,
) -> Result<(JointBelief, Belief), InferenceError> {
    let p = product.pomdp();
    let mut predicted = vec![0.0; p.n_states()];
    for (x, &mass) in prior.probs.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for o in p.transition(x, action) {
            predicted[o.next] += mass * o.prob;
        }
    }
    for (x, q) in predicted.iter_mut().enumerate() {
        if *q != 0.0 {
            *q *= p.observe(x, Some(action)).prob(observation);
        }
    }
    let joint = JointBelief {
        probs: normalize(predicted, observation)?,
    };
    let marginal = joint.rm_marginal(product);
    Ok((joint, marginal))
}

/// Runs the filter over a whole history.
pub fn exact_filter(product: &ProductPomdp, h: &History) -> Result<Belief, InferenceError> {
    let (mut joint, mut marginal) = exact_filter_init(product, h.observations()[0])?;
    for (i, &a) in h.actions().iter().enumerate() {
        (joint, marginal) = exact_filter_step(product, &joint, a, h.observations()[i + 1])?;
    }
    Ok(marginal)
}

/// The RM belief model whose output is the exact posterior `Pr(u_t | h_t)`.
///
/// Histories with zero likelihood yield an all-zero vector, which
/// [`super::tdm_predict`] rejects.
pub struct ExactFilterModel {
    product: Arc<ProductPomdp>,
}

impl ExactFilterModel {
    pub fn new(product: Arc<ProductPomdp>) -> Self {
        ExactFilterModel { product }
    }
}

impl RmBeliefModel for ExactFilterModel {
    fn belief(&self, h: &History) -> Vec<f64> {
        match exact_filter(&self.product, h) {
            Ok(b) => b.into_probs(),
            Err(_) => vec![0.0; self.product.n_rm_states()],
        }
    }
}
