//! Enumerable POMDPs and the product construction with a reward machine.
//!
//! [`build_product`] turns an environment, a reward machine and a labelling
//! function into a POMDP over pairs `(s, u)`:
//!
//! * `P'((s',u') | (s,u), a) = P(s' | s, a) · 1[δu(u, L(s,a,s')) = u']`
//! * `R'((s,u), a, (s',u')) = R(s, a, s') + δr(u, L(s,a,s'))`
//! * `ω'(o | (s,u), a) = ω(o | s, a)`
//! * `μ'(s,u) = μ(s) · 1[u = u1]`
//!
//! Pairs whose RM coordinate is terminal are absorbing with zero reward.
//! The abstraction model never enters the construction.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{AbstractionModel, LabellingFunction};
use crate::rm::{RewardMachine, RmError, RmStateId};

/// Tolerance on the total mass of every distribution.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} sums to {sum}, expected 1")]
    NotNormalized { what: String, sum: f64 },
    #[error("{what} has a negative or non-finite entry")]
    BadProbability { what: String },
    #[error("{what}: index {index} out of range (size {size})")]
    OutOfRange {
        what: String,
        index: usize,
        size: usize,
    },
    #[error("{what}: expected {expected} rows, got {got}")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("environment is not fully observable")]
    NotFullyObservable,
    #[error("fully observable environment must observe its state exactly (state {0})")]
    NotIdentityObservation(usize),
    #[error("labelling function sets undeclared propositions on ({s}, {a}, {next}): {bits:#b}")]
    LabelOutOfRange {
        s: usize,
        a: usize,
        next: usize,
        bits: u32,
    },
    #[error("paired rollout diverged: {env_side} vs {product_side} rewards")]
    RolloutDivergence {
        env_side: usize,
        product_side: usize,
    },
    #[error(transparent)]
    Rm(#[from] RmError),
}

/// A finite distribution stored as `(index, probability)` pairs in a fixed
/// order. The order matters: sampling walks the entries cumulatively.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dist {
    entries: Vec<(usize, f64)>,
}

impl Dist {
    pub fn new(entries: Vec<(usize, f64)>) -> Self {
        Dist { entries }
    }

    pub fn point(index: usize) -> Self {
        Dist {
            entries: vec![(index, 1.0)],
        }
    }

    pub fn uniform(n: usize) -> Self {
        Dist {
            entries: (0..n).map(|i| (i, 1.0 / n as f64)).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.entries
            .iter()
            .filter(|(i, _)| *i == index)
            .map(|(_, p)| p)
            .sum()
    }

    /// Inverse-CDF sample given a uniform draw `x ∈ [0, 1)`.
    pub fn sample_with(&self, x: f64) -> usize {
        inverse_cdf(self.entries.iter().map(|(i, p)| (*i, *p)), x)
    }

    fn check(&self, what: impl Fn() -> String, size: usize) -> Result<(), ModelError> {
        check_probs(self.entries.iter().map(|e| (e.0, e.1)), what, size)
    }
}

fn inverse_cdf(entries: impl Iterator<Item = (usize, f64)>, x: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in entries {
        acc += p;
        last = i;
        if x < acc {
            return i;
        }
    }
    last
}

fn check_probs(
    entries: impl Iterator<Item = (usize, f64)>,
    what: impl Fn() -> String,
    size: usize,
) -> Result<(), ModelError> {
    let mut sum = 0.0;
    for (i, p) in entries {
        if i >= size {
            return Err(ModelError::OutOfRange {
                what: what(),
                index: i,
                size,
            });
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(ModelError::BadProbability { what: what() });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(ModelError::NotNormalized { what: what(), sum });
    }
    Ok(())
}

/// One successor of a `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Observation distributions, either `ω(o | s)` or `ω(o | s, a_prev)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationModel {
    /// `per_state[s]`, used for every step.
    StateOnly(Vec<Dist>),
    /// `initial[s]` for the first observation, `after[s * n_actions + a]`
    /// once an action has been taken.
    ActionDependent {
        initial: Vec<Dist>,
        after: Vec<Dist>,
    },
}

/// Raw tables for [`Pomdp::new`].
#[derive(Debug, Clone)]
pub struct PomdpDef {
    pub n_states: usize,
    pub n_observations: usize,
    pub n_actions: usize,
    /// Indexed by `s * n_actions + a`.
    pub transitions: Vec<Vec<Outcome>>,
    pub observations: ObservationModel,
    pub initial: Dist,
    pub fully_observable: bool,
}

/// A finite POMDP with validated tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Pomdp {
    n_states: usize,
    n_observations: usize,
    n_actions: usize,
    transitions: Vec<Vec<Outcome>>,
    observations: ObservationModel,
    initial: Dist,
    fully_observable: bool,
}

impl Pomdp {
    pub fn new(def: PomdpDef) -> Result<Self, ModelError> {
        let PomdpDef {
            n_states,
            n_observations,
            n_actions,
            transitions,
            observations,
            initial,
            fully_observable,
        } = def;
        let shape = |what: &str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(ModelError::Shape {
                    what: what.to_string(),
                    expected,
                    got,
                })
            }
        };
        shape("transition table", n_states * n_actions, transitions.len())?;
        for (row, outcomes) in transitions.iter().enumerate() {
            check_probs(
                outcomes.iter().map(|o| (o.next, o.prob)),
                || {
                    format!(
                        "transition row (s={}, a={})",
                        row / n_actions,
                        row % n_actions
                    )
                },
                n_states,
            )?;
        }
        match &observations {
            ObservationModel::StateOnly(per_state) => {
                shape("observation table", n_states, per_state.len())?;
                for (s, d) in per_state.iter().enumerate() {
                    d.check(|| format!("observation row s={s}"), n_observations)?;
                }
            }
            ObservationModel::ActionDependent { initial, after } => {
                shape("initial observation table", n_states, initial.len())?;
                shape("observation table", n_states * n_actions, after.len())?;
                for (s, d) in initial.iter().chain(after).enumerate() {
                    d.check(|| format!("observation row {s}"), n_observations)?;
                }
            }
        }
        initial.check(|| "initial distribution".to_string(), n_states)?;
        let pomdp = Pomdp {
            n_states,
            n_observations,
            n_actions,
            transitions,
            observations,
            initial,
            fully_observable,
        };
        if fully_observable {
            for s in 0..n_states {
                let identity = |d: &Dist| d.entries.len() == 1 && d.entries[0].0 == s;
                if !identity(pomdp.observe(s, None))
                    || !(0..n_actions).all(|a| identity(pomdp.observe(s, Some(a))))
                {
                    return Err(ModelError::NotIdentityObservation(s));
                }
            }
        }
        Ok(pomdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_fully_observable(&self) -> bool {
        self.fully_observable
    }

    pub fn transition(&self, s: usize, a: usize) -> &[Outcome] {
        &self.transitions[s * self.n_actions + a]
    }

    /// Observation distribution in state `s`, optionally conditioned on the
    /// action that led there.
    pub fn observe(&self, s: usize, prev_action: Option<usize>) -> &Dist {
        match (&self.observations, prev_action) {
            (ObservationModel::StateOnly(d), _) => &d[s],
            (ObservationModel::ActionDependent { initial, .. }, None) => &initial[s],
            (ObservationModel::ActionDependent { after, .. }, Some(a)) => {
                &after[s * self.n_actions + a]
            }
        }
    }

    pub fn initial(&self) -> &Dist {
        &self.initial
    }

    pub fn sample_transition(&self, s: usize, a: usize, x: f64) -> Outcome {
        let row = self.transition(s, a);
        let next = inverse_cdf(row.iter().map(|o| (o.next, o.prob)), x);
        *row.iter()
            .find(|o| o.next == next)
            .expect("sampled successor is in the row")
    }
}

/// The POMDP over `S × (U ∪ F)`; state `(s, u)` has index
/// `s * |U ∪ F| + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPomdp {
    pomdp: Pomdp,
    n_env_states: usize,
    n_rm_states: usize,
    n_nonterminal: usize,
}

impl ProductPomdp {
    pub fn pomdp(&self) -> &Pomdp {
        &self.pomdp
    }

    pub fn n_env_states(&self) -> usize {
        self.n_env_states
    }

    pub fn n_rm_states(&self) -> usize {
        self.n_rm_states
    }

    pub fn index(&self, s: usize, u: RmStateId) -> usize {
        s * self.n_rm_states + u.0
    }

    pub fn split(&self, index: usize) -> (usize, RmStateId) {
        (
            index / self.n_rm_states,
            RmStateId(index % self.n_rm_states),
        )
    }

    pub fn is_terminal(&self, index: usize) -> bool {
        self.split(index).1 .0 >= self.n_nonterminal
    }

    /// Every float in the transition, observation and initial tables as raw
    /// bits, in a fixed order. Two products are the same model iff their
    /// fingerprints are equal.
    pub fn fingerprint(&self) -> Vec<u64> {
        let p = &self.pomdp;
        let mut out = vec![
            p.n_states as u64,
            p.n_observations as u64,
            p.n_actions as u64,
        ];
        for row in &p.transitions {
            out.push(row.len() as u64);
            for o in row {
                out.extend([o.next as u64, o.prob.to_bits(), o.reward.to_bits()]);
            }
        }
        let dists: Vec<&Dist> = match &p.observations {
            ObservationModel::StateOnly(d) => d.iter().collect(),
            ObservationModel::ActionDependent { initial, after } => {
                initial.iter().chain(after).collect()
            }
        };
        for d in dists.into_iter().chain([&p.initial]) {
            out.push(d.entries.len() as u64);
            for (i, pr) in &d.entries {
                out.extend([*i as u64, pr.to_bits()]);
            }
        }
        out
    }
}

/// Builds the product of an environment with a reward machine under a
/// labelling function. The environment's own reward is kept and the RM
/// reward is added to it.
pub fn build_product(
    env: &Pomdp,
    rm: &RewardMachine,
    label: &dyn LabellingFunction,
) -> Result<ProductPomdp, ModelError> {
    let n_s = env.n_states();
    let n_a = env.n_actions();
    let n_u = rm.n_states();
    let n_props = rm.n_props();

    let mut transitions = Vec::with_capacity(n_s * n_u * n_a);
    for s in 0..n_s {
        for u in (0..n_u).map(RmStateId) {
            for a in 0..n_a {
                let here = s * n_u + u.0;
                if rm.is_terminal(u) {
                    transitions.push(vec![Outcome {
                        next: here,
                        prob: 1.0,
                        reward: 0.0,
                    }]);
                    continue;
                }
                let mut row = Vec::with_capacity(env.transition(s, a).len());
                for o in env.transition(s, a) {
                    let sigma = label.label(s, a, o.next);
                    if !sigma.fits(n_props) {
                        return Err(ModelError::LabelOutOfRange {
                            s,
                            a,
                            next: o.next,
                            bits: sigma.bits(),
                        });
                    }
                    let (u_next, r_rm) = rm.step(u, sigma)?;
                    row.push(Outcome {
                        next: o.next * n_u + u_next.0,
                        prob: o.prob,
                        reward: o.reward + r_rm,
                    });
                }
                transitions.push(row);
            }
        }
    }

    let lift = |per_state: &dyn Fn(usize) -> Dist| -> Vec<Dist> {
        (0..n_s)
            .flat_map(|s| std::iter::repeat_n(per_state(s), n_u))
            .collect()
    };
    let observations = match &env.observations {
        ObservationModel::StateOnly(d) => ObservationModel::StateOnly(lift(&|s| d[s].clone())),
        ObservationModel::ActionDependent { initial, after } => {
            let mut lifted_after = Vec::with_capacity(n_s * n_u * n_a);
            for s in 0..n_s {
                for _ in 0..n_u {
                    lifted_after.extend_from_slice(&after[s * n_a..(s + 1) * n_a]);
                }
            }
            ObservationModel::ActionDependent {
                initial: lift(&|s| initial[s].clone()),
                after: lifted_after,
            }
        }
    };
    let initial = Dist::new(
        env.initial()
            .entries()
            .iter()
            .map(|(s, p)| (s * n_u + rm.initial().0, *p))
            .collect(),
    );

    let pomdp = Pomdp::new(PomdpDef {
        n_states: n_s * n_u,
        n_observations: env.n_observations(),
        n_actions: n_a,
        transitions,
        observations,
        initial,
        // Observations are of `s` only, so the product is never fully
        // observable unless the RM has a single state.
        fully_observable: env.is_fully_observable() && n_u == 1,
    })?;
    Ok(ProductPomdp {
        pomdp,
        n_env_states: n_s,
        n_rm_states: n_u,
        n_nonterminal: rm.n_nonterminal(),
    })
}

/// A Noisy RM environment: an environment, a reward machine, a hidden
/// labelling function and the agent's abstraction model.
#[derive(Clone)]
pub struct NoisyRmEnv {
    pub env: Arc<Pomdp>,
    pub rm: Arc<RewardMachine>,
    pub label: Arc<dyn LabellingFunction>,
    pub model: AbstractionModel,
}

impl NoisyRmEnv {
    /// The equivalent POMDP. Depends only on `env`, `rm` and `label`.
    pub fn product(&self) -> Result<ProductPomdp, ModelError> {
        build_product(&self.env, &self.rm, self.label.as_ref())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: usize,
    pub reward: f64,
    pub done: bool,
}

/// Executes a Noisy RM environment directly: samples the environment,
/// labels the transition and advances the reward machine.
pub struct NoisyRmExecution<'a> {
    env: &'a Pomdp,
    rm: &'a RewardMachine,
    label: &'a dyn LabellingFunction,
    state: usize,
    rm_state: RmStateId,
}

impl<'a> NoisyRmExecution<'a> {
    /// Samples the initial state and returns it with its first observation.
    pub fn reset(
        env: &'a Pomdp,
        rm: &'a RewardMachine,
        label: &'a dyn LabellingFunction,
        rng: &mut impl Rng,
    ) -> (Self, usize) {
        let state = env.initial().sample_with(rng.random());
        let obs = env.observe(state, None).sample_with(rng.random());
        (
            NoisyRmExecution {
                env,
                rm,
                label,
                state,
                rm_state: rm.initial(),
            },
            obs,
        )
    }

    pub fn state(&self) -> (usize, RmStateId) {
        (self.state, self.rm_state)
    }

    pub fn step(&mut self, a: usize, rng: &mut impl Rng) -> Result<Step, ModelError> {
        let o = self.env.sample_transition(self.state, a, rng.random());
        let sigma = self.label.label(self.state, a, o.next);
        let (u_next, r_rm) = self.rm.step(self.rm_state, sigma)?;
        self.state = o.next;
        self.rm_state = u_next;
        let observation = self
            .env
            .observe(self.state, Some(a))
            .sample_with(rng.random());
        Ok(Step {
            observation,
            reward: o.reward + r_rm,
            done: self.rm.is_terminal(u_next),
        })
    }
}

/// Executes the product POMDP.
pub struct ProductExecution<'a> {
    product: &'a ProductPomdp,
    state: usize,
}

impl<'a> ProductExecution<'a> {
    pub fn reset(product: &'a ProductPomdp, rng: &mut impl Rng) -> (Self, usize) {
        let p = product.pomdp();
        let state = p.initial().sample_with(rng.random());
        let obs = p.observe(state, None).sample_with(rng.random());
        (ProductExecution { product, state }, obs)
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn step(&mut self, a: usize, rng: &mut impl Rng) -> Step {
        let p = self.product.pomdp();
        let o = p.sample_transition(self.state, a, rng.random());
        self.state = o.next;
        let observation = p.observe(self.state, Some(a)).sample_with(rng.random());
        Step {
            observation,
            reward: o.reward,
            done: self.product.is_terminal(self.state),
        }
    }
}

/// Replays one action sequence through the direct execution and through the
/// product, each driven by its own generator seeded with `seed`. Both sides
/// stop at the first terminal step.
pub fn paired_rollout(
    env: &Pomdp,
    rm: &RewardMachine,
    label: &dyn LabellingFunction,
    product: &ProductPomdp,
    actions: &[usize],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
    let (mut direct, _) = NoisyRmExecution::reset(env, rm, label, &mut rng_a);
    let (mut prod, _) = ProductExecution::reset(product, &mut rng_b);
    let mut rewards_a = Vec::new();
    let mut rewards_b = Vec::new();
    let mut done_a = false;
    let mut done_b = false;
    for &a in actions {
        if !done_a {
            let st = direct.step(a, &mut rng_a)?;
            rewards_a.push(st.reward);
            done_a = st.done;
        }
        if !done_b {
            let st = prod.step(a, &mut rng_b);
            rewards_b.push(st.reward);
            done_b = st.done;
        }
    }
    if rewards_a.len() != rewards_b.len() {
        return Err(ModelError::RolloutDivergence {
            env_side: rewards_a.len(),
            product_side: rewards_b.len(),
        });
    }
    Ok((rewards_a, rewards_b))
}
