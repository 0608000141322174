//! Training and evaluation on Gold Mining.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    select_action, td_update, LearnerError, LinearQ, MemoryFlags, Parameterization, QInput,
    TieBreak,
};
use crate::abstraction::AbstractionModel;
use crate::envs::gold::{
    gold_models, gold_rm, Action, Cell, GoldLabeller, GoldMiningEnv, GoldModels, DEFAULT_HORIZON,
    N_CELLS,
};
use crate::inference::{InferenceMethod, InferenceState};
use crate::rm::{RewardMachine, RmStateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oracle,
    Memory,
    Naive,
    Ibu,
    Tdm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Oracle,
        Method::Memory,
        Method::Naive,
        Method::Ibu,
        Method::Tdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Memory => "memory",
            Method::Naive => "naive",
            Method::Ibu => "ibu",
            Method::Tdm => "tdm",
        }
    }

    pub fn parameterization(self) -> Parameterization {
        match self {
            Method::Oracle => Parameterization::Oracle,
            Method::Memory => Parameterization::MemoryOnly,
            _ => Parameterization::BeliefConditioned,
        }
    }

    pub fn inference(self) -> Option<InferenceMethod> {
        match self {
            Method::Naive => Some(InferenceMethod::Naive),
            Method::Ibu => Some(InferenceMethod::Ibu),
            Method::Tdm => Some(InferenceMethod::Tdm),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: f64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            discount: 0.99,
            epsilon: 0.2,
            total_steps: 1_000_000,
            eval_every: 10_000,
            horizon: DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let fail = |msg: &str| Err(LearnerError::Config(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail("epsilon must lie in [0, 1]");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.horizon == 0 {
            return fail("horizon must be positive");
        }
        Ok(())
    }
}

/// One evaluation of the greedy policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub ret: f64,
    pub ret_discounted: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Mean return over the last `n` evaluations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.points[self.points.len().saturating_sub(n)..];
        tail.iter().map(|p| p.ret).sum::<f64>() / tail.len() as f64
    }
}

/// The Gold Mining task with its labeller and toy abstraction models.
#[derive(Debug, Clone)]
pub struct GoldTask {
    pub rm: Arc<RewardMachine>,
    pub label: GoldLabeller,
    pub models: GoldModels,
}

impl GoldTask {
    pub fn new() -> Self {
        GoldTask::with_rm(gold_rm()).expect("bundled gold.rm declares gold and home")
    }

    pub fn with_rm(rm: RewardMachine) -> Result<Self, LearnerError> {
        let rm = Arc::new(rm);
        let label = GoldLabeller::for_rm(&rm).map_err(crate::product::ModelError::from)?;
        let models = gold_models(rm.clone()).map_err(crate::product::ModelError::from)?;
        Ok(GoldTask { rm, label, models })
    }

    fn model(&self, m: InferenceMethod) -> AbstractionModel {
        match m {
            InferenceMethod::Naive => self.models.naive.clone(),
            InferenceMethod::Ibu => self.models.ibu.clone(),
            InferenceMethod::Tdm => self.models.tdm.clone(),
        }
    }

    pub fn new_q(&self, method: Method) -> LinearQ {
        LinearQ::new(
            method.parameterization(),
            N_CELLS,
            self.rm.n_nonterminal(),
            Action::COUNT,
        )
    }
}

impl Default for GoldTask {
    fn default() -> Self {
        GoldTask::new()
    }
}

/// What the agent conditions on at one step.
#[derive(Debug, Clone)]
struct Snapshot {
    loc: usize,
    u: RmStateId,
    mem: MemoryFlags,
    belief: Vec<f64>,
}

impl Snapshot {
    fn input(&self, method: Method) -> QInput<'_> {
        match method {
            Method::Oracle => QInput::Oracle {
                loc: self.loc,
                u: self.u.0,
            },
            Method::Memory => QInput::Memory {
                loc: self.loc,
                mem: &self.mem,
            },
            _ => QInput::Belief {
                loc: self.loc,
                belief: &self.belief,
                mem: &self.mem,
            },
        }
    }
}

struct EpisodeStep {
    reward: f64,
    terminal: bool,
    truncated: bool,
}

struct Episode<'t> {
    task: &'t GoldTask,
    env: GoldMiningEnv,
    u: RmStateId,
    mem: MemoryFlags,
    inference: Option<InferenceState>,
}

impl<'t> Episode<'t> {
    fn start(task: &'t GoldTask, method: Method, horizon: usize) -> Result<Self, LearnerError> {
        let mut env = GoldMiningEnv::new(horizon);
        let pos = env.reset();
        let inference = match method.inference() {
            Some(m) => Some(InferenceState::new(
                m,
                task.model(m),
                task.rm.clone(),
                pos.index(),
            )?),
            None => None,
        };
        Ok(Episode {
            task,
            env,
            u: task.rm.initial(),
            mem: MemoryFlags::new(),
            inference,
        })
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            loc: self.env.pos().index(),
            u: self.u,
            mem: self.mem,
            belief: self
                .inference
                .as_ref()
                .map(|i| i.belief().probs().to_vec())
                .unwrap_or_default(),
        }
    }

    fn step(&mut self, a: Action) -> Result<EpisodeStep, LearnerError> {
        let pos = self.env.pos();
        let out = self.env.step(a);
        let sigma = self.task.label.label_cells(pos, a, out.pos);
        let (u, rm_reward) = self
            .task
            .rm
            .step(self.u, sigma)
            .map_err(crate::product::ModelError::from)?;
        self.u = u;
        if a == Action::Dig {
            if let Some(slot) = pos.tracked_slot() {
                self.mem.set(slot);
            }
        }
        if let Some(inf) = &mut self.inference {
            inf.observe(a.index(), out.pos.index())?;
        }
        Ok(EpisodeStep {
            reward: out.reward + rm_reward,
            terminal: self.task.rm.is_terminal(u),
            truncated: out.truncated,
        })
    }
}

/// The result of one greedy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ret: f64,
    pub ret_discounted: f64,
    pub trajectory: Vec<(Cell, Action)>,
}

/// Runs one episode without exploration, breaking ties by lowest action
/// index.
pub fn evaluate_policy(
    q: &LinearQ,
    task: &GoldTask,
    method: Method,
    horizon: usize,
    discount: f64,
) -> Result<Evaluation, LearnerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ep = Episode::start(task, method, horizon)?;
    let (mut ret, mut ret_discounted, mut scale) = (0.0, 0.0, 1.0);
    let mut trajectory = Vec::new();
    loop {
        let snap = ep.snapshot();
        let a = select_action(q, &snap.input(method), 0.0, TieBreak::Lowest, &mut rng)?;
        let a = Action::ALL[a];
        trajectory.push((ep.env.pos(), a));
        let st = ep.step(a)?;
        ret += st.reward;
        ret_discounted += scale * st.reward;
        scale *= discount;
        if st.terminal || st.truncated {
            return Ok(Evaluation {
                ret,
                ret_discounted,
                trajectory,
            });
        }
    }
}

/// Trains one agent with ε-greedy Q-learning, evaluating the greedy policy
/// every `eval_every` steps.
pub fn train_run(
    task: &GoldTask,
    method: Method,
    cfg: &TrainConfig,
) -> Result<(LearningCurve, LinearQ), LearnerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = task.new_q(method);
    let mut curve = LearningCurve::default();
    let mut ep = Episode::start(task, method, cfg.horizon)?;
    let mut snap = ep.snapshot();
    for step in 1..=cfg.total_steps {
        let a = select_action(
            &q,
            &snap.input(method),
            cfg.epsilon,
            TieBreak::Random,
            &mut rng,
        )?;
        let st = ep.step(Action::ALL[a])?;
        let next = ep.snapshot();
        let next_input = (!st.terminal).then(|| next.input(method));
        td_update(
            &mut q,
            &snap.input(method),
            a,
            st.reward,
            next_input.as_ref(),
            cfg.learning_rate,
            cfg.discount,
        )?;
        if st.terminal || st.truncated {
            ep = Episode::start(task, method, cfg.horizon)?;
            snap = ep.snapshot();
        } else {
            snap = next;
        }
        if step % cfg.eval_every == 0 {
            let e = evaluate_policy(&q, task, method, cfg.horizon, cfg.discount)?;
            curve.points.push(CurvePoint {
                step,
                ret: e.ret,
                ret_discounted: e.ret_discounted,
            });
        }
    }
    Ok((curve, q))
}
