//! The Gold Mining grid.
//!
//! A 4×4 grid, cells addressed `(col, row)` with row 0 at the bottom. The
//! robot starts at `(0, 3)`; the depot is `(0, 0)`. Every cell of column 3
//! holds gold, `(1, 2)` and `(1, 1)` hold pyrite. The robot's prior belief
//! that a cell yields gold is 0.8 on column 3, 0.3 at `(1, 2)`, 0.6 at
//! `(1, 1)` and 0 elsewhere.
//!
//! `gold` holds when the robot digs in column 3; `home` holds when a
//! transition arrives at the depot. Each movement action costs 0.02, digging
//! is free, and bumping into the border still pays the movement cost.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{
    AbstractionModel, History, LabellingFunction, PropClassifier, PropDist, PropDistributionModel,
    RmBeliefModel,
};
use crate::inference::{ibu_update, init_belief};
use crate::product::{Dist, ModelError, ObservationModel, Outcome, Pomdp, PomdpDef};
use crate::rm::{PropSet, RewardMachine, RmError, RmStateId};

pub const WIDTH: usize = 4;
pub const HEIGHT: usize = 4;
pub const N_CELLS: usize = WIDTH * HEIGHT;
pub const MOVE_PENALTY: f64 = 0.02;
pub const DEFAULT_HORIZON: usize = 500;

pub const START: Cell = Cell { col: 0, row: 3 };
pub const DEPOT: Cell = Cell { col: 0, row: 0 };

/// Cells with nonzero gold belief, in memory-feature order: gold cells by
/// row, then the two pyrite cells.
pub const TRACKED_CELLS: [Cell; 6] = [
    Cell { col: 3, row: 0 },
    Cell { col: 3, row: 1 },
    Cell { col: 3, row: 2 },
    Cell { col: 3, row: 3 },
    Cell { col: 1, row: 1 },
    Cell { col: 1, row: 2 },
];

/// The canonical Gold Mining reward machine text.
pub const GOLD_RM: &str = include_str!("../../rms/gold.rm");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Cell { col, row }
    }

    /// State and observation index, `row * WIDTH + col`.
    pub const fn index(self) -> usize {
        self.row * WIDTH + self.col
    }

    pub const fn from_index(i: usize) -> Self {
        Cell {
            col: i % WIDTH,
            row: i / WIDTH,
        }
    }

    pub fn has_gold(self) -> bool {
        self.col == 3
    }

    /// The agent's belief that digging here yields gold.
    pub fn gold_belief(self) -> f64 {
        match (self.col, self.row) {
            (3, _) => 0.8,
            (1, 2) => 0.3,
            (1, 1) => 0.6,
            _ => 0.0,
        }
    }

    /// Position of this cell in [`TRACKED_CELLS`].
    pub fn tracked_slot(self) -> Option<usize> {
        TRACKED_CELLS.iter().position(|c| *c == self)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Dig,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Dig,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Action::ALL.get(i).copied()
    }

    pub fn is_move(self) -> bool {
        self != Action::Dig
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Dig => "dig",
        }
    }
}

/// Deterministic dynamics: the next cell and the (non-positive) movement
/// reward. RM rewards are added by the caller.
pub fn gold_step(pos: Cell, a: Action) -> (Cell, f64) {
    let next = match a {
        Action::Up if pos.row + 1 < HEIGHT => Cell::new(pos.col, pos.row + 1),
        Action::Down if pos.row > 0 => Cell::new(pos.col, pos.row - 1),
        Action::Left if pos.col > 0 => Cell::new(pos.col - 1, pos.row),
        Action::Right if pos.col + 1 < WIDTH => Cell::new(pos.col + 1, pos.row),
        _ => pos,
    };
    let reward = if a.is_move() { -MOVE_PENALTY } else { 0.0 };
    (next, reward)
}

/// Result of [`GoldMiningEnv::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldStep {
    pub pos: Cell,
    pub reward: f64,
    /// The horizon cap fired on this step.
    pub truncated: bool,
}

/// The grid with an episode step counter.
#[derive(Debug, Clone)]
pub struct GoldMiningEnv {
    pos: Cell,
    t: usize,
    horizon: usize,
}

impl GoldMiningEnv {
    pub fn new(horizon: usize) -> Self {
        GoldMiningEnv {
            pos: START,
            t: 0,
            horizon,
        }
    }

    pub fn reset(&mut self) -> Cell {
        self.pos = START;
        self.t = 0;
        self.pos
    }

    pub fn pos(&self) -> Cell {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, a: Action) -> GoldStep {
        let (pos, reward) = gold_step(self.pos, a);
        self.pos = pos;
        self.t += 1;
        GoldStep {
            pos,
            reward,
            truncated: self.t >= self.horizon,
        }
    }
}

/// The grid as an enumerable, fully observable POMDP with the movement
/// penalty as its reward.
pub fn gold_pomdp() -> Pomdp {
    let mut transitions = Vec::with_capacity(N_CELLS * Action::COUNT);
    for i in 0..N_CELLS {
        for a in Action::ALL {
            let (next, reward) = gold_step(Cell::from_index(i), a);
            transitions.push(vec![Outcome {
                next: next.index(),
                prob: 1.0,
                reward,
            }]);
        }
    }
    Pomdp::new(PomdpDef {
        n_states: N_CELLS,
        n_observations: N_CELLS,
        n_actions: Action::COUNT,
        transitions,
        observations: ObservationModel::StateOnly((0..N_CELLS).map(Dist::point).collect()),
        initial: Dist::point(START.index()),
        fully_observable: true,
    })
    .expect("gold mining tables are well formed")
}

pub fn gold_rm() -> RewardMachine {
    RewardMachine::from_text(GOLD_RM).expect("bundled gold.rm is valid")
}

/// Proposition indices of `gold` and `home` in a particular machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldProps {
    pub gold: usize,
    pub home: usize,
}

impl GoldProps {
    pub fn for_rm(rm: &RewardMachine) -> Result<Self, RmError> {
        let find = |name: &str| {
            rm.prop_index(name).ok_or_else(|| RmError::UndeclaredProp {
                pos: Default::default(),
                name: name.into(),
            })
        };
        Ok(GoldProps {
            gold: find("gold")?,
            home: find("home")?,
        })
    }

    fn home_set(self, next: Cell) -> PropSet {
        if next == DEPOT {
            PropSet::singleton(self.home)
        } else {
            PropSet::empty()
        }
    }
}

/// The ground-truth labelling function.
#[derive(Debug, Clone, Copy)]
pub struct GoldLabeller {
    pub props: GoldProps,
}

impl GoldLabeller {
    pub fn for_rm(rm: &RewardMachine) -> Result<Self, RmError> {
        Ok(GoldLabeller {
            props: GoldProps::for_rm(rm)?,
        })
    }

    pub fn label_cells(&self, pos: Cell, a: Action, next: Cell) -> PropSet {
        let mut sigma = self.props.home_set(next);
        if a == Action::Dig && pos.has_gold() {
            sigma = sigma.with(self.props.gold);
        }
        sigma
    }
}

impl LabellingFunction for GoldLabeller {
    fn label(&self, s: usize, a: usize, next: usize) -> PropSet {
        let a = Action::from_index(a).expect("gold mining action index");
        self.label_cells(Cell::from_index(s), a, Cell::from_index(next))
    }
}

fn last_dig(h: &History) -> Option<(Cell, Action, Cell)> {
    h.last_transition().map(|(s, a, n)| {
        (
            Cell::from_index(s),
            Action::from_index(a).expect("gold mining action index"),
            Cell::from_index(n),
        )
    })
}

/// Thresholds the cell belief at 0.5 on digs; `home` is always correct.
#[derive(Debug, Clone, Copy)]
pub struct ToyClassifier {
    props: GoldProps,
}

impl PropClassifier for ToyClassifier {
    fn classify(&self, h: &History) -> PropSet {
        let Some((pos, a, next)) = last_dig(h) else {
            return PropSet::empty();
        };
        let mut sigma = self.props.home_set(next);
        if a == Action::Dig && pos.gold_belief() >= 0.5 {
            sigma = sigma.with(self.props.gold);
        }
        sigma
    }
}

/// Emits the cell belief as the probability of `gold` on digs; `home` is
/// always correct.
#[derive(Debug, Clone, Copy)]
pub struct ToyDistribution {
    props: GoldProps,
    n_props: usize,
}

impl ToyDistribution {
    fn for_transition(&self, pos: Cell, a: Action, next: Cell, first_dig_here: bool) -> PropDist {
        let base = self.props.home_set(next);
        let p = if a == Action::Dig && first_dig_here {
            pos.gold_belief()
        } else {
            0.0
        };
        let mut probs = vec![0.0; 1 << self.n_props];
        probs[base.bits() as usize] += 1.0 - p;
        probs[base.with(self.props.gold).bits() as usize] += p;
        PropDist::from_raw(probs)
    }
}

impl PropDistributionModel for ToyDistribution {
    fn distribution(&self, h: &History) -> PropDist {
        match last_dig(h) {
            Some((pos, a, next)) => self.for_transition(pos, a, next, true),
            None => PropDist::point(self.n_props, PropSet::empty()),
        }
    }
}

/// The IBU recursion with the toy distribution, except that a dig at a cell
/// already dug earlier in the episode carries no gold evidence.
#[derive(Debug, Clone)]
pub struct ToyTdm {
    dist: ToyDistribution,
    rm: Arc<RewardMachine>,
}

impl RmBeliefModel for ToyTdm {
    fn belief(&self, h: &History) -> Vec<f64> {
        let mut belief = init_belief(&self.rm);
        let mut dug = [false; N_CELLS];
        for (s, a, n) in h.transitions() {
            let (pos, a, next) = (
                Cell::from_index(s),
                Action::from_index(a).expect("action index"),
                Cell::from_index(n),
            );
            let first = a == Action::Dig && !dug[pos.index()];
            if a == Action::Dig {
                dug[pos.index()] = true;
            }
            let m = self.dist.for_transition(pos, a, next, first);
            belief = ibu_update(&self.rm, &belief, &m).expect("toy distribution is normalized");
        }
        belief.into_probs()
    }
}

/// The three toy abstraction models.
#[derive(Debug, Clone)]
pub struct GoldModels {
    pub naive: AbstractionModel,
    pub ibu: AbstractionModel,
    pub tdm: AbstractionModel,
}

pub fn gold_models(rm: Arc<RewardMachine>) -> Result<GoldModels, RmError> {
    let props = GoldProps::for_rm(&rm)?;
    let dist = ToyDistribution {
        props,
        n_props: rm.n_props(),
    };
    Ok(GoldModels {
        naive: AbstractionModel::Classifier(Arc::new(ToyClassifier { props })),
        ibu: AbstractionModel::Distribution(Arc::new(dist)),
        tdm: AbstractionModel::RmBelief(Arc::new(ToyTdm { dist, rm })),
    })
}

/// A logged episode: the history and the ground-truth RM state at every
/// time step (`true_states.len() == history.len()`).
#[derive(Debug, Clone, PartialEq)]
pub struct GoldEpisode {
    pub history: History,
    pub true_states: Vec<RmStateId>,
    pub rewards: Vec<f64>,
}

/// Rolls out one episode under uniformly random actions until the RM
/// terminates or the horizon fires.
pub fn random_episode(
    rm: &RewardMachine,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<GoldEpisode, ModelError> {
    let label = GoldLabeller::for_rm(rm)?;
    let mut env = GoldMiningEnv::new(horizon);
    let mut pos = env.reset();
    let mut u = rm.initial();
    let mut history = History::new(pos.index());
    let mut true_states = vec![u];
    let mut rewards = Vec::new();
    loop {
        let a = Action::ALL[rng.random_range(0..Action::COUNT)];
        let st = env.step(a);
        let (u_next, r) = rm.step(u, label.label_cells(pos, a, st.pos))?;
        history.push(a.index(), st.pos.index());
        true_states.push(u_next);
        rewards.push(st.reward + r);
        pos = st.pos;
        u = u_next;
        if rm.is_terminal(u) || st.truncated {
            break;
        }
    }
    Ok(GoldEpisode {
        history,
        true_states,
        rewards,
    })
}

/// `n` random episodes from one seeded generator.
pub fn random_episodes(
    rm: &RewardMachine,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<GoldEpisode>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_episode(rm, horizon, &mut rng))
        .collect()
}

/// Runs a belief-producing model over every prefix of an episode.
pub fn beliefs_along(model: &dyn RmBeliefModel, h: &History) -> Vec<Vec<f64>> {
    (1..=h.len()).map(|t| model.belief(&h.prefix(t))).collect()
}
