//! Reward machines: representation, text format, validation and stepping.
//!
//! A machine is parsed into an [`RmSpec`] (names resolved, edges kept as
//! written) and then compiled by [`RmSpec::validate`] into a
//! [`RewardMachine`] whose transition function is a dense table over every
//! `(state, assignment)` pair. Assignments that fire no user edge fall back
//! to a self-loop with reward 0.

mod guard;
mod parse;

use std::collections::VecDeque;
use std::fmt;

pub use guard::{Guard, GuardDisplay, TruthTable};
pub use parse::parse_rm;

/// Maximum number of atomic propositions; the dense table has
/// `|U| * 2^MAX_PROPS` entries at most.
pub const MAX_PROPS: usize = 16;

/// A truth assignment over the machine's propositions. Bit `i` is the
/// proposition declared at position `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PropSet(u32);

impl PropSet {
    pub const fn empty() -> Self {
        PropSet(0)
    }

    pub const fn from_bits(bits: u32) -> Self {
        PropSet(bits)
    }

    pub fn singleton(prop: usize) -> Self {
        PropSet(1 << prop)
    }

    pub fn from_props(props: impl IntoIterator<Item = usize>) -> Self {
        props.into_iter().fold(PropSet::empty(), |s, p| s.with(p))
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, prop: usize) -> bool {
        prop < 32 && (self.0 >> prop) & 1 == 1
    }

    #[must_use]
    pub fn with(self, prop: usize) -> Self {
        PropSet(self.0 | (1 << prop))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// True if no bit outside the first `n_props` is set.
    pub fn fits(self, n_props: usize) -> bool {
        n_props >= 32 || self.0 >> n_props == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |i| self.contains(*i))
    }

    /// All `2^n_props` assignments in increasing bit order.
    pub fn all(n_props: usize) -> impl Iterator<Item = PropSet> {
        (0..(1u32 << n_props)).map(PropSet)
    }
}

/// Index of a state in `U ∪ F`. Non-terminal states come first, terminals
/// occupy the indices `|U|..|U| + |F|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RmStateId(pub usize);

impl RmStateId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Position in an RM source document (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: RmStateId,
    pub target: RmStateId,
    pub guard: Guard,
    pub reward: f64,
    /// Where the edge was written; `None` for validator-synthesized edges.
    pub pos: Option<Pos>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RmError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: duplicate {kind} name `{name}`")]
    Duplicate {
        pos: Pos,
        kind: &'static str,
        name: String,
    },
    #[error("{pos}: undeclared state `{name}`")]
    UndeclaredState { pos: Pos, name: String },
    #[error("{pos}: undeclared proposition `{name}`")]
    UndeclaredProp { pos: Pos, name: String },
    #[error("missing `{0}` declaration")]
    Missing(&'static str),
    #[error("{0} propositions declared, at most {MAX_PROPS} are supported")]
    TooManyProps(usize),
    #[error("state `{state}` is nondeterministic under {sigma}: edges at lines {first} and {second} both fire")]
    Nondeterministic {
        state: String,
        sigma: String,
        first: usize,
        second: usize,
    },
    #[error("state `{0}` is unreachable from the initial state")]
    Unreachable(String),
    #[error("line {line}: edge leaves terminal state `{state}`")]
    EdgeFromTerminal { state: String, line: usize },
    #[error("initial state `{0}` must not be terminal")]
    TerminalInitial(String),
    #[error("cannot step from terminal state `{0}`")]
    StepFromTerminal(String),
    #[error("assignment {0:#b} sets undeclared propositions")]
    UndeclaredBits(u32),
}

/// A parsed, name-resolved but unvalidated reward machine.
#[derive(Debug, Clone, PartialEq)]
pub struct RmSpec {
    pub aps: Vec<String>,
    pub states: Vec<String>,
    pub terminals: Vec<String>,
    pub initial: RmStateId,
    pub edges: Vec<Edge>,
}

impl RmSpec {
    pub fn n_states(&self) -> usize {
        self.states.len() + self.terminals.len()
    }

    fn name(&self, u: RmStateId) -> &str {
        if u.0 < self.states.len() {
            &self.states[u.0]
        } else {
            &self.terminals[u.0 - self.states.len()]
        }
    }

    /// Compiles the dense transition table and checks determinism,
    /// reachability and that terminals have no outgoing edges.
    pub fn validate(self) -> Result<RewardMachine, RmError> {
        let n_props = self.aps.len();
        if n_props > MAX_PROPS {
            return Err(RmError::TooManyProps(n_props));
        }
        let n_u = self.states.len();
        if self.initial.0 >= n_u {
            return Err(RmError::TerminalInitial(
                self.name(self.initial).to_string(),
            ));
        }
        for e in &self.edges {
            if e.source.0 >= n_u {
                return Err(RmError::EdgeFromTerminal {
                    state: self.name(e.source).to_string(),
                    line: e.pos.map_or(0, |p| p.line),
                });
            }
        }

        let n_sigma = 1usize << n_props;
        let mut table = Vec::with_capacity(n_u * n_sigma);
        let mut edges = self.edges.clone();
        for u in 0..n_u {
            let outgoing: Vec<(&Edge, TruthTable)> = self
                .edges
                .iter()
                .filter(|e| e.source.0 == u)
                .map(|e| (e, e.guard.truth_table(n_props)))
                .collect();
            let mut defaulted = false;
            for sigma in PropSet::all(n_props) {
                let mut fired: Option<&Edge> = None;
                for (edge, tt) in &outgoing {
                    if !tt.get(sigma) {
                        continue;
                    }
                    if let Some(prev) = fired {
                        return Err(RmError::Nondeterministic {
                            state: self.states[u].clone(),
                            sigma: format_props(&self.aps, sigma),
                            first: prev.pos.map_or(0, |p| p.line),
                            second: edge.pos.map_or(0, |p| p.line),
                        });
                    }
                    fired = Some(edge);
                }
                match fired {
                    Some(e) => table.push(Transition {
                        next: e.target,
                        reward: e.reward,
                    }),
                    None => {
                        defaulted = true;
                        table.push(Transition {
                            next: RmStateId(u),
                            reward: 0.0,
                        });
                    }
                }
            }
            if defaulted {
                edges.push(Edge {
                    source: RmStateId(u),
                    target: RmStateId(u),
                    guard: Guard::Otherwise,
                    reward: 0.0,
                    pos: None,
                });
            }
        }

        let n_all = self.n_states();
        let mut seen = vec![false; n_all];
        let mut queue = VecDeque::from([self.initial.0]);
        seen[self.initial.0] = true;
        while let Some(u) = queue.pop_front() {
            if u >= n_u {
                continue;
            }
            for t in &table[u * n_sigma..(u + 1) * n_sigma] {
                if !seen[t.next.0] {
                    seen[t.next.0] = true;
                    queue.push_back(t.next.0);
                }
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(RmError::Unreachable(self.name(RmStateId(u)).to_string()));
        }

        Ok(RewardMachine {
            spec: self,
            effective_edges: edges,
            table,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: RmStateId,
    pub reward: f64,
}

/// A validated reward machine. Immutable; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMachine {
    spec: RmSpec,
    /// User edges followed by synthesized `otherwise` self-loops.
    effective_edges: Vec<Edge>,
    table: Vec<Transition>,
}

impl RewardMachine {
    /// Parses and validates a document in the RM text format.
    pub fn from_text(text: &str) -> Result<Self, RmError> {
        parse_rm(text)?.validate()
    }

    pub fn spec(&self) -> &RmSpec {
        &self.spec
    }

    pub fn aps(&self) -> &[String] {
        &self.spec.aps
    }

    pub fn n_props(&self) -> usize {
        self.spec.aps.len()
    }

    /// `|U|`, the non-terminal states.
    pub fn n_nonterminal(&self) -> usize {
        self.spec.states.len()
    }

    /// `|U ∪ F|`.
    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn initial(&self) -> RmStateId {
        self.spec.initial
    }

    pub fn is_terminal(&self, u: RmStateId) -> bool {
        u.0 >= self.spec.states.len()
    }

    pub fn state_name(&self, u: RmStateId) -> &str {
        self.spec.name(u)
    }

    /// Names of all states in index order, terminals last.
    pub fn state_names(&self) -> impl Iterator<Item = &str> {
        self.spec
            .states
            .iter()
            .chain(&self.spec.terminals)
            .map(String::as_str)
    }

    pub fn state_id(&self, name: &str) -> Option<RmStateId> {
        self.state_names().position(|n| n == name).map(RmStateId)
    }

    pub fn prop_index(&self, name: &str) -> Option<usize> {
        self.spec.aps.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.effective_edges
    }

    pub fn user_edges(&self) -> &[Edge] {
        &self.spec.edges
    }

    /// The full dense table, row-major over `(u, σ)` for `u ∈ U`.
    pub fn table(&self) -> &[Transition] {
        &self.table
    }

    /// Applies the state-transition and state-reward functions jointly.
    pub fn step(&self, u: RmStateId, sigma: PropSet) -> Result<(RmStateId, f64), RmError> {
        if self.is_terminal(u) {
            return Err(RmError::StepFromTerminal(self.state_name(u).to_string()));
        }
        if !sigma.fits(self.n_props()) {
            return Err(RmError::UndeclaredBits(sigma.bits()));
        }
        let t = self.table[(u.0 << self.n_props()) | sigma.bits() as usize];
        Ok((t.next, t.reward))
    }

    /// Replays an assignment sequence from the initial state, stopping at
    /// the first terminal. Returns the visited states (starting with the
    /// initial one) and the rewards.
    pub fn run(
        &self,
        sigmas: impl IntoIterator<Item = PropSet>,
    ) -> Result<(Vec<RmStateId>, Vec<f64>), RmError> {
        let mut u = self.initial();
        let mut states = vec![u];
        let mut rewards = Vec::new();
        for sigma in sigmas {
            if self.is_terminal(u) {
                break;
            }
            let (next, r) = self.step(u, sigma)?;
            u = next;
            states.push(u);
            rewards.push(r);
        }
        Ok((states, rewards))
    }

    pub fn format_props(&self, sigma: PropSet) -> String {
        format_props(&self.spec.aps, sigma)
    }

    /// Serializes the user edges back into the text format.
    pub fn to_text(&self) -> String {
        parse::to_text(&self.spec)
    }
}

pub fn format_props(aps: &[String], sigma: PropSet) -> String {
    let names: Vec<&str> = sigma
        .iter()
        .filter_map(|i| aps.get(i).map(String::as_str))
        .collect();
    format!("{{{}}}", names.join(", "))
}

pub(crate) fn pos_at(line: usize, col: usize) -> Pos {
    Pos { line, col }
}
