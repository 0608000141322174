//! Propositional edge guards.

use std::fmt;
use std::ops;

use super::PropSet;

/// A propositional formula labelling a reward machine edge.
///
/// Propositions are referenced by their index in the machine's declared
/// proposition list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    True,
    False,
    Prop(usize),
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
    /// Fires when no user edge of the source state does. Only the validator
    /// produces this form.
    Otherwise,
}

impl ops::Not for Guard {
    type Output = Guard;

    fn not(self) -> Guard {
        Guard::Not(Box::new(self))
    }
}

impl Guard {
    pub fn and(a: Guard, b: Guard) -> Guard {
        Guard::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Guard, b: Guard) -> Guard {
        Guard::Or(Box::new(a), Box::new(b))
    }

    /// Direct recursive evaluation on one assignment.
    ///
    /// `Otherwise` evaluates to `false`; its meaning depends on sibling edges
    /// and is resolved in the transition table instead.
    pub fn eval(&self, sigma: PropSet) -> bool {
        match self {
            Guard::True => true,
            Guard::False | Guard::Otherwise => false,
            Guard::Prop(i) => sigma.contains(*i),
            Guard::Not(g) => !g.eval(sigma),
            Guard::And(a, b) => a.eval(sigma) && b.eval(sigma),
            Guard::Or(a, b) => a.eval(sigma) || b.eval(sigma),
        }
    }

    /// Truth table of the formula over all `2^n_props` assignments, computed
    /// with word-parallel bit operations.
    pub fn truth_table(&self, n_props: usize) -> TruthTable {
        let n_rows = 1usize << n_props;
        match self {
            Guard::True => TruthTable::constant(n_rows, true),
            Guard::False | Guard::Otherwise => TruthTable::constant(n_rows, false),
            Guard::Prop(i) => TruthTable::projection(n_rows, *i),
            Guard::Not(g) => g.truth_table(n_props).complement(),
            Guard::And(a, b) => {
                let mut t = a.truth_table(n_props);
                t.and_assign(&b.truth_table(n_props));
                t
            }
            Guard::Or(a, b) => {
                let mut t = a.truth_table(n_props);
                t.or_assign(&b.truth_table(n_props));
                t
            }
        }
    }

    /// Largest proposition index mentioned, if any.
    pub fn max_prop(&self) -> Option<usize> {
        match self {
            Guard::Prop(i) => Some(*i),
            Guard::Not(g) => g.max_prop(),
            Guard::And(a, b) | Guard::Or(a, b) => a.max_prop().max(b.max_prop()),
            _ => None,
        }
    }

    /// Renders the formula with proposition names, adding parentheses only
    /// where precedence requires them.
    pub fn display<'a>(&'a self, names: &'a [String]) -> GuardDisplay<'a> {
        GuardDisplay { guard: self, names }
    }
}

pub struct GuardDisplay<'a> {
    guard: &'a Guard,
    names: &'a [String],
}

// 0: or, 1: and, 2: unary/atom
fn precedence(g: &Guard) -> u8 {
    match g {
        Guard::Or(..) => 0,
        Guard::And(..) => 1,
        _ => 2,
    }
}

fn write_guard(
    f: &mut fmt::Formatter<'_>,
    g: &Guard,
    names: &[String],
    min_prec: u8,
) -> fmt::Result {
    let paren = precedence(g) < min_prec;
    if paren {
        f.write_str("(")?;
    }
    match g {
        Guard::True => f.write_str("true")?,
        Guard::False => f.write_str("false")?,
        Guard::Otherwise => f.write_str("o/w")?,
        Guard::Prop(i) => match names.get(*i) {
            Some(n) => f.write_str(n)?,
            None => write!(f, "p{i}")?,
        },
        Guard::Not(inner) => {
            f.write_str("!")?;
            write_guard(f, inner, names, 2)?;
        }
        // Left-associative: the right operand of a same-precedence chain
        // needs parentheses to survive re-parsing with the same tree shape.
        Guard::And(a, b) => {
            write_guard(f, a, names, 1)?;
            f.write_str(" & ")?;
            write_guard(f, b, names, 2)?;
        }
        Guard::Or(a, b) => {
            write_guard(f, a, names, 0)?;
            f.write_str(" | ")?;
            write_guard(f, b, names, 1)?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for GuardDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_guard(f, self.guard, self.names, 0)
    }
}

/// Bitset over the `2^n` assignments of `n` propositions; bit `σ` is set iff
/// the formula holds under assignment `σ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTable {
    n_rows: usize,
    words: Vec<u64>,
}

impl TruthTable {
    fn n_words(n_rows: usize) -> usize {
        n_rows.div_ceil(64)
    }

    fn constant(n_rows: usize, value: bool) -> Self {
        let fill = if value { u64::MAX } else { 0 };
        let mut t = TruthTable {
            n_rows,
            words: vec![fill; Self::n_words(n_rows)],
        };
        t.mask_tail();
        t
    }

    fn projection(n_rows: usize, prop: usize) -> Self {
        let mut words = vec![0u64; Self::n_words(n_rows)];
        for row in 0..n_rows {
            if (row >> prop) & 1 == 1 {
                words[row / 64] |= 1 << (row % 64);
            }
        }
        TruthTable { n_rows, words }
    }

    fn mask_tail(&mut self) {
        let rem = self.n_rows % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn complement(mut self) -> Self {
        for w in &mut self.words {
            *w = !*w;
        }
        self.mask_tail();
        self
    }

    fn and_assign(&mut self, other: &TruthTable) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    fn or_assign(&mut self, other: &TruthTable) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn get(&self, sigma: PropSet) -> bool {
        let row = sigma.bits() as usize;
        row < self.n_rows && (self.words[row / 64] >> (row % 64)) & 1 == 1
    }
}
