//! Line-based text format for reward machines.
//!
//! ```text
//! rm
//! aps: gold home
//! states: u0 u1
//! terminals: u2
//! init: u0
//! u0 -> u1 : gold & !home, 0
//! ```
//!
//! Guards use `!`, `&`, `|`, parentheses and the constants `true`/`false`;
//! `&` binds tighter than `|`, both associate to the left. `#` starts a
//! comment.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{pos_at, Edge, Guard, Pos, RmError, RmSpec, RmStateId};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Arrow,
    Colon,
    Comma,
    Pipe,
    Amp,
    Bang,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn syntax(pos: Pos, msg: impl Into<String>) -> RmError {
    RmError::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, RmError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = pos_at(line_no, i + 1);
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            ':' => Some(Tok::Colon),
            ',' => Some(Tok::Comma),
            '|' => Some(Tok::Pipe),
            '&' => Some(Tok::Amp),
            '!' => Some(Tok::Bang),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, pos });
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Token {
                tok: Tok::Arrow,
                pos,
            });
            i += 2;
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
        } else if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') {
            let start = i;
            i += 1;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '.' | '+' | '-'))
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Number(chars[start..i].iter().collect()),
                pos,
            });
        } else {
            return Err(syntax(pos, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Names<'a> {
    kind: &'static str,
    map: HashMap<&'a str, usize>,
}

impl<'a> Names<'a> {
    fn new(kind: &'static str) -> Self {
        Names {
            kind,
            map: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &'a str, idx: usize, pos: Pos) -> Result<(), RmError> {
        if self.map.insert(name, idx).is_some() {
            return Err(RmError::Duplicate {
                pos,
                kind: self.kind,
                name: name.to_string(),
            });
        }
        Ok(())
    }
}

/// Recursive-descent parser for one guard expression.
struct GuardParser<'t, 'n> {
    toks: &'t [Token],
    at: usize,
    props: &'n Names<'n>,
    end: Pos,
}

impl GuardParser<'_, '_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.tok)
    }

    fn here(&self) -> Pos {
        self.toks.get(self.at).map_or(self.end, |t| t.pos)
    }

    fn expr(&mut self) -> Result<Guard, RmError> {
        let mut lhs = self.term()?;
        while self.peek() == Some(&Tok::Pipe) {
            self.at += 1;
            lhs = Guard::or(lhs, self.term()?);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Guard, RmError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::Amp) {
            self.at += 1;
            lhs = Guard::and(lhs, self.factor()?);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Guard, RmError> {
        let pos = self.here();
        let tok = self.toks.get(self.at).map(|t| t.tok.clone());
        self.at += 1;
        match tok {
            Some(Tok::Bang) => Ok(!self.factor()?),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(syntax(self.here(), "expected `)`"));
                }
                self.at += 1;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "true" => Ok(Guard::True),
                "false" => Ok(Guard::False),
                _ => self
                    .props
                    .map
                    .get(name.as_str())
                    .map(|i| Guard::Prop(*i))
                    .ok_or(RmError::UndeclaredProp { pos, name }),
            },
            Some(other) => Err(syntax(pos, format!("unexpected {other:?} in guard"))),
            None => Err(syntax(pos, "guard ended unexpectedly")),
        }
    }
}

fn idents(toks: &[Token]) -> Result<Vec<(&str, Pos)>, RmError> {
    toks.iter()
        .map(|t| match &t.tok {
            Tok::Ident(s) => Ok((s.as_str(), t.pos)),
            other => Err(syntax(t.pos, format!("expected a name, found {other:?}"))),
        })
        .collect()
}

/// Parses an RM document and resolves every name, without validating the
/// transition structure.
pub fn parse_rm(text: &str) -> Result<RmSpec, RmError> {
    let mut lines: Vec<(usize, Vec<Token>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let toks = tokenize(raw, i + 1)?;
        if !toks.is_empty() {
            lines.push((i + 1, toks));
        }
    }
    let mut iter = lines.into_iter();
    match iter.next() {
        Some((_, toks)) if toks.len() == 1 && toks[0].tok == Tok::Ident("rm".into()) => {}
        Some((_, toks)) => return Err(syntax(toks[0].pos, "document must start with `rm`")),
        None => return Err(syntax(pos_at(1, 1), "empty document")),
    }

    let mut decls: HashMap<&'static str, (Pos, Vec<Token>)> = HashMap::new();
    let mut edge_lines = Vec::new();
    for (line_no, toks) in iter {
        let is_decl = matches!(toks.get(1).map(|t| &t.tok), Some(Tok::Colon));
        if is_decl {
            let key = match &toks[0].tok {
                Tok::Ident(k) => match k.as_str() {
                    "aps" => "aps",
                    "states" => "states",
                    "terminals" => "terminals",
                    "init" => "init",
                    other => {
                        return Err(syntax(
                            toks[0].pos,
                            format!("unknown declaration `{other}`"),
                        ))
                    }
                },
                _ => return Err(syntax(toks[0].pos, "expected a declaration")),
            };
            let pos = toks[0].pos;
            if decls.insert(key, (pos, toks[2..].to_vec())).is_some() {
                return Err(syntax(pos, format!("`{key}` declared twice")));
            }
        } else {
            edge_lines.push((line_no, toks));
        }
    }

    let take = |key: &'static str| decls.get(key).ok_or(RmError::Missing(key));
    let aps_decl = idents(&take("aps")?.1)?;
    let states_decl = idents(&take("states")?.1)?;
    let terminals_decl = idents(&take("terminals")?.1)?;
    let (init_pos, init_toks) = take("init")?;
    let init_decl = idents(init_toks)?;

    let mut props = Names::new("proposition");
    for (i, (name, pos)) in aps_decl.iter().enumerate() {
        if matches!(*name, "true" | "false") {
            return Err(syntax(*pos, format!("`{name}` is reserved")));
        }
        props.insert(name, i, *pos)?;
    }
    let mut states = Names::new("state");
    for (i, (name, pos)) in states_decl.iter().chain(&terminals_decl).enumerate() {
        states.insert(name, i, *pos)?;
    }
    if states_decl.is_empty() {
        return Err(RmError::Missing("states"));
    }
    let initial = match init_decl.as_slice() {
        [(name, pos)] => *states
            .map
            .get(name)
            .ok_or_else(|| RmError::UndeclaredState {
                pos: *pos,
                name: name.to_string(),
            })?,
        _ => return Err(syntax(*init_pos, "`init` takes exactly one state")),
    };

    let resolve_state = |tok: &Token| -> Result<RmStateId, RmError> {
        match &tok.tok {
            Tok::Ident(name) => states
                .map
                .get(name.as_str())
                .map(|i| RmStateId(*i))
                .ok_or_else(|| RmError::UndeclaredState {
                    pos: tok.pos,
                    name: name.clone(),
                }),
            other => Err(syntax(
                tok.pos,
                format!("expected a state name, found {other:?}"),
            )),
        }
    };

    let mut edges = Vec::new();
    for (line_no, toks) in edge_lines {
        let start = toks[0].pos;
        if toks.len() < 5 || toks[1].tok != Tok::Arrow || toks[3].tok != Tok::Colon {
            return Err(syntax(
                start,
                "expected `<src> -> <dst> : <guard> , <reward>`",
            ));
        }
        let source = resolve_state(&toks[0])?;
        let target = resolve_state(&toks[2])?;
        let comma = toks
            .iter()
            .rposition(|t| t.tok == Tok::Comma)
            .ok_or_else(|| syntax(toks[toks.len() - 1].pos, "missing `, <reward>`"))?;
        let reward = match &toks[comma + 1..] {
            [Token {
                tok: Tok::Number(s),
                pos,
            }] => s
                .parse::<f64>()
                .map_err(|_| syntax(*pos, format!("invalid reward `{s}`")))?,
            [t, ..] => return Err(syntax(t.pos, "reward must be a single decimal number")),
            [] => return Err(syntax(toks[comma].pos, "missing reward")),
        };
        let guard_toks = &toks[4..comma];
        let mut p = GuardParser {
            toks: guard_toks,
            at: 0,
            props: &props,
            end: toks[comma].pos,
        };
        let guard = p.expr()?;
        if p.at != guard_toks.len() {
            return Err(syntax(p.here(), "trailing tokens in guard"));
        }
        edges.push(Edge {
            source,
            target,
            guard,
            reward,
            pos: Some(pos_at(line_no, start.col)),
        });
    }

    Ok(RmSpec {
        aps: aps_decl.iter().map(|(n, _)| n.to_string()).collect(),
        states: states_decl.iter().map(|(n, _)| n.to_string()).collect(),
        terminals: terminals_decl.iter().map(|(n, _)| n.to_string()).collect(),
        initial: RmStateId(initial),
        edges,
    })
}

pub(super) fn to_text(spec: &RmSpec) -> String {
    let mut out = String::from("rm\n");
    let _ = writeln!(out, "aps: {}", spec.aps.join(" "));
    let _ = writeln!(out, "states: {}", spec.states.join(" "));
    let _ = writeln!(out, "terminals: {}", spec.terminals.join(" "));
    let _ = writeln!(out, "init: {}", spec.name(spec.initial));
    for e in spec.edges.iter().filter(|e| e.pos.is_some()) {
        let _ = writeln!(
            out,
            "{} -> {} : {}, {}",
            spec.name(e.source),
            spec.name(e.target),
            e.guard.display(&spec.aps),
            e.reward
        );
    }
    out
}
