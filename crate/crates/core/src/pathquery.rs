//! Regular path queries with nested conditions.
//!
//! Concrete syntax: tags are bare identifiers, `.` concatenates, `|`
//! alternates, postfix `*` is the reflexive-transitive closure and postfix
//! `[c1 and c2 ...]` attaches conditions, which are either `attr = "string"`
//! or nested queries. Postfix operators bind tighter than `.`, which binds
//! tighter than `|`; both infix operators associate to the left.
//!
//! Two forms have no counterpart in the plain grammar: `<self>` matches the
//! empty word (needed for conditions on the context node itself) and
//! `<none>` is the query with empty answer.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::graphdb::{GraphDatabase, NodeId};
use crate::{is_ident_continue, is_ident_start, quoted};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathQuery {
    Tag(String),
    Concat(Box<PathQuery>, Box<PathQuery>),
    Alt(Box<PathQuery>, Box<PathQuery>),
    Star(Box<PathQuery>),
    Cond(Box<PathQuery>, Vec<Condition>),
    Epsilon,
    Empty,
}

/// Attribute tests sort before nested queries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    AttrEq(String, String),
    Query(PathQuery),
}

impl PathQuery {
    pub fn tag(t: impl Into<String>) -> Self {
        PathQuery::Tag(t.into())
    }

    pub fn concat(a: PathQuery, b: PathQuery) -> Self {
        PathQuery::Concat(Box::new(a), Box::new(b))
    }

    pub fn alt(a: PathQuery, b: PathQuery) -> Self {
        PathQuery::Alt(Box::new(a), Box::new(b))
    }

    pub fn star(a: PathQuery) -> Self {
        PathQuery::Star(Box::new(a))
    }

    pub fn cond(a: PathQuery, conds: Vec<Condition>) -> Self {
        PathQuery::Cond(Box::new(a), conds)
    }

    pub fn contains_star(&self) -> bool {
        match self {
            PathQuery::Star(_) => true,
            PathQuery::Tag(_) | PathQuery::Epsilon | PathQuery::Empty => false,
            PathQuery::Concat(a, b) | PathQuery::Alt(a, b) => a.contains_star() || b.contains_star(),
            PathQuery::Cond(a, cs) => {
                a.contains_star()
                    || cs.iter().any(|c| match c {
                        Condition::Query(q) => q.contains_star(),
                        Condition::AttrEq(..) => false,
                    })
            }
        }
    }

    pub fn has_conditions(&self) -> bool {
        match self {
            PathQuery::Cond(..) => true,
            PathQuery::Tag(_) | PathQuery::Epsilon | PathQuery::Empty => false,
            PathQuery::Concat(a, b) | PathQuery::Alt(a, b) => a.has_conditions() || b.has_conditions(),
            PathQuery::Star(a) => a.has_conditions(),
        }
    }

    /// Number of AST nodes, nested queries included.
    pub fn size(&self) -> usize {
        match self {
            PathQuery::Tag(_) | PathQuery::Epsilon | PathQuery::Empty => 1,
            PathQuery::Concat(a, b) | PathQuery::Alt(a, b) => 1 + a.size() + b.size(),
            PathQuery::Star(a) => 1 + a.size(),
            PathQuery::Cond(a, cs) => {
                1 + a.size()
                    + cs.iter()
                        .map(|c| match c {
                            Condition::Query(q) => q.size(),
                            Condition::AttrEq(..) => 1,
                        })
                        .sum::<usize>()
            }
        }
    }

    /// Normal form: left-nested `.` and `|` chains, repeated `|` branches
    /// dropped, `(q*)*` collapsed, conditions on a concatenation moved onto
    /// its last factor, stacked condition lists merged, and condition lists
    /// sorted without duplicates.
    pub fn canonical(&self) -> PathQuery {
        match self {
            PathQuery::Tag(_) | PathQuery::Epsilon | PathQuery::Empty => self.clone(),
            PathQuery::Concat(..) => {
                let mut factors = Vec::new();
                self.concat_factors(&mut factors);
                let mut flat = Vec::new();
                for f in factors {
                    f.canonical().concat_factors_owned(&mut flat);
                }
                let mut it = flat.into_iter();
                let first = it.next().unwrap();
                it.fold(first, PathQuery::concat)
            }
            PathQuery::Alt(..) => {
                let mut branches = Vec::new();
                self.alt_branches(&mut branches);
                let mut flat = Vec::new();
                for b in branches {
                    b.canonical().alt_branches_owned(&mut flat);
                }
                let mut seen = Vec::new();
                for b in flat {
                    if !seen.contains(&b) {
                        seen.push(b);
                    }
                }
                let mut it = seen.into_iter();
                let first = it.next().unwrap();
                it.fold(first, PathQuery::alt)
            }
            PathQuery::Star(a) => match a.canonical() {
                inner @ PathQuery::Star(_) => inner,
                inner => PathQuery::star(inner),
            },
            PathQuery::Cond(a, cs) => {
                let conds: BTreeSet<Condition> = cs
                    .iter()
                    .map(|c| match c {
                        Condition::Query(q) => Condition::Query(q.canonical()),
                        other => other.clone(),
                    })
                    .collect();
                attach(a.canonical(), conds)
            }
        }
    }

    fn concat_factors_owned(self, out: &mut Vec<PathQuery>) {
        match self {
            PathQuery::Concat(a, b) => {
                a.concat_factors_owned(out);
                b.concat_factors_owned(out);
            }
            other => out.push(other),
        }
    }

    fn alt_branches_owned(self, out: &mut Vec<PathQuery>) {
        match self {
            PathQuery::Alt(a, b) => {
                a.alt_branches_owned(out);
                b.alt_branches_owned(out);
            }
            other => out.push(other),
        }
    }

    fn concat_factors<'a>(&'a self, out: &mut Vec<&'a PathQuery>) {
        match self {
            PathQuery::Concat(a, b) => {
                a.concat_factors(out);
                b.concat_factors(out);
            }
            other => out.push(other),
        }
    }

    fn alt_branches<'a>(&'a self, out: &mut Vec<&'a PathQuery>) {
        match self {
            PathQuery::Alt(a, b) => {
                a.alt_branches(out);
                b.alt_branches(out);
            }
            other => out.push(other),
        }
    }
}

/// Attaches canonical conditions to a canonical query.
fn attach(base: PathQuery, mut conds: BTreeSet<Condition>) -> PathQuery {
    if conds.is_empty() {
        return base;
    }
    match base {
        PathQuery::Concat(a, b) => PathQuery::Concat(a, Box::new(attach(*b, conds))),
        PathQuery::Cond(a, inner) => {
            conds.extend(inner);
            PathQuery::Cond(a, conds.into_iter().collect())
        }
        other => PathQuery::Cond(Box::new(other), conds.into_iter().collect()),
    }
}

const PREC_ALT: u8 = 0;
const PREC_CONCAT: u8 = 1;
const PREC_POSTFIX: u8 = 2;

fn write_query(q: &PathQuery, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let prec = match q {
        PathQuery::Alt(..) => PREC_ALT,
        PathQuery::Concat(..) => PREC_CONCAT,
        _ => PREC_POSTFIX,
    };
    if prec < min_prec {
        f.write_str("(")?;
    }
    match q {
        PathQuery::Tag(t) => f.write_str(t)?,
        PathQuery::Epsilon => f.write_str("<self>")?,
        PathQuery::Empty => f.write_str("<none>")?,
        PathQuery::Alt(a, b) => {
            write_query(a, PREC_ALT, f)?;
            f.write_str("|")?;
            write_query(b, PREC_CONCAT, f)?;
        }
        PathQuery::Concat(a, b) => {
            write_query(a, PREC_CONCAT, f)?;
            f.write_str(".")?;
            write_query(b, PREC_POSTFIX, f)?;
        }
        PathQuery::Star(a) => {
            write_query(a, PREC_POSTFIX, f)?;
            f.write_str("*")?;
        }
        PathQuery::Cond(a, cs) => {
            write_query(a, PREC_POSTFIX, f)?;
            f.write_str("[")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    f.write_str(" and ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str("]")?;
        }
    }
    if prec < min_prec {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for PathQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_query(self, PREC_ALT, f)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::AttrEq(a, s) => write!(f, "{a}={}", quoted(s)),
            Condition::Query(q) => write!(f, "{q}"),
        }
    }
}

/// Prints a query in the concrete syntax.
pub fn print_path_query(q: &PathQuery) -> String {
    q.to_string()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at offset {offset}: {message}")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    And,
    SelfWord,
    NoneWord,
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if is_ident_start(c) {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if is_ident_continue(c) {
                    s.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push((pos, if s == "and" { Tok::And } else { Tok::Ident(s) }));
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => {
                        return Err(SyntaxError {
                            offset: pos,
                            message: "unterminated string".into(),
                        })
                    }
                    Some((_, '"')) => break,
                    Some((p, '\\')) => match chars.next() {
                        Some((_, '"')) => s.push('"'),
                        Some((_, '\\')) => s.push('\\'),
                        Some((_, 'n')) => s.push('\n'),
                        _ => {
                            return Err(SyntaxError {
                                offset: p,
                                message: "invalid escape".into(),
                            })
                        }
                    },
                    Some((_, c)) => s.push(c),
                }
            }
            out.push((pos, Tok::Str(s)));
        } else if c == '<' {
            let rest = &text[pos..];
            if rest.starts_with("<self>") {
                out.push((pos, Tok::SelfWord));
                for _ in 0.."<self>".len() {
                    chars.next();
                }
            } else if rest.starts_with("<none>") {
                out.push((pos, Tok::NoneWord));
                for _ in 0.."<none>".len() {
                    chars.next();
                }
            } else {
                return Err(SyntaxError {
                    offset: pos,
                    message: "unexpected `<`".into(),
                });
            }
        } else if ".|*[]()=".contains(c) {
            out.push((pos, Tok::Sym(c)));
            chars.next();
        } else {
            return Err(SyntaxError {
                offset: pos,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), SyntaxError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn alt(&mut self) -> Result<PathQuery, SyntaxError> {
        let mut q = self.concat()?;
        while self.eat('|') {
            q = PathQuery::alt(q, self.concat()?);
        }
        Ok(q)
    }

    fn concat(&mut self) -> Result<PathQuery, SyntaxError> {
        let mut q = self.postfix()?;
        while self.eat('.') {
            q = PathQuery::concat(q, self.postfix()?);
        }
        Ok(q)
    }

    fn postfix(&mut self) -> Result<PathQuery, SyntaxError> {
        let mut q = self.primary()?;
        loop {
            if self.eat('*') {
                q = PathQuery::star(q);
            } else if self.eat('[') {
                let mut conds = vec![self.condition()?];
                while self.peek() == Some(&Tok::And) {
                    self.pos += 1;
                    conds.push(self.condition()?);
                }
                self.expect(']')?;
                q = PathQuery::cond(q, conds);
            } else {
                return Ok(q);
            }
        }
    }

    fn primary(&mut self) -> Result<PathQuery, SyntaxError> {
        match self.peek().cloned() {
            Some(Tok::Ident(t)) => {
                self.pos += 1;
                Ok(PathQuery::Tag(t))
            }
            Some(Tok::SelfWord) => {
                self.pos += 1;
                Ok(PathQuery::Epsilon)
            }
            Some(Tok::NoneWord) => {
                self.pos += 1;
                Ok(PathQuery::Empty)
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let q = self.alt()?;
                self.expect(')')?;
                Ok(q)
            }
            Some(_) => self.err("expected a tag, `(`, `<self>` or `<none>`"),
            None => self.err("unexpected end of query"),
        }
    }

    fn condition(&mut self) -> Result<Condition, SyntaxError> {
        if let (Some(Tok::Ident(a)), Some(Tok::Sym('='))) = (self.peek().cloned(), self.peek_at(1)) {
            self.pos += 2;
            return match self.peek().cloned() {
                Some(Tok::Str(s)) => {
                    self.pos += 1;
                    Ok(Condition::AttrEq(a, s))
                }
                _ => self.err("expected a double-quoted string"),
            };
        }
        Ok(Condition::Query(self.alt()?))
    }
}

/// Parses the concrete syntax.
pub fn parse_path_query(text: &str) -> Result<PathQuery, SyntaxError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        end: text.len(),
    };
    let q = p.alt()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(q)
}

/// Per-call evaluation state; condition results are memoized by
/// (condition address, node).
struct Evaluator<'g> {
    g: &'g GraphDatabase,
    memo: HashMap<(usize, NodeId), bool>,
}

impl<'g> Evaluator<'g> {
    fn step(&mut self, q: &PathQuery, from: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        match q {
            PathQuery::Tag(t) => from
                .iter()
                .flat_map(|n| self.g.successors(n))
                .filter(|m| self.g.tag(m) == Some(t.as_str()))
                .cloned()
                .collect(),
            PathQuery::Epsilon => from.clone(),
            PathQuery::Empty => BTreeSet::new(),
            PathQuery::Concat(a, b) => {
                let mid = self.step(a, from);
                self.step(b, &mid)
            }
            PathQuery::Alt(a, b) => {
                let mut out = self.step(a, from);
                out.extend(self.step(b, from));
                out
            }
            PathQuery::Star(a) => {
                let mut reached = from.clone();
                let mut frontier = from.clone();
                while !frontier.is_empty() {
                    let next = self.step(a, &frontier);
                    frontier = next.difference(&reached).cloned().collect();
                    reached.extend(frontier.iter().cloned());
                }
                reached
            }
            PathQuery::Cond(a, cs) => {
                let reached = self.step(a, from);
                reached
                    .into_iter()
                    .filter(|n| cs.iter().all(|c| self.holds(c, n)))
                    .collect()
            }
        }
    }

    fn holds(&mut self, c: &Condition, n: &NodeId) -> bool {
        match c {
            Condition::AttrEq(a, s) => self.g.label(n).is_some_and(|l| l.has(a, s)),
            Condition::Query(q) => {
                let key = (q as *const PathQuery as usize, n.clone());
                if let Some(&v) = self.memo.get(&key) {
                    return v;
                }
                let v = !self.step(q, &BTreeSet::from([n.clone()])).is_empty();
                self.memo.insert(key, v);
                v
            }
        }
    }
}

/// All nodes reached from `context` by a path whose word the query accepts.
/// Each tag consumes one edge into a node with that tag; conditions are
/// checked at the current node.
pub fn eval_path_query(q: &PathQuery, g: &GraphDatabase, context: &NodeId) -> BTreeSet<NodeId> {
    let mut ev = Evaluator {
        g,
        memo: HashMap::new(),
    };
    ev.step(q, &BTreeSet::from([context.clone()]))
}

/// Evaluation from the root.
pub fn eval_from_root(q: &PathQuery, g: &GraphDatabase) -> BTreeSet<NodeId> {
    eval_path_query(q, g, g.root())
}
