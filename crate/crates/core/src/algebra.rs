//! Described queries: a positive relational algebra over classes and
//! binary relationships, its evaluation, the description-query rewrite
//! `M`, μ-lifting, the μ-semijoin and meta-level optimization.
//!
//! Columns are referenced positionally (`$1`, `$2`, …, one-based).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::chase::{self, ImplicationConstraint};
use crate::model::{
    class_extension, eval_relationship, path_target_type, Instance, ModelError, OValue, Oid, PathExpr, Schema, TypeExpr,
};
use crate::quoted;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgebraError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("column ${col} out of range for arity {arity}")]
    ColumnOutOfRange { col: usize, arity: usize },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("not a described query: {0}")]
    NotInFragment(String),
    #[error("meta selection must reference a single column, found {0:?}")]
    MultiColumnMetaSelection(Vec<usize>),
    #[error("class {0} has no meta-class")]
    Undescribed(String),
    #[error("object {0} has no description")]
    MissingMu(Oid),
    #[error("not a conjunctive query: {0}")]
    NotConjunctive(String),
}

/// Selection condition: a boolean combination of `$i.a1.….an = "s"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Eq {
        col: usize,
        path: Vec<String>,
        value: String,
    },
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

impl Cond {
    pub fn eq<S: Into<String>>(col: usize, path: impl IntoIterator<Item = S>, value: impl Into<String>) -> Self {
        Cond::Eq {
            col,
            path: path.into_iter().map(Into::into).collect(),
            value: value.into(),
        }
    }

    pub fn and(a: Cond, b: Cond) -> Self {
        Cond::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Cond, b: Cond) -> Self {
        Cond::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Cond) -> Self {
        Cond::Not(Box::new(a))
    }

    pub fn columns(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |c| {
            if let Cond::Eq { col, .. } = c {
                out.insert(*col);
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Cond)) {
        f(self);
        match self {
            Cond::Eq { .. } => {}
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Cond::Not(a) => a.visit(f),
        }
    }

    /// The atoms of a pure conjunction, or `None` if `∨` or `¬` occurs.
    pub fn conjuncts(&self) -> Option<Vec<(usize, &[String], &str)>> {
        match self {
            Cond::Eq { col, path, value } => Some(vec![(*col, path.as_slice(), value.as_str())]),
            Cond::And(a, b) => {
                let mut out = a.conjuncts()?;
                out.extend(b.conjuncts()?);
                Some(out)
            }
            Cond::Or(..) | Cond::Not(_) => None,
        }
    }

    /// Renumbers every column reference.
    pub fn map_columns(&self, f: &impl Fn(usize) -> usize) -> Cond {
        match self {
            Cond::Eq { col, path, value } => Cond::Eq {
                col: f(*col),
                path: path.clone(),
                value: value.clone(),
            },
            Cond::And(a, b) => Cond::and(a.map_columns(f), b.map_columns(f)),
            Cond::Or(a, b) => Cond::or(a.map_columns(f), b.map_columns(f)),
            Cond::Not(a) => Cond::not(a.map_columns(f)),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        let own = match self {
            Cond::Or(..) => 0,
            Cond::And(..) => 1,
            _ => 2,
        };
        if own < prec {
            f.write_str("(")?;
        }
        match self {
            Cond::Eq { col, path, value } => {
                write!(f, "${col}")?;
                for a in path {
                    write!(f, ".{a}")?;
                }
                write!(f, " = {}", quoted(value))?;
            }
            Cond::And(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(" and ")?;
                b.fmt_prec(f, 2)?;
            }
            Cond::Or(a, b) => {
                a.fmt_prec(f, 0)?;
                f.write_str(" or ")?;
                b.fmt_prec(f, 1)?;
            }
            Cond::Not(a) => {
                f.write_str("not ")?;
                a.fmt_prec(f, 2)?;
            }
        }
        if own < prec {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Algebra expressions. `Select` and `Diff` are evaluable but lie outside
/// the described fragment; `SemijoinMu`, `Materialized` and `Empty` are
/// produced by the optimizer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Class(String),
    /// `left ⋈_{rel($i, $j)} right`, `$i` of the left and `$j` of the right operand.
    Join {
        left: Box<Query>,
        rel: String,
        lcol: usize,
        rcol: usize,
        right: Box<Query>,
    },
    /// `⋈_{rel($i, $j)} inner`.
    SelfJoin {
        rel: String,
        a: usize,
        b: usize,
        inner: Box<Query>,
    },
    /// `σ′`: tests attributes of the column's description.
    SelectMeta(Cond, Box<Query>),
    /// Plain `σ`.
    Select(Cond, Box<Query>),
    Project(Vec<usize>, Box<Query>),
    Union(Box<Query>, Box<Query>),
    Intersect(Box<Query>, Box<Query>),
    Diff(Box<Query>, Box<Query>),
    /// `inner ⋉_μ meta`.
    SemijoinMu(Box<Query>, Box<Query>),
    /// A constant relation computed on the meta-instance `source`.
    Materialized {
        source: String,
        row: Vec<String>,
        tuples: BTreeSet<Vec<Oid>>,
    },
    Empty(Vec<String>),
}

impl Query {
    pub fn class(name: impl Into<String>) -> Self {
        Query::Class(name.into())
    }

    pub fn join(left: Query, rel: impl Into<String>, lcol: usize, rcol: usize, right: Query) -> Self {
        Query::Join {
            left: Box::new(left),
            rel: rel.into(),
            lcol,
            rcol,
            right: Box::new(right),
        }
    }

    pub fn self_join(rel: impl Into<String>, a: usize, b: usize, inner: Query) -> Self {
        Query::SelfJoin {
            rel: rel.into(),
            a,
            b,
            inner: Box::new(inner),
        }
    }

    pub fn select_meta(c: Cond, q: Query) -> Self {
        Query::SelectMeta(c, Box::new(q))
    }

    pub fn select(c: Cond, q: Query) -> Self {
        Query::Select(c, Box::new(q))
    }

    pub fn project(cols: Vec<usize>, q: Query) -> Self {
        Query::Project(cols, Box::new(q))
    }

    pub fn union(a: Query, b: Query) -> Self {
        Query::Union(Box::new(a), Box::new(b))
    }

    pub fn intersect(a: Query, b: Query) -> Self {
        Query::Intersect(Box::new(a), Box::new(b))
    }

    pub fn diff(a: Query, b: Query) -> Self {
        Query::Diff(Box::new(a), Box::new(b))
    }

    pub fn semijoin_mu(a: Query, meta: Query) -> Self {
        Query::SemijoinMu(Box::new(a), Box::new(meta))
    }

    /// Number of operator nodes.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn children(&self) -> Vec<&Query> {
        match self {
            Query::Class(_) | Query::Materialized { .. } | Query::Empty(_) => vec![],
            Query::Join { left, right, .. } => vec![left, right],
            Query::SelfJoin { inner, .. } => vec![inner],
            Query::SelectMeta(_, q) | Query::Select(_, q) | Query::Project(_, q) => vec![q],
            Query::Union(a, b) | Query::Intersect(a, b) | Query::Diff(a, b) | Query::SemijoinMu(a, b) => vec![a, b],
        }
    }

    fn map_children(&self, mut f: impl FnMut(&Query) -> Result<Query, AlgebraError>) -> Result<Query, AlgebraError> {
        let mut b = |q: &Query| f(q).map(Box::new);
        Ok(match self {
            Query::Class(_) | Query::Materialized { .. } | Query::Empty(_) => self.clone(),
            Query::Join {
                left,
                rel,
                lcol,
                rcol,
                right,
            } => Query::Join {
                left: b(left)?,
                rel: rel.clone(),
                lcol: *lcol,
                rcol: *rcol,
                right: b(right)?,
            },
            Query::SelfJoin { rel, a, b: bb, inner } => Query::SelfJoin {
                rel: rel.clone(),
                a: *a,
                b: *bb,
                inner: b(inner)?,
            },
            Query::SelectMeta(c, q) => Query::SelectMeta(c.clone(), b(q)?),
            Query::Select(c, q) => Query::Select(c.clone(), b(q)?),
            Query::Project(cols, q) => Query::Project(cols.clone(), b(q)?),
            Query::Union(x, y) => Query::Union(b(x)?, b(y)?),
            Query::Intersect(x, y) => Query::Intersect(b(x)?, b(y)?),
            Query::Diff(x, y) => Query::Diff(b(x)?, b(y)?),
            Query::SemijoinMu(x, y) => Query::SemijoinMu(b(x)?, b(y)?),
        })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Class(p) => write!(f, "class {p}"),
            Query::Join {
                left,
                rel,
                lcol,
                rcol,
                right,
            } => write!(f, "join({left}, {rel}(${lcol}, ${rcol}), {right})"),
            Query::SelfJoin { rel, a, b, inner } => write!(f, "sjoin({rel}(${a}, ${b}), {inner})"),
            Query::SelectMeta(c, q) => write!(f, "selectm({c}, {q})"),
            Query::Select(c, q) => write!(f, "select({c}, {q})"),
            Query::Project(cols, q) => {
                let cols: Vec<String> = cols.iter().map(|c| format!("${c}")).collect();
                write!(f, "project({}; {q})", cols.join(", "))
            }
            Query::Union(a, b) => write!(f, "union({a}, {b})"),
            Query::Intersect(a, b) => write!(f, "intersect({a}, {b})"),
            Query::Diff(a, b) => write!(f, "diff({a}, {b})"),
            Query::SemijoinMu(a, b) => write!(f, "semijoin({a}, {b})"),
            Query::Materialized { source, row, tuples } => {
                write!(f, "rows({}; {}", quoted(source), row.join(", "))?;
                for t in tuples {
                    let items: Vec<String> = t.iter().map(|o| quoted(o.as_str())).collect();
                    write!(f, "; ({})", items.join(", "))?;
                }
                f.write_str(")")
            }
            Query::Empty(row) => write!(f, "empty({})", row.join(", ")),
        }
    }
}

/// Row type and membership in the described fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeInfo {
    pub row: Vec<String>,
    pub described: bool,
}

fn column(row: &[String], col: usize) -> Result<&str, AlgebraError> {
    if col == 0 || col > row.len() {
        return Err(AlgebraError::ColumnOutOfRange { col, arity: row.len() });
    }
    Ok(&row[col - 1])
}

fn check_cond(c: &Cond, row: &[String], s: &Schema, meta: bool) -> Result<(), AlgebraError> {
    let cols = c.columns();
    if meta && cols.len() > 1 {
        return Err(AlgebraError::MultiColumnMetaSelection(cols.into_iter().collect()));
    }
    let mut result = Ok(());
    c.visit(&mut |atom| {
        if let (Ok(()), Cond::Eq { col, path, .. }) = (&result, atom) {
            result = (|| {
                let class = column(row, *col)?;
                let class = if meta {
                    s.description
                        .meta_class_of(class, &s.hierarchy)
                        .ok_or_else(|| AlgebraError::Undescribed(class.to_string()))?
                } else {
                    class
                };
                let pe = PathExpr::new(class, path.iter().cloned());
                match path_target_type(&pe, &s.hierarchy)? {
                    TypeExpr::D => Ok(()),
                    other => Err(AlgebraError::TypeMismatch(format!("{pe} has type {other}, expected D"))),
                }
            })();
        }
    });
    result
}

fn check_join_column(s: &Schema, col_class: &str, endpoint: &str, rel: &str) -> Result<(), AlgebraError> {
    if s.hierarchy.comparable(col_class, endpoint) {
        Ok(())
    } else {
        Err(AlgebraError::TypeMismatch(format!(
            "column of class {col_class} cannot join {rel} at {endpoint}"
        )))
    }
}

/// Row type of `q` and whether `q` is a described query.
pub fn typecheck(q: &Query, s: &Schema) -> Result<TypeInfo, AlgebraError> {
    let d = &s.description;
    Ok(match q {
        Query::Class(p) => {
            if !s.hierarchy.contains(p) {
                return Err(ModelError::UnknownClass(p.clone()).into());
            }
            TypeInfo {
                row: vec![p.clone()],
                described: d.is_described(p),
            }
        }
        Query::Join {
            left,
            rel,
            lcol,
            rcol,
            right,
        } => {
            let (l, r) = (typecheck(left, s)?, typecheck(right, s)?);
            let (p1, p2) = s.relationship_endpoints(rel)?;
            check_join_column(s, column(&l.row, *lcol)?, &p1, rel)?;
            check_join_column(s, column(&r.row, *rcol)?, &p2, rel)?;
            TypeInfo {
                described: l.described && r.described && d.meta_relationship_of(rel).is_some(),
                row: l.row.into_iter().chain(r.row).collect(),
            }
        }
        Query::SelfJoin { rel, a, b, inner } => {
            let t = typecheck(inner, s)?;
            let (p1, p2) = s.relationship_endpoints(rel)?;
            check_join_column(s, column(&t.row, *a)?, &p1, rel)?;
            check_join_column(s, column(&t.row, *b)?, &p2, rel)?;
            TypeInfo {
                described: t.described && d.meta_relationship_of(rel).is_some(),
                row: t.row,
            }
        }
        Query::SelectMeta(c, inner) => {
            let t = typecheck(inner, s)?;
            check_cond(c, &t.row, s, true)?;
            t
        }
        Query::Select(c, inner) => {
            let t = typecheck(inner, s)?;
            check_cond(c, &t.row, s, false)?;
            TypeInfo {
                described: false,
                row: t.row,
            }
        }
        Query::Project(cols, inner) => {
            let t = typecheck(inner, s)?;
            let row = cols
                .iter()
                .map(|c| column(&t.row, *c).map(str::to_string))
                .collect::<Result<Vec<_>, _>>()?;
            TypeInfo {
                row,
                described: t.described,
            }
        }
        Query::Union(a, b) | Query::Intersect(a, b) | Query::Diff(a, b) => {
            let (ta, tb) = (typecheck(a, s)?, typecheck(b, s)?);
            if ta.row != tb.row {
                return Err(AlgebraError::TypeMismatch(format!(
                    "operands have row types <{}> and <{}>",
                    ta.row.join(", "),
                    tb.row.join(", ")
                )));
            }
            TypeInfo {
                described: ta.described && tb.described && !matches!(q, Query::Diff(..)),
                row: ta.row,
            }
        }
        Query::SemijoinMu(a, meta) => {
            let t = typecheck(a, s)?;
            let m = typecheck(meta, s)?;
            let expected = meta_row(&t.row, s)?;
            if m.row != expected {
                return Err(AlgebraError::TypeMismatch(format!(
                    "semijoin expects <{}>, found <{}>",
                    expected.join(", "),
                    m.row.join(", ")
                )));
            }
            TypeInfo {
                row: t.row,
                described: false,
            }
        }
        Query::Materialized { row, .. } | Query::Empty(row) => {
            for c in row {
                if !s.hierarchy.contains(c) {
                    return Err(ModelError::UnknownClass(c.clone()).into());
                }
            }
            TypeInfo {
                row: row.clone(),
                described: false,
            }
        }
    })
}

fn meta_row(row: &[String], s: &Schema) -> Result<Vec<String>, AlgebraError> {
    row.iter()
        .map(|c| {
            s.description
                .meta_class_of(c, &s.hierarchy)
                .map(str::to_string)
                .ok_or_else(|| AlgebraError::Undescribed(c.clone()))
        })
        .collect()
}

/// A typed set of oid tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleSet {
    pub row: Vec<String>,
    pub tuples: BTreeSet<Vec<Oid>>,
}

impl TupleSet {
    pub fn empty(row: Vec<String>) -> Self {
        TupleSet {
            row,
            tuples: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn is_subset(&self, other: &TupleSet) -> bool {
        self.tuples.is_subset(&other.tuples)
    }
}

/// All values reached from `oid` by following `path` through `ν`,
/// dereferencing oids and flattening sets.
pub fn attr_values<'a>(oid: &Oid, path: &[String], inst: &'a Instance) -> Vec<&'a OValue> {
    let Some(start) = inst.values.get(oid) else {
        return Vec::new();
    };
    let mut current = vec![start];
    for (i, a) in path.iter().enumerate() {
        let mut next = Vec::new();
        for v in current {
            let v = match v {
                OValue::Oid(o) if i > 0 => match inst.values.get(o) {
                    Some(v) => v,
                    None => continue,
                },
                other => other,
            };
            match v.attr(a) {
                Some(OValue::Set(items)) => next.extend(items.iter()),
                Some(x) => next.push(x),
                None => {}
            }
        }
        current = next;
    }
    current
}

fn eval_cond(c: &Cond, obj: &impl Fn(usize) -> Option<Oid>, inst: &Instance) -> bool {
    match c {
        Cond::Eq { col, path, value } => obj(*col).is_some_and(|o| {
            attr_values(&o, path, inst)
                .iter()
                .any(|v| v.as_const() == Some(value.as_str()))
        }),
        Cond::And(a, b) => eval_cond(a, obj, inst) && eval_cond(b, obj, inst),
        Cond::Or(a, b) => eval_cond(a, obj, inst) || eval_cond(b, obj, inst),
        Cond::Not(a) => !eval_cond(a, obj, inst),
    }
}

type Pairs = Rc<BTreeMap<Oid, BTreeSet<Oid>>>;

struct Evaluator<'a> {
    s: &'a Schema,
    inst: &'a Instance,
    rels: HashMap<String, Pairs>,
}

impl Evaluator<'_> {
    fn relationship(&mut self, rel: &str) -> Result<Pairs, AlgebraError> {
        if let Some(r) = self.rels.get(rel) {
            return Ok(r.clone());
        }
        let mut adj: BTreeMap<Oid, BTreeSet<Oid>> = BTreeMap::new();
        for (a, b) in eval_relationship(rel, self.s, self.inst)? {
            adj.entry(a).or_default().insert(b);
        }
        let adj = Rc::new(adj);
        self.rels.insert(rel.to_string(), adj.clone());
        Ok(adj)
    }

    fn related(pairs: &Pairs, a: &Oid, b: &Oid) -> bool {
        pairs.get(a).is_some_and(|s| s.contains(b))
    }

    fn eval(&mut self, q: &Query, row: Vec<String>) -> Result<TupleSet, AlgebraError> {
        let tuples = self.eval_tuples(q)?;
        Ok(TupleSet { row, tuples })
    }

    fn eval_tuples(&mut self, q: &Query) -> Result<BTreeSet<Vec<Oid>>, AlgebraError> {
        let (s, inst) = (self.s, self.inst);
        Ok(match q {
            Query::Class(p) => class_extension(p, inst, &s.hierarchy)?
                .into_iter()
                .map(|o| vec![o])
                .collect(),
            Query::Join {
                left,
                rel,
                lcol,
                rcol,
                right,
            } => {
                let l = self.eval_tuples(left)?;
                let r = self.eval_tuples(right)?;
                let pairs = self.relationship(rel)?;
                let mut by_key: BTreeMap<&Oid, Vec<&Vec<Oid>>> = BTreeMap::new();
                for t in &r {
                    by_key.entry(&t[rcol - 1]).or_default().push(t);
                }
                let mut out = BTreeSet::new();
                for lt in &l {
                    let Some(targets) = pairs.get(&lt[lcol - 1]) else {
                        continue;
                    };
                    for y in targets {
                        for rt in by_key.get(y).into_iter().flatten() {
                            out.insert(lt.iter().chain(rt.iter()).cloned().collect());
                        }
                    }
                }
                out
            }
            Query::SelfJoin { rel, a, b, inner } => {
                let t = self.eval_tuples(inner)?;
                let pairs = self.relationship(rel)?;
                t.into_iter()
                    .filter(|t| Self::related(&pairs, &t[a - 1], &t[b - 1]))
                    .collect()
            }
            Query::SelectMeta(c, inner) => self
                .eval_tuples(inner)?
                .into_iter()
                .filter(|t| eval_cond(c, &|i| inst.mu(&t[i - 1]).cloned(), inst))
                .collect(),
            Query::Select(c, inner) => self
                .eval_tuples(inner)?
                .into_iter()
                .filter(|t| eval_cond(c, &|i| Some(t[i - 1].clone()), inst))
                .collect(),
            Query::Project(cols, inner) => self
                .eval_tuples(inner)?
                .into_iter()
                .map(|t| cols.iter().map(|c| t[c - 1].clone()).collect())
                .collect(),
            Query::Union(a, b) => {
                let mut x = self.eval_tuples(a)?;
                x.extend(self.eval_tuples(b)?);
                x
            }
            Query::Intersect(a, b) => {
                let x = self.eval_tuples(a)?;
                let y = self.eval_tuples(b)?;
                x.intersection(&y).cloned().collect()
            }
            Query::Diff(a, b) => {
                let x = self.eval_tuples(a)?;
                let y = self.eval_tuples(b)?;
                x.difference(&y).cloned().collect()
            }
            Query::SemijoinMu(a, meta) => {
                let x = self.eval_tuples(a)?;
                let m = self.eval_tuples(meta)?;
                x.into_iter()
                    .filter(|t| lift_tuple(t, inst).is_ok_and(|lt| m.contains(&lt)))
                    .collect()
            }
            Query::Materialized { tuples, .. } => tuples.clone(),
            Query::Empty(_) => BTreeSet::new(),
        })
    }
}

fn lift_tuple(t: &[Oid], inst: &Instance) -> Result<Vec<Oid>, AlgebraError> {
    t.iter()
        .map(|o| inst.mu(o).cloned().ok_or_else(|| AlgebraError::MissingMu(o.clone())))
        .collect()
}

/// Evaluates `q` with set semantics.
pub fn eval_algebra(q: &Query, s: &Schema, inst: &Instance) -> Result<TupleSet, AlgebraError> {
    let t = typecheck(q, s)?;
    Evaluator {
        s,
        inst,
        rels: HashMap::new(),
    }
    .eval(q, t.row)
}

/// `μ(T)`: element-wise application of `μ`.
pub fn mu_lift(t: &TupleSet, s: &Schema, inst: &Instance) -> Result<TupleSet, AlgebraError> {
    Ok(TupleSet {
        row: meta_row(&t.row, s)?,
        tuples: t.tuples.iter().map(|t| lift_tuple(t, inst)).collect::<Result<_, _>>()?,
    })
}

/// `{t ∈ q | μ.t ∈ meta}`.
pub fn semijoin_mu(q: &TupleSet, meta: &TupleSet, s: &Schema, inst: &Instance) -> Result<TupleSet, AlgebraError> {
    let expected = meta_row(&q.row, s)?;
    if expected != meta.row {
        return Err(AlgebraError::TypeMismatch(format!(
            "semijoin expects <{}>, found <{}>",
            expected.join(", "),
            meta.row.join(", ")
        )));
    }
    let mut out = TupleSet::empty(q.row.clone());
    for t in &q.tuples {
        if meta.tuples.contains(&lift_tuple(t, inst)?) {
            out.tuples.insert(t.clone());
        }
    }
    Ok(out)
}

/// The description query `M(q)`.
pub fn m_rewrite(q: &Query, s: &Schema) -> Result<Query, AlgebraError> {
    rewrite(q, s, false)
}

/// `M` extended with `M(Q1 ∖ Q2) = M(Q1) ∖ M(Q2)`. Containment of
/// `μ(Q)` in the result does not hold in general.
pub fn m_rewrite_with_diff(q: &Query, s: &Schema) -> Result<Query, AlgebraError> {
    rewrite(q, s, true)
}

fn rewrite(q: &Query, s: &Schema, diff: bool) -> Result<Query, AlgebraError> {
    let d = &s.description;
    let meta_rel = |r: &str| {
        d.meta_relationship_of(r)
            .map(str::to_string)
            .ok_or_else(|| AlgebraError::NotInFragment(format!("relationship {r} has no meta-relationship")))
    };
    Ok(match q {
        Query::Class(p) => Query::Class(
            d.is_described(p)
                .then(|| d.meta_class_of(p, &s.hierarchy))
                .flatten()
                .ok_or_else(|| AlgebraError::NotInFragment(format!("class {p} is not described")))?
                .to_string(),
        ),
        Query::Join {
            left,
            rel,
            lcol,
            rcol,
            right,
        } => Query::join(
            rewrite(left, s, diff)?,
            meta_rel(rel)?,
            *lcol,
            *rcol,
            rewrite(right, s, diff)?,
        ),
        Query::SelfJoin { rel, a, b, inner } => Query::self_join(meta_rel(rel)?, *a, *b, rewrite(inner, s, diff)?),
        Query::SelectMeta(c, inner) => Query::select(c.clone(), rewrite(inner, s, diff)?),
        Query::Diff(..) if diff => q.map_children(|c| rewrite(c, s, diff))?,
        Query::Project(..) | Query::Union(..) | Query::Intersect(..) => q.map_children(|c| rewrite(c, s, diff))?,
        Query::Select(..) => return Err(AlgebraError::NotInFragment("plain selection".into())),
        Query::Diff(..) => return Err(AlgebraError::NotInFragment("difference".into())),
        Query::SemijoinMu(..) | Query::Materialized { .. } | Query::Empty(_) => {
            return Err(AlgebraError::NotInFragment("optimizer operator".into()))
        }
    })
}

/// `M⁻¹(q)`: translates a query one meta-level down.
pub fn m_inverse(q: &Query, s: &Schema) -> Result<Query, AlgebraError> {
    let d = &s.description;
    let rel_down = |r: &str| {
        d.described_relationship_of(r)
            .map(str::to_string)
            .ok_or_else(|| AlgebraError::NotInFragment(format!("relationship {r} describes nothing")))
    };
    Ok(match q {
        Query::Class(p) => Query::Class(
            d.described_class_of(p, &s.hierarchy)
                .ok_or_else(|| AlgebraError::NotInFragment(format!("class {p} describes no class")))?
                .to_string(),
        ),
        Query::Join {
            left,
            rel,
            lcol,
            rcol,
            right,
        } => Query::join(m_inverse(left, s)?, rel_down(rel)?, *lcol, *rcol, m_inverse(right, s)?),
        Query::SelfJoin { rel, a, b, inner } => Query::self_join(rel_down(rel)?, *a, *b, m_inverse(inner, s)?),
        Query::Select(c, inner) => Query::select_meta(c.clone(), m_inverse(inner, s)?),
        Query::Project(..) | Query::Union(..) | Query::Intersect(..) | Query::Diff(..) => {
            q.map_children(|c| m_inverse(c, s))?
        }
        Query::SelectMeta(..) => return Err(AlgebraError::NotInFragment("meta selection".into())),
        Query::SemijoinMu(..) | Query::Materialized { .. } | Query::Empty(_) => {
            return Err(AlgebraError::NotInFragment("optimizer operator".into()))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeMode {
    /// Restrictions proven by chasing implication constraints.
    Constraint,
    /// Restrictions read off the evaluated description query.
    Instance,
}

/// For which databases a verdict is valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    /// Every instance whose meta-level satisfies the constraints.
    AllInstances,
    /// Only instances described by the named meta-instance.
    MetaInstance(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::AllInstances => f.write_str("all instances satisfying the constraints"),
            Scope::MetaInstance(m) => write!(f, "meta-instance {m} only"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerdictKind {
    /// The description query is empty, so the subexpression is.
    Unsatisfiable,
    /// A semijoin with the materialized description query was attached.
    Restricted { meta_rows: usize },
    /// `σ′` restrictions were pushed onto class scans.
    RestrictionIntroduced(Vec<String>),
    /// Nothing to add.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub subexpression: String,
    pub kind: VerdictKind,
    pub scope: Scope,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            VerdictKind::Unsatisfiable => write!(f, "unsatisfiable")?,
            VerdictKind::Restricted { meta_rows } => write!(f, "restricted by {meta_rows} meta tuple(s)")?,
            VerdictKind::RestrictionIntroduced(r) => write!(f, "introduced {}", r.join(", "))?,
            VerdictKind::Unchanged => write!(f, "unchanged")?,
        }
        write!(f, " [{}]: {}", self.scope, self.subexpression)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Optimized {
    pub query: Query,
    pub verdicts: Vec<Verdict>,
}

/// Optimizes every maximal described subexpression of `q` using the
/// meta-level instance `meta` (identified as `meta_id` in verdicts and
/// materialized relations).
///
/// Subexpressions whose description query is empty on `meta` become
/// `Empty`. Otherwise instance mode attaches a semijoin with the
/// materialized description query, and constraint mode chases the merged
/// conjunctive form and pushes the derived meta-attribute equalities as
/// `σ′` onto the corresponding class scans.
pub fn optimize_with_meta(
    q: &Query,
    s: &Schema,
    meta: &Instance,
    meta_id: &str,
    mode: OptimizeMode,
    constraints: &[ImplicationConstraint],
) -> Result<Optimized, AlgebraError> {
    let mut verdicts = Vec::new();
    let query = optimize_node(q, s, meta, meta_id, mode, constraints, &mut verdicts)?;
    Ok(Optimized { query, verdicts })
}

fn optimize_node(
    q: &Query,
    s: &Schema,
    meta: &Instance,
    meta_id: &str,
    mode: OptimizeMode,
    constraints: &[ImplicationConstraint],
    verdicts: &mut Vec<Verdict>,
) -> Result<Query, AlgebraError> {
    if matches!(q, Query::SemijoinMu(..) | Query::Materialized { .. } | Query::Empty(_)) {
        return Ok(q.clone());
    }
    let info = typecheck(q, s)?;
    if !info.described {
        return q.map_children(|c| optimize_node(c, s, meta, meta_id, mode, constraints, verdicts));
    }
    let mq = m_rewrite(q, s)?;
    let meta_result = eval_algebra(&mq, s, meta)?;
    let verdict = |kind, scope| Verdict {
        subexpression: q.to_string(),
        kind,
        scope,
    };
    if meta_result.is_empty() {
        verdicts.push(verdict(VerdictKind::Unsatisfiable, Scope::MetaInstance(meta_id.into())));
        return Ok(Query::Empty(info.row));
    }
    match mode {
        OptimizeMode::Instance => {
            verdicts.push(verdict(
                VerdictKind::Restricted {
                    meta_rows: meta_result.len(),
                },
                Scope::MetaInstance(meta_id.into()),
            ));
            Ok(Query::semijoin_mu(
                q.clone(),
                Query::Materialized {
                    source: meta_id.into(),
                    row: meta_result.row,
                    tuples: meta_result.tuples,
                },
            ))
        }
        OptimizeMode::Constraint => {
            let Ok(form) = chase::conjunctive_form(q, s) else {
                verdicts.push(verdict(VerdictKind::Unchanged, Scope::AllInstances));
                return Ok(q.clone());
            };
            let (chased, facts) = chase::chase_apply(&form.cq, constraints);
            if chase::is_unsatisfiable(&chased).is_some() {
                verdicts.push(verdict(VerdictKind::Unsatisfiable, Scope::AllInstances));
                return Ok(Query::Empty(info.row));
            }
            let mut per_leaf: BTreeMap<usize, Vec<&chase::DerivedFact>> = BTreeMap::new();
            for fact in &facts {
                if let Some(k) = form.leaf_vars.iter().position(|v| chase::meta_var(v) == fact.var) {
                    per_leaf.entry(k).or_default().push(fact);
                }
            }
            if per_leaf.is_empty() {
                verdicts.push(verdict(VerdictKind::Unchanged, Scope::AllInstances));
                return Ok(q.clone());
            }
            let introduced = facts.iter().map(|f| f.to_string()).collect();
            let mut counter = 0;
            let out = push_leaf_selections(q, &per_leaf, &mut counter);
            verdicts.push(verdict(
                VerdictKind::RestrictionIntroduced(introduced),
                Scope::AllInstances,
            ));
            Ok(out)
        }
    }
}

/// Wraps the k-th class scan (in the traversal order of the conjunctive
/// form) with `σ′` for the facts derived about its description.
fn push_leaf_selections(q: &Query, per_leaf: &BTreeMap<usize, Vec<&chase::DerivedFact>>, counter: &mut usize) -> Query {
    if let Query::Class(_) = q {
        let k = *counter;
        *counter += 1;
        return match per_leaf.get(&k) {
            Some(facts) => {
                let cond = facts
                    .iter()
                    .map(|f| Cond::eq(1, [f.attr.clone()], f.value.clone()))
                    .reduce(Cond::and)
                    .expect("non-empty");
                Query::select_meta(cond, q.clone())
            }
            None => q.clone(),
        };
    }
    q.map_children(|c| Ok(push_leaf_selections(c, per_leaf, counter)))
        .expect("infallible")
}
