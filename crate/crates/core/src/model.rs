//! Object data model with description.
//!
//! A [`Schema`] carries relations, a class hierarchy with typing, named binary
//! relationships, and the [`DescriptionLayer`] (`desc` between classes and
//! `hom` between relationships). An [`Instance`] assigns o-values to
//! relations, oids to classes, values to oids, and carries `mu`, the map
//! from each described object to its meta-object.
//!
//! Validation functions are report-valued: they return every finding rather
//! than stopping at the first one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::quoted;

/// Opaque object identity. Identity is token equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Oid(pub String);

impl Oid {
    pub fn new(s: impl Into<String>) -> Self {
        Oid(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Oid {
    fn from(s: &str) -> Self {
        Oid(s.to_string())
    }
}

/// An o-value: constant, oid, tuple or finite set.
///
/// Tuples are keyed by attribute name, so attribute order is not significant
/// and names are distinct by construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OValue {
    Const(String),
    Oid(Oid),
    Tuple(BTreeMap<String, OValue>),
    Set(BTreeSet<OValue>),
}

impl OValue {
    pub fn constant(s: impl Into<String>) -> Self {
        OValue::Const(s.into())
    }

    pub fn oid(s: impl Into<String>) -> Self {
        OValue::Oid(Oid(s.into()))
    }

    pub fn tuple<K: Into<String>>(fields: impl IntoIterator<Item = (K, OValue)>) -> Self {
        OValue::Tuple(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn set(items: impl IntoIterator<Item = OValue>) -> Self {
        OValue::Set(items.into_iter().collect())
    }

    pub fn as_oid(&self) -> Option<&Oid> {
        match self {
            OValue::Oid(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_const(&self) -> Option<&str> {
        match self {
            OValue::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Attribute lookup on a tuple value.
    pub fn attr(&self, name: &str) -> Option<&OValue> {
        match self {
            OValue::Tuple(fields) => fields.get(name),
            _ => None,
        }
    }

    /// Every oid occurring anywhere inside this value.
    pub fn collect_oids<'a>(&'a self, out: &mut BTreeSet<&'a Oid>) {
        match self {
            OValue::Const(_) => {}
            OValue::Oid(o) => {
                out.insert(o);
            }
            OValue::Tuple(fields) => fields.values().for_each(|v| v.collect_oids(out)),
            OValue::Set(items) => items.iter().for_each(|v| v.collect_oids(out)),
        }
    }
}

impl fmt::Display for OValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OValue::Const(c) => f.write_str(&quoted(c)),
            OValue::Oid(o) => write!(f, "{o}"),
            OValue::Tuple(fields) => {
                f.write_str("<")?;
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str(">")
            }
            OValue::Set(items) => {
                f.write_str("{")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Type expressions over a set of class names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeExpr {
    /// The domain of constants.
    D,
    Class(String),
    Tuple(BTreeMap<String, TypeExpr>),
    Set(Box<TypeExpr>),
}

impl TypeExpr {
    pub fn class(name: impl Into<String>) -> Self {
        TypeExpr::Class(name.into())
    }

    pub fn set_of(inner: TypeExpr) -> Self {
        TypeExpr::Set(Box::new(inner))
    }

    pub fn tuple<K: Into<String>>(fields: impl IntoIterator<Item = (K, TypeExpr)>) -> Self {
        TypeExpr::Tuple(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    fn collect_classes<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            TypeExpr::D => {}
            TypeExpr::Class(c) => out.push(c),
            TypeExpr::Tuple(fields) => fields.values().for_each(|t| t.collect_classes(out)),
            TypeExpr::Set(t) => t.collect_classes(out),
        }
    }

    /// Class names referenced anywhere in this type.
    pub fn classes(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_classes(&mut out);
        out
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::D => f.write_str("D"),
            TypeExpr::Class(c) => f.write_str(c),
            TypeExpr::Tuple(fields) => {
                f.write_str("<")?;
                for (i, (k, t)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {t}")?;
                }
                f.write_str(">")
            }
            TypeExpr::Set(t) => write!(f, "{{{t}}}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown relationship `{0}`")]
    UnknownRelationship(String),
    #[error("invalid path `{path}`: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("invalid relationship `{name}`: {reason}")]
    InvalidRelationship { name: String, reason: String },
    #[error("untyped join on variable `{var}` in view: {reason}")]
    UntypedJoin { var: String, reason: String },
    #[error("oid `{0}` has no value")]
    MissingValue(Oid),
}

/// Classes with their typing and the subclass order.
///
/// Only the declared (direct) subclass pairs are stored; the order itself is
/// their reflexive-transitive closure.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassHierarchy {
    classes: BTreeMap<String, TypeExpr>,
    subclass: BTreeSet<(String, String)>,
}

impl ClassHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_class(&mut self, name: impl Into<String>, ty: TypeExpr) {
        self.classes.insert(name.into(), ty);
    }

    /// Declares `sub ⪯ sup`.
    pub fn add_subclass(&mut self, sub: impl Into<String>, sup: impl Into<String>) {
        self.subclass.insert((sub.into(), sup.into()));
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.contains_key(class)
    }

    pub fn type_of(&self, class: &str) -> Option<&TypeExpr> {
        self.classes.get(class)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &TypeExpr)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn declared_subclasses(&self) -> impl Iterator<Item = (&str, &str)> {
        self.subclass.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// The declared direct superclasses of `class`.
    pub fn direct_superclasses(&self, class: &str) -> Vec<&str> {
        self.subclass
            .iter()
            .filter(|(a, _)| a == class)
            .map(|(_, b)| b.as_str())
            .collect()
    }

    /// `sub ⪯ sup` under the reflexive-transitive closure.
    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        if sub == sup {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([sub]);
        while let Some(c) = queue.pop_front() {
            for (a, b) in &self.subclass {
                if a == c && seen.insert(b.as_str()) {
                    if b == sup {
                        return true;
                    }
                    queue.push_back(b);
                }
            }
        }
        false
    }

    pub fn comparable(&self, a: &str, b: &str) -> bool {
        self.is_subclass(a, b) || self.is_subclass(b, a)
    }

    /// All `P0` with `P0 ⪯ class`, including `class` itself.
    pub fn subclasses_of(&self, class: &str) -> Vec<&str> {
        self.classes
            .keys()
            .filter(|c| self.is_subclass(c, class))
            .map(String::as_str)
            .collect()
    }

    fn check_type_refs(&self, t: &TypeExpr) -> Result<(), ModelError> {
        for c in t.classes() {
            if !self.contains(c) {
                return Err(ModelError::UnknownClass(c.to_string()));
            }
        }
        Ok(())
    }
}

/// Subtyping `t1 ≤ t2`: class order lifted to types, set congruence, and
/// record width plus depth subtyping.
pub fn subtype(t1: &TypeExpr, t2: &TypeExpr, h: &ClassHierarchy) -> Result<bool, ModelError> {
    h.check_type_refs(t1)?;
    h.check_type_refs(t2)?;
    Ok(is_subtype(t1, t2, h))
}

fn is_subtype(t1: &TypeExpr, t2: &TypeExpr, h: &ClassHierarchy) -> bool {
    match (t1, t2) {
        (TypeExpr::D, TypeExpr::D) => true,
        (TypeExpr::Class(a), TypeExpr::Class(b)) => h.is_subclass(a, b),
        (TypeExpr::Set(a), TypeExpr::Set(b)) => is_subtype(a, b, h),
        (TypeExpr::Tuple(wide), TypeExpr::Tuple(narrow)) => narrow
            .iter()
            .all(|(k, tn)| wide.get(k).is_some_and(|tw| is_subtype(tw, tn, h))),
        _ => false,
    }
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    UnknownClass {
        context: String,
        class: String,
    },
    UnknownRelation {
        relation: String,
    },
    SubclassCycle {
        a: String,
        b: String,
    },
    IllTypedSubclass {
        sub: String,
        sup: String,
    },
    OverlappingClasses {
        oid: Oid,
        classes: Vec<String>,
    },
    UnclassifiedOid {
        oid: Oid,
    },
    MissingValue {
        oid: Oid,
    },
    NonConformingValue {
        oid: Oid,
        class: String,
    },
    NonConformingTuple {
        relation: String,
        value: String,
    },
    InvalidRelationship {
        name: String,
        reason: String,
    },
    DescUnknownClass {
        meta: String,
        class: String,
    },
    DescCycle {
        a: String,
        b: String,
    },
    DescNotClosed {
        meta: String,
        class: String,
    },
    DescNotOneToOne {
        first: String,
        second: String,
        shared: String,
    },
    HomUnknownRelationship {
        name: String,
    },
    HomEndpointsNotDescribed {
        meta_rel: String,
        rel: String,
    },
    HomCycle {
        a: String,
        b: String,
    },
    HomNotOneToOne {
        first: String,
        second: String,
        shared: String,
    },
    MuMissing {
        oid: Oid,
        class: String,
    },
    MuWrongTarget {
        oid: Oid,
        target: Oid,
        meta_class: String,
    },
    MuUndescribed {
        oid: Oid,
    },
    HomNotPreserved {
        meta_rel: String,
        rel: String,
        from: Oid,
        to: Oid,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            UnknownClass { context, class } => write!(f, "{context}: unknown class `{class}`"),
            UnknownRelation { relation } => write!(f, "unknown relation `{relation}`"),
            SubclassCycle { a, b } => write!(f, "subclass order is cyclic between `{a}` and `{b}`"),
            IllTypedSubclass { sub, sup } => {
                write!(f, "`{sub}` ⪯ `{sup}` but T({sub}) is not a subtype of T({sup})")
            }
            OverlappingClasses { oid, classes } => {
                write!(f, "oid `{oid}` belongs to several classes: {}", classes.join(", "))
            }
            UnclassifiedOid { oid } => write!(f, "oid `{oid}` belongs to no class"),
            MissingValue { oid } => write!(f, "oid `{oid}` has no value"),
            NonConformingValue { oid, class } => {
                write!(f, "value of `{oid}` does not conform to T({class})")
            }
            NonConformingTuple { relation, value } => {
                write!(f, "tuple {value} of `{relation}` does not conform to its type")
            }
            InvalidRelationship { name, reason } => {
                write!(f, "relationship `{name}` is invalid: {reason}")
            }
            DescUnknownClass { meta, class } => {
                write!(f, "desc `{meta}` -> `{class}` references an unknown class")
            }
            DescCycle { a, b } => write!(f, "desc is cyclic between `{a}` and `{b}`"),
            DescNotClosed { meta, class } => {
                write!(f, "desc is not closed under ⪯: missing `{meta}` -> `{class}`")
            }
            DescNotOneToOne { first, second, shared } => write!(
                f,
                "desc is not one-to-one up to inheritance: `{first}` and `{second}` both pair with `{shared}`"
            ),
            HomUnknownRelationship { name } => {
                write!(f, "hom references unknown relationship `{name}`")
            }
            HomEndpointsNotDescribed { meta_rel, rel } => write!(
                f,
                "hom `{meta_rel}` -> `{rel}`: endpoint classes are not related by desc"
            ),
            HomCycle { a, b } => write!(f, "hom is cyclic between `{a}` and `{b}`"),
            HomNotOneToOne { first, second, shared } => write!(
                f,
                "hom is not one-to-one: `{first}` and `{second}` both pair with `{shared}`"
            ),
            MuMissing { oid, class } => {
                write!(f, "mu is undefined for `{oid}` of described class `{class}`")
            }
            MuWrongTarget {
                oid,
                target,
                meta_class,
            } => write!(
                f,
                "mu({oid}) = `{target}` is not an object of meta-class `{meta_class}`"
            ),
            MuUndescribed { oid } => write!(f, "mu is defined for `{oid}` of an undescribed class"),
            HomNotPreserved {
                meta_rel,
                rel,
                from,
                to,
            } => write!(f, "({from}, {to}) ∈ `{rel}` but its mu-image is not in `{meta_rel}`"),
        }
    }
}

/// Lists every `P1 ⪯ P2` with `T(P1) ≰ T(P2)`, cycles in `⪯`, and unknown
/// classes referenced by types or subclass declarations.
pub fn well_formed_hierarchy(h: &ClassHierarchy) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    for (name, ty) in h.classes() {
        for c in ty.classes() {
            if !h.contains(c) {
                out.insert(Violation::UnknownClass {
                    context: format!("type of `{name}`"),
                    class: c.to_string(),
                });
            }
        }
    }
    for (a, b) in h.declared_subclasses() {
        for c in [a, b] {
            if !h.contains(c) {
                out.insert(Violation::UnknownClass {
                    context: format!("subclass declaration `{a}` <= `{b}`"),
                    class: c.to_string(),
                });
            }
        }
    }
    let names: Vec<&str> = h.classes().map(|(n, _)| n).collect();
    for &p1 in &names {
        for &p2 in &names {
            if p1 == p2 || !h.is_subclass(p1, p2) {
                continue;
            }
            if p1 < p2 && h.is_subclass(p2, p1) {
                out.insert(Violation::SubclassCycle {
                    a: p1.to_string(),
                    b: p2.to_string(),
                });
            }
            let (t1, t2) = (h.type_of(p1).unwrap(), h.type_of(p2).unwrap());
            if !is_subtype(t1, t2, h) {
                out.insert(Violation::IllTypedSubclass {
                    sub: p1.to_string(),
                    sup: p2.to_string(),
                });
            }
        }
    }
    out.into_iter().collect()
}

/// A relation declaration: a tuple type whose column order is significant
/// for positional atoms in views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationDecl {
    pub columns: Vec<(String, TypeExpr)>,
}

impl RelationDecl {
    pub fn new<K: Into<String>>(columns: impl IntoIterator<Item = (K, TypeExpr)>) -> Self {
        RelationDecl {
            columns: columns.into_iter().map(|(k, t)| (k.into(), t)).collect(),
        }
    }

    pub fn tuple_type(&self) -> TypeExpr {
        TypeExpr::Tuple(self.columns.iter().cloned().collect())
    }
}

/// A path expression `P0.A1.….An` starting at a class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PathExpr {
    pub class: String,
    pub attrs: Vec<String>,
}

impl PathExpr {
    pub fn new<S: Into<String>>(class: impl Into<String>, attrs: impl IntoIterator<Item = S>) -> Self {
        PathExpr {
            class: class.into(),
            attrs: attrs.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.class)?;
        for a in &self.attrs {
            write!(f, ".{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) => f.write_str(&quoted(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewAtom {
    /// Positional atom over a relation of the schema.
    Relation { name: String, args: Vec<Term> },
    /// Binary atom over a path-defined or simple relationship.
    Relationship { name: String, from: Term, to: Term },
}

/// `head(O1, O2) :- body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConjView {
    pub head: (String, String),
    pub body: Vec<ViewAtom>,
}

/// A binary relationship between two classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Relationship {
    /// A relation with binary type `<A1: P1, A2: P2>`.
    Relation(String),
    Path(PathExpr),
    View(ConjView),
}

/// `desc` pairs `(meta-class, class)` and `hom` pairs
/// `(meta-relationship, relationship)`.
///
/// Both are stored exactly as declared (not transitively closed).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionLayer {
    pub desc: BTreeSet<(String, String)>,
    pub hom: BTreeSet<(String, String)>,
}

impl DescriptionLayer {
    /// The meta-class used to describe `class`: the ⪯-least `P'` with
    /// `P' desc class`.
    pub fn meta_class_of<'a>(&'a self, class: &str, h: &ClassHierarchy) -> Option<&'a str> {
        let candidates: Vec<&str> = self
            .desc
            .iter()
            .filter(|(_, c)| c == class)
            .map(|(m, _)| m.as_str())
            .collect();
        candidates
            .iter()
            .copied()
            .find(|&m| candidates.iter().all(|&o| h.is_subclass(m, o)))
            .or_else(|| candidates.first().copied())
    }

    /// Inverse of [`meta_class_of`](Self::meta_class_of): the unique class
    /// whose meta-class is `meta`.
    pub fn described_class_of<'a>(&'a self, meta: &str, h: &ClassHierarchy) -> Option<&'a str> {
        let mut found = self
            .desc
            .iter()
            .map(|(_, c)| c.as_str())
            .filter(|c| self.meta_class_of(c, h) == Some(meta));
        let first = found.next()?;
        if found.any(|c| c != first) {
            None
        } else {
            Some(first)
        }
    }

    pub fn is_described(&self, class: &str) -> bool {
        self.desc.iter().any(|(_, c)| c == class)
    }

    pub fn meta_relationship_of(&self, rel: &str) -> Option<&str> {
        self.hom.iter().find(|(_, r)| r == rel).map(|(m, _)| m.as_str())
    }

    pub fn described_relationship_of(&self, meta_rel: &str) -> Option<&str> {
        self.hom.iter().find(|(m, _)| m == meta_rel).map(|(_, r)| r.as_str())
    }
}

/// Schema with description.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub relations: BTreeMap<String, RelationDecl>,
    pub hierarchy: ClassHierarchy,
    pub relationships: BTreeMap<String, Relationship>,
    pub description: DescriptionLayer,
}

impl Schema {
    pub fn relationship(&self, name: &str) -> Result<&Relationship, ModelError> {
        self.relationships
            .get(name)
            .ok_or_else(|| ModelError::UnknownRelationship(name.to_string()))
    }

    /// The classes `(P1, P2)` a relationship relates.
    pub fn relationship_endpoints(&self, name: &str) -> Result<(String, String), ModelError> {
        relationship_endpoints(name, self.relationship(name)?, self)
    }
}

/// Instance with description: `ρ`, `π`, `ν` and `μ`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Instance {
    pub relations: BTreeMap<String, BTreeSet<OValue>>,
    pub classes: BTreeMap<String, BTreeSet<Oid>>,
    pub values: BTreeMap<Oid, OValue>,
    pub mu: BTreeMap<Oid, Oid>,
}

impl Instance {
    pub fn add_object(&mut self, oid: impl Into<Oid>, class: &str, value: OValue) {
        let oid = oid.into();
        self.classes.entry(class.to_string()).or_default().insert(oid.clone());
        self.values.insert(oid, value);
    }

    /// The (first) class whose direct extension contains `oid`.
    pub fn class_of(&self, oid: &Oid) -> Option<&str> {
        self.classes
            .iter()
            .find(|(_, oids)| oids.contains(oid))
            .map(|(c, _)| c.as_str())
    }

    pub fn mu(&self, oid: &Oid) -> Option<&Oid> {
        self.mu.get(oid)
    }
}

impl From<String> for Oid {
    fn from(s: String) -> Self {
        Oid(s)
    }
}

/// `π*(P)`: the union of `π(P0)` over all `P0 ⪯ P`.
pub fn class_extension(class: &str, inst: &Instance, h: &ClassHierarchy) -> Result<BTreeSet<Oid>, ModelError> {
    if !h.contains(class) {
        return Err(ModelError::UnknownClass(class.to_string()));
    }
    Ok(h.subclasses_of(class)
        .into_iter()
        .filter_map(|c| inst.classes.get(c))
        .flatten()
        .cloned()
        .collect())
}

/// Membership of `v` in the disjoint interpretation of `t`.
///
/// Tuple values may carry attributes beyond those declared.
pub fn conforms(v: &OValue, t: &TypeExpr, inst: &Instance, h: &ClassHierarchy) -> bool {
    match (t, v) {
        (TypeExpr::D, OValue::Const(_)) => true,
        (TypeExpr::Class(p), OValue::Oid(o)) => h
            .subclasses_of(p)
            .into_iter()
            .any(|c| inst.classes.get(c).is_some_and(|s| s.contains(o))),
        (TypeExpr::Tuple(fields), OValue::Tuple(values)) => fields
            .iter()
            .all(|(k, ft)| values.get(k).is_some_and(|fv| conforms(fv, ft, inst, h))),
        (TypeExpr::Set(elem), OValue::Set(items)) => items.iter().all(|x| conforms(x, elem, inst, h)),
        _ => false,
    }
}

/// Checks disjointness of `π`, class membership of every mentioned oid,
/// `ν(o) ∈ ⟦T(P)⟧` and `ρ(R) ⊆ ⟦T(R)⟧`.
pub fn validate_instance(s: &Schema, inst: &Instance) -> Vec<Violation> {
    let h = &s.hierarchy;
    let mut out = BTreeSet::new();

    let mut membership: BTreeMap<&Oid, Vec<String>> = BTreeMap::new();
    for (class, oids) in &inst.classes {
        if !h.contains(class) {
            out.insert(Violation::UnknownClass {
                context: "instance".into(),
                class: class.clone(),
            });
        }
        for o in oids {
            membership.entry(o).or_default().push(class.clone());
        }
    }
    for (oid, classes) in &membership {
        if classes.len() > 1 {
            out.insert(Violation::OverlappingClasses {
                oid: (*oid).clone(),
                classes: classes.clone(),
            });
        }
    }

    let mut mentioned: BTreeSet<&Oid> = BTreeSet::new();
    for (o, v) in &inst.values {
        mentioned.insert(o);
        v.collect_oids(&mut mentioned);
    }
    for tuples in inst.relations.values() {
        tuples.iter().for_each(|v| v.collect_oids(&mut mentioned));
    }
    for (a, b) in &inst.mu {
        mentioned.insert(a);
        mentioned.insert(b);
    }
    for o in mentioned {
        if !membership.contains_key(o) {
            out.insert(Violation::UnclassifiedOid { oid: o.clone() });
        }
    }

    for (class, oids) in &inst.classes {
        let Some(ty) = h.type_of(class) else { continue };
        for o in oids {
            match inst.values.get(o) {
                None => {
                    out.insert(Violation::MissingValue { oid: o.clone() });
                }
                Some(v) if !conforms(v, ty, inst, h) => {
                    out.insert(Violation::NonConformingValue {
                        oid: o.clone(),
                        class: class.clone(),
                    });
                }
                Some(_) => {}
            }
        }
    }

    for (rel, tuples) in &inst.relations {
        let Some(decl) = s.relations.get(rel) else {
            out.insert(Violation::UnknownRelation { relation: rel.clone() });
            continue;
        };
        let ty = decl.tuple_type();
        for t in tuples {
            if !conforms(t, &ty, inst, h) {
                out.insert(Violation::NonConformingTuple {
                    relation: rel.clone(),
                    value: t.to_string(),
                });
            }
        }
    }
    out.into_iter().collect()
}

struct PathStep<'a> {
    /// `Some(class)` when the source type is a class (values reached through `ν`).
    source_class: Option<&'a str>,
    attr: &'a str,
    set_valued: bool,
    target: &'a TypeExpr,
}

fn resolve_path<'a>(pe: &'a PathExpr, h: &'a ClassHierarchy) -> Result<(Vec<PathStep<'a>>, &'a TypeExpr), ModelError> {
    let invalid = |reason: String| ModelError::InvalidPath {
        path: pe.to_string(),
        reason,
    };
    if !h.contains(&pe.class) {
        return Err(ModelError::UnknownClass(pe.class.clone()));
    }
    if pe.attrs.is_empty() {
        return Err(invalid("a path needs at least one attribute".into()));
    }
    let mut steps = Vec::with_capacity(pe.attrs.len());
    let mut current: Option<&TypeExpr> = None;
    for attr in &pe.attrs {
        let (source_class, structure) = match current {
            None => (Some(pe.class.as_str()), h.type_of(&pe.class).unwrap()),
            Some(TypeExpr::Class(c)) => {
                let t = h.type_of(c).ok_or_else(|| ModelError::UnknownClass(c.clone()))?;
                (Some(c.as_str()), t)
            }
            Some(t) => (None, t),
        };
        let TypeExpr::Tuple(fields) = structure else {
            return Err(invalid(format!("step `{attr}` on non-tuple type {structure}")));
        };
        let field = fields
            .get(attr)
            .ok_or_else(|| invalid(format!("attribute `{attr}` absent from {structure}")))?;
        let (set_valued, target) = match field {
            TypeExpr::Set(inner) => (true, inner.as_ref()),
            other => (false, other),
        };
        steps.push(PathStep {
            source_class,
            attr,
            set_valued,
            target,
        });
        current = Some(target);
    }
    Ok((steps, current.unwrap()))
}

/// The type reached by a path expression (element type for set-valued
/// final steps).
pub fn path_target_type<'a>(pe: &'a PathExpr, h: &'a ClassHierarchy) -> Result<&'a TypeExpr, ModelError> {
    resolve_path(pe, h).map(|(_, t)| t)
}

/// The extension relation `⟦P0.A1.….An⟧` as the composition of the
/// single-step extensions.
pub fn eval_path_expression(
    pe: &PathExpr,
    s: &Schema,
    inst: &Instance,
) -> Result<BTreeSet<(OValue, OValue)>, ModelError> {
    let h = &s.hierarchy;
    let (steps, _) = resolve_path(pe, h)?;
    let mut frontier: BTreeSet<(OValue, OValue)> = class_extension(&pe.class, inst, h)?
        .into_iter()
        .map(|o| (OValue::Oid(o.clone()), OValue::Oid(o)))
        .collect();
    for step in &steps {
        let mut next = BTreeSet::new();
        for (origin, v1) in &frontier {
            let structure = match step.source_class {
                Some(_) => {
                    let Some(o) = v1.as_oid() else { continue };
                    inst.values.get(o).ok_or_else(|| ModelError::MissingValue(o.clone()))?
                }
                None => v1,
            };
            let Some(field) = structure.attr(step.attr) else {
                continue;
            };
            let targets: Vec<&OValue> = match (step.set_valued, field) {
                (true, OValue::Set(items)) => items.iter().collect(),
                (true, _) => continue,
                (false, v) => vec![v],
            };
            for v2 in targets {
                if conforms(v2, step.target, inst, h) {
                    next.insert((origin.clone(), v2.clone()));
                }
            }
        }
        frontier = next;
    }
    Ok(frontier)
}

fn relationship_endpoints(name: &str, r: &Relationship, s: &Schema) -> Result<(String, String), ModelError> {
    let invalid = |reason: String| ModelError::InvalidRelationship {
        name: name.to_string(),
        reason,
    };
    match r {
        Relationship::Relation(rel) => {
            let decl = s
                .relations
                .get(rel)
                .ok_or_else(|| ModelError::UnknownRelation(rel.clone()))?;
            match decl.columns.as_slice() {
                [(_, TypeExpr::Class(a)), (_, TypeExpr::Class(b))] => Ok((a.clone(), b.clone())),
                _ => Err(invalid(format!(
                    "relation `{rel}` is not a binary relation between classes"
                ))),
            }
        }
        Relationship::Path(pe) => match path_target_type(pe, &s.hierarchy)? {
            TypeExpr::Class(c) => Ok((pe.class.clone(), c.clone())),
            other => Err(invalid(format!("path `{pe}` ends at non-class type {other}"))),
        },
        Relationship::View(view) => {
            let types = check_view(name, view, s)?;
            Ok((types[&view.head.0].clone(), types[&view.head.1].clone()))
        }
    }
}

#[derive(Clone, PartialEq)]
enum ColumnType {
    D,
    Class(String),
}

/// Checks a conjunctive view and returns the class of every oid variable.
fn check_view(name: &str, view: &ConjView, s: &Schema) -> Result<BTreeMap<String, String>, ModelError> {
    let h = &s.hierarchy;
    let invalid = |reason: String| ModelError::InvalidRelationship {
        name: name.to_string(),
        reason,
    };
    let mut var_types: BTreeMap<&str, Vec<ColumnType>> = BTreeMap::new();
    let mut atom_vars: Vec<BTreeSet<&str>> = Vec::new();

    for atom in &view.body {
        let mut vars = BTreeSet::new();
        let mut positions: Vec<(&Term, ColumnType)> = Vec::new();
        match atom {
            ViewAtom::Relation { name: rel, args } => {
                let decl = s
                    .relations
                    .get(rel)
                    .ok_or_else(|| ModelError::UnknownRelation(rel.clone()))?;
                if decl.columns.len() != args.len() {
                    return Err(invalid(format!(
                        "atom `{rel}` has {} arguments, relation has {} columns",
                        args.len(),
                        decl.columns.len()
                    )));
                }
                for (arg, (_, ty)) in args.iter().zip(&decl.columns) {
                    let ct = match ty {
                        TypeExpr::D => ColumnType::D,
                        TypeExpr::Class(c) => ColumnType::Class(c.clone()),
                        other => return Err(invalid(format!("relation `{rel}` has non-atomic column type {other}"))),
                    };
                    positions.push((arg, ct));
                }
            }
            ViewAtom::Relationship { name: r, from, to } => {
                let rel = s.relationship(r)?;
                if matches!(rel, Relationship::View(_)) {
                    return Err(invalid(format!("view body references view `{r}`")));
                }
                let (a, b) = relationship_endpoints(r, rel, s)?;
                positions.push((from, ColumnType::Class(a)));
                positions.push((to, ColumnType::Class(b)));
            }
        }
        for (term, ct) in positions {
            match term {
                Term::Var(v) => {
                    vars.insert(v.as_str());
                    var_types.entry(v).or_default().push(ct);
                }
                Term::Const(c) => {
                    if ct != ColumnType::D {
                        return Err(invalid(format!("constant {} in a class-typed column", quoted(c))));
                    }
                }
            }
        }
        atom_vars.push(vars);
    }

    let mut classes = BTreeMap::new();
    for (var, types) in &var_types {
        let has_d = types.contains(&ColumnType::D);
        let class_types: Vec<&str> = types
            .iter()
            .filter_map(|t| match t {
                ColumnType::Class(c) => Some(c.as_str()),
                ColumnType::D => None,
            })
            .collect();
        if has_d && !class_types.is_empty() {
            return Err(ModelError::UntypedJoin {
                var: var.to_string(),
                reason: "joined across constant and oid columns".into(),
            });
        }
        for (i, a) in class_types.iter().enumerate() {
            for b in &class_types[i + 1..] {
                if !h.comparable(a, b) {
                    return Err(ModelError::UntypedJoin {
                        var: var.to_string(),
                        reason: format!("classes `{a}` and `{b}` are incomparable"),
                    });
                }
            }
        }
        // The most specific class among the joined columns types the variable.
        if let Some(best) = class_types
            .iter()
            .find(|c| class_types.iter().all(|o| h.is_subclass(c, o)))
        {
            classes.insert(var.to_string(), best.to_string());
        }
    }

    for head in [&view.head.0, &view.head.1] {
        if !classes.contains_key(head.as_str()) {
            return Err(invalid(format!("head variable `{head}` is not bound to an oid column")));
        }
    }

    // Connectedness of the body graph.
    if !atom_vars.is_empty() {
        let mut reached: BTreeSet<&str> = atom_vars[0].clone();
        let mut used = vec![false; atom_vars.len()];
        used[0] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for (i, vars) in atom_vars.iter().enumerate() {
                if !used[i] && vars.iter().any(|v| reached.contains(v)) {
                    used[i] = true;
                    reached.extend(vars.iter().copied());
                    changed = true;
                }
            }
        }
        if used.iter().any(|u| !u) {
            return Err(invalid("view body is not connected".into()));
        }
    } else {
        return Err(invalid("empty view body".into()));
    }
    Ok(classes)
}

/// The binary relation over oids denoted by a relationship.
pub fn eval_relationship(name: &str, s: &Schema, inst: &Instance) -> Result<BTreeSet<(Oid, Oid)>, ModelError> {
    let r = s.relationship(name)?;
    relationship_endpoints(name, r, s)?;
    match r {
        Relationship::Relation(rel) => {
            let decl = &s.relations[rel];
            let (a, b) = (&decl.columns[0].0, &decl.columns[1].0);
            Ok(inst
                .relations
                .get(rel)
                .into_iter()
                .flatten()
                .filter_map(|t| {
                    let x = t.attr(a)?.as_oid()?;
                    let y = t.attr(b)?.as_oid()?;
                    Some((x.clone(), y.clone()))
                })
                .collect())
        }
        Relationship::Path(pe) => Ok(eval_path_expression(pe, s, inst)?
            .into_iter()
            .filter_map(|(x, y)| match (x, y) {
                (OValue::Oid(x), OValue::Oid(y)) => Some((x, y)),
                _ => None,
            })
            .collect()),
        Relationship::View(view) => eval_view(view, s, inst),
    }
}

type Bindings = BTreeMap<String, OValue>;

fn bind(b: &mut Bindings, term: &Term, value: &OValue) -> bool {
    match term {
        Term::Const(c) => value.as_const() == Some(c.as_str()),
        Term::Var(v) => match b.get(v) {
            Some(existing) => existing == value,
            None => {
                b.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

fn eval_view(view: &ConjView, s: &Schema, inst: &Instance) -> Result<BTreeSet<(Oid, Oid)>, ModelError> {
    // Materialize every atom as a list of candidate rows first.
    let mut atoms: Vec<(Vec<&Term>, Vec<Vec<OValue>>)> = Vec::new();
    for atom in &view.body {
        match atom {
            ViewAtom::Relation { name, args } => {
                let decl = &s.relations[name];
                let rows = inst
                    .relations
                    .get(name)
                    .into_iter()
                    .flatten()
                    .filter_map(|t| decl.columns.iter().map(|(c, _)| t.attr(c).cloned()).collect())
                    .collect();
                atoms.push((args.iter().collect(), rows));
            }
            ViewAtom::Relationship { name, from, to } => {
                let rows = eval_relationship(name, s, inst)?
                    .into_iter()
                    .map(|(x, y)| vec![OValue::Oid(x), OValue::Oid(y)])
                    .collect();
                atoms.push((vec![from, to], rows));
            }
        }
    }
    let mut out = BTreeSet::new();
    let mut stack: Vec<(usize, Bindings)> = vec![(0, Bindings::new())];
    while let Some((i, b)) = stack.pop() {
        if i == atoms.len() {
            if let (Some(OValue::Oid(x)), Some(OValue::Oid(y))) = (b.get(&view.head.0), b.get(&view.head.1)) {
                out.insert((x.clone(), y.clone()));
            }
            continue;
        }
        let (terms, rows) = &atoms[i];
        for row in rows {
            let mut nb = b.clone();
            if terms.iter().zip(row).all(|(t, v)| bind(&mut nb, t, v)) {
                stack.push((i + 1, nb));
            }
        }
    }
    Ok(out)
}

fn closure_cycles(pairs: &BTreeSet<(String, String)>) -> Vec<(String, String)> {
    let nodes: BTreeSet<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    let reach = |from: &str, to: &str| -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for (a, b) in pairs {
                if a == n && seen.insert(b.as_str()) {
                    if b == to {
                        return true;
                    }
                    queue.push_back(b);
                }
            }
        }
        false
    };
    let mut out = Vec::new();
    for &a in &nodes {
        if reach(a, a) && pairs.contains(&(a.to_string(), a.to_string())) {
            out.push((a.to_string(), a.to_string()));
        }
        for &b in &nodes {
            if a < b && reach(a, b) && reach(b, a) {
                out.push((a.to_string(), b.to_string()));
            }
        }
    }
    out
}

/// Checks the `desc` and `hom` laws, totality and typing of `μ`, and that
/// every hom pair is preserved by `μ` on the instance.
pub fn validate_description_layer(s: &Schema, inst: &Instance) -> Vec<Violation> {
    let h = &s.hierarchy;
    let layer = &s.description;
    let mut out = BTreeSet::new();

    let mut desc_ok = true;
    for (meta, class) in &layer.desc {
        if !h.contains(meta) || !h.contains(class) {
            desc_ok = false;
            out.insert(Violation::DescUnknownClass {
                meta: meta.clone(),
                class: class.clone(),
            });
        }
    }
    for (a, b) in closure_cycles(&layer.desc) {
        out.insert(Violation::DescCycle { a, b });
    }
    if desc_ok {
        for (meta, class) in &layer.desc {
            for sub in h.subclasses_of(class) {
                for meta_sub in h.subclasses_of(meta) {
                    if !layer.desc.contains(&(meta_sub.to_string(), sub.to_string())) {
                        out.insert(Violation::DescNotClosed {
                            meta: meta_sub.to_string(),
                            class: sub.to_string(),
                        });
                    }
                }
            }
        }
        for (m1, c1) in &layer.desc {
            for (m2, c2) in &layer.desc {
                if c1 == c2 && m1 < m2 && !h.comparable(m1, m2) {
                    out.insert(Violation::DescNotOneToOne {
                        first: m1.clone(),
                        second: m2.clone(),
                        shared: c1.clone(),
                    });
                }
                if m1 == m2 && c1 < c2 && !h.comparable(c1, c2) {
                    out.insert(Violation::DescNotOneToOne {
                        first: c1.clone(),
                        second: c2.clone(),
                        shared: m1.clone(),
                    });
                }
            }
        }
    }

    for (a, b) in closure_cycles(&layer.hom) {
        out.insert(Violation::HomCycle { a, b });
    }
    for (m1, r1) in &layer.hom {
        for (m2, r2) in &layer.hom {
            if m1 == m2 && r1 < r2 {
                out.insert(Violation::HomNotOneToOne {
                    first: r1.clone(),
                    second: r2.clone(),
                    shared: m1.clone(),
                });
            }
            if r1 == r2 && m1 < m2 {
                out.insert(Violation::HomNotOneToOne {
                    first: m1.clone(),
                    second: m2.clone(),
                    shared: r1.clone(),
                });
            }
        }
    }

    // mu: totality and typing on every described class.
    if desc_ok {
        for (meta, class) in &layer.desc {
            let Ok(objects) = class_extension(class, inst, h) else {
                continue;
            };
            let Ok(metas) = class_extension(meta, inst, h) else {
                continue;
            };
            for o in objects {
                match inst.mu.get(&o) {
                    None => {
                        out.insert(Violation::MuMissing {
                            oid: o.clone(),
                            class: class.clone(),
                        });
                    }
                    Some(t) if !metas.contains(t) => {
                        out.insert(Violation::MuWrongTarget {
                            oid: o.clone(),
                            target: t.clone(),
                            meta_class: meta.clone(),
                        });
                    }
                    Some(_) => {}
                }
            }
        }
        for o in inst.mu.keys() {
            let described = inst
                .class_of(o)
                .is_some_and(|c| layer.desc.iter().any(|(_, described)| h.is_subclass(c, described)));
            if !described {
                out.insert(Violation::MuUndescribed { oid: o.clone() });
            }
        }
    }

    for (meta_rel, rel) in &layer.hom {
        let mut known = true;
        for r in [meta_rel, rel] {
            if !s.relationships.contains_key(r) {
                known = false;
                out.insert(Violation::HomUnknownRelationship { name: r.clone() });
            }
        }
        if !known {
            continue;
        }
        let endpoints = s
            .relationship_endpoints(meta_rel)
            .and_then(|m| s.relationship_endpoints(rel).map(|r| (m, r)));
        let ((m1, m2), (p1, p2)) = match endpoints {
            Ok(e) => e,
            Err(e) => {
                out.insert(Violation::InvalidRelationship {
                    name: format!("{meta_rel} / {rel}"),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !layer.desc.contains(&(m1, p1)) || !layer.desc.contains(&(m2, p2)) {
            out.insert(Violation::HomEndpointsNotDescribed {
                meta_rel: meta_rel.clone(),
                rel: rel.clone(),
            });
        }
        let (Ok(instance_pairs), Ok(meta_pairs)) =
            (eval_relationship(rel, s, inst), eval_relationship(meta_rel, s, inst))
        else {
            continue;
        };
        for (x, y) in instance_pairs {
            let preserved = match (inst.mu.get(&x), inst.mu.get(&y)) {
                (Some(mx), Some(my)) => meta_pairs.contains(&(mx.clone(), my.clone())),
                _ => false,
            };
            if !preserved {
                out.insert(Violation::HomNotPreserved {
                    meta_rel: meta_rel.clone(),
                    rel: rel.clone(),
                    from: x,
                    to: y,
                });
            }
        }
    }
    out.into_iter().collect()
}

/// Every relationship declared in the schema is evaluable.
pub fn validate_relationships(s: &Schema) -> Vec<Violation> {
    s.relationships
        .iter()
        .filter_map(|(name, r)| {
            relationship_endpoints(name, r, s)
                .err()
                .map(|e| Violation::InvalidRelationship {
                    name: name.clone(),
                    reason: e.to_string(),
                })
        })
        .collect()
}

/// Hierarchy, relationship, instance and description checks together.
pub fn validate_all(s: &Schema, inst: &Instance) -> Vec<Violation> {
    let mut out: BTreeSet<Violation> = well_formed_hierarchy(&s.hierarchy).into_iter().collect();
    out.extend(validate_relationships(s));
    out.extend(validate_instance(s, inst));
    out.extend(validate_description_layer(s, inst));
    out.into_iter().collect()
}
