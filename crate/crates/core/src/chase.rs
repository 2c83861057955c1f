//! Conjunctive described queries merged with their description queries,
//! the chase with equality-headed implication constraints, redundancy
//! elimination and constraint lowering.
//!
//! A query body is treated as a frozen database: constraint bodies are
//! matched homomorphically into it and each match adds the head equality.
//! Constraints never introduce variables, so the chase terminates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::rc::Rc;

use crate::algebra::{attr_values, typecheck, AlgebraError, Query, TupleSet};
use crate::model::{class_extension, eval_relationship, Instance, Oid, Schema};
use crate::quoted;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Class {
        class: String,
        var: String,
    },
    Rel {
        rel: String,
        from: String,
        to: String,
    },
    /// `μ(var, meta)`.
    Mu {
        var: String,
        meta: String,
    },
    /// `(var.attr = "value")`, or `(μ(var).attr = "value")` when `via_mu`.
    AttrEq {
        var: String,
        attr: String,
        value: String,
        via_mu: bool,
    },
}

impl Atom {
    pub fn class(class: impl Into<String>, var: impl Into<String>) -> Self {
        Atom::Class {
            class: class.into(),
            var: var.into(),
        }
    }

    pub fn rel(rel: impl Into<String>, from: impl Into<String>, to: impl Into<String>) -> Self {
        Atom::Rel {
            rel: rel.into(),
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn mu(var: impl Into<String>, meta: impl Into<String>) -> Self {
        Atom::Mu {
            var: var.into(),
            meta: meta.into(),
        }
    }

    pub fn attr_eq(var: impl Into<String>, attr: impl Into<String>, value: impl Into<String>) -> Self {
        Atom::AttrEq {
            var: var.into(),
            attr: attr.into(),
            value: value.into(),
            via_mu: false,
        }
    }

    pub fn vars(&self) -> Vec<&str> {
        match self {
            Atom::Class { var, .. } | Atom::AttrEq { var, .. } => vec![var],
            Atom::Rel { from, to, .. } => vec![from, to],
            Atom::Mu { var, meta } => vec![var, meta],
        }
    }

    fn rename(&self, f: &impl Fn(&str) -> String) -> Atom {
        match self {
            Atom::Class { class, var } => Atom::class(class.clone(), f(var)),
            Atom::Rel { rel, from, to } => Atom::rel(rel.clone(), f(from), f(to)),
            Atom::Mu { var, meta } => Atom::mu(f(var), f(meta)),
            Atom::AttrEq {
                var,
                attr,
                value,
                via_mu,
            } => Atom::AttrEq {
                var: f(var),
                attr: attr.clone(),
                value: value.clone(),
                via_mu: *via_mu,
            },
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Class { class, var } => write!(f, "{class}({var})"),
            Atom::Rel { rel, from, to } => write!(f, "{rel}({from}, {to})"),
            Atom::Mu { var, meta } => write!(f, "mu({var}, {meta})"),
            Atom::AttrEq {
                var,
                attr,
                value,
                via_mu: false,
            } => write!(f, "({var}.{attr} = {})", quoted(value)),
            Atom::AttrEq { var, attr, value, .. } => write!(f, "(mu({var}).{attr} = {})", quoted(value)),
        }
    }
}

fn push_unique(body: &mut Vec<Atom>, a: Atom) -> bool {
    if body.contains(&a) {
        false
    } else {
        body.push(a);
        true
    }
}

/// `Q(head) :- body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConjunctiveQuery {
    pub head: Vec<String>,
    pub body: Vec<Atom>,
}

impl ConjunctiveQuery {
    pub fn vars(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(|a| a.vars()).collect()
    }
}

impl fmt::Display for ConjunctiveQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}) :- ", self.head.join(", "))?;
        let atoms: Vec<String> = self.body.iter().map(|a| a.to_string()).collect();
        write!(f, "{} .", atoms.join(", "))
    }
}

/// `head :- body` where `head` is an `AttrEq` over a body variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplicationConstraint {
    pub id: String,
    pub head: Atom,
    pub body: Vec<Atom>,
}

impl ImplicationConstraint {
    /// Checks that the head is an equality over a variable of the body.
    pub fn check(&self) -> Result<(), String> {
        let Atom::AttrEq { var, .. } = &self.head else {
            return Err(format!("constraint {}: head must be an attribute equality", self.id));
        };
        if !self.body.iter().any(|a| a.vars().contains(&var.as_str())) {
            return Err(format!(
                "constraint {}: head variable {var} does not occur in the body",
                self.id
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ImplicationConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms: Vec<String> = self.body.iter().map(|a| a.to_string()).collect();
        write!(f, "{}: {} :- {} .", self.id, self.head, atoms.join(", "))
    }
}

/// An equality added by the chase, with the constraint and the body atoms
/// its match used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedFact {
    pub var: String,
    pub attr: String,
    pub value: String,
    pub via_mu: bool,
    pub constraint: String,
    pub matched: Vec<Atom>,
}

impl DerivedFact {
    pub fn atom(&self) -> Atom {
        Atom::AttrEq {
            var: self.var.clone(),
            attr: self.attr.clone(),
            value: self.value.clone(),
            via_mu: self.via_mu,
        }
    }
}

impl fmt::Display for DerivedFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.atom().to_string();
        write!(f, "{} by {}", &a[1..a.len() - 1], self.constraint)
    }
}

/// The variable standing for the description of `var`.
pub fn meta_var(var: &str) -> String {
    format!("{var}'")
}

/// A merged conjunctive form together with the variable assigned to each
/// class scan, in left-to-right order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConjunctiveForm {
    pub cq: ConjunctiveQuery,
    pub leaf_vars: Vec<String>,
}

struct Builder<'a> {
    s: &'a Schema,
    atoms: Vec<Atom>,
    meta_eqs: Vec<Atom>,
    leaves: Vec<String>,
    parent: BTreeMap<usize, usize>,
}

impl Builder<'_> {
    fn find(&self, mut k: usize) -> usize {
        while let Some(&p) = self.parent.get(&k) {
            k = p;
        }
        k
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra.max(rb), ra.min(rb));
        }
    }

    fn gen(&mut self, q: &Query) -> Result<Vec<usize>, AlgebraError> {
        Ok(match q {
            Query::Class(p) => {
                let k = self.leaves.len() + 1;
                self.leaves.push(p.clone());
                self.atoms.push(Atom::class(p.clone(), format!("X{k}")));
                vec![k]
            }
            Query::Join {
                left,
                rel,
                lcol,
                rcol,
                right,
            } => {
                let l = self.gen(left)?;
                let r = self.gen(right)?;
                self.atoms.push(Atom::rel(
                    rel.clone(),
                    format!("X{}", l[lcol - 1]),
                    format!("X{}", r[rcol - 1]),
                ));
                l.into_iter().chain(r).collect()
            }
            Query::SelfJoin { rel, a, b, inner } => {
                let c = self.gen(inner)?;
                self.atoms.push(Atom::rel(
                    rel.clone(),
                    format!("X{}", c[a - 1]),
                    format!("X{}", c[b - 1]),
                ));
                c
            }
            Query::SelectMeta(cond, inner) => {
                let c = self.gen(inner)?;
                let conj = cond
                    .conjuncts()
                    .ok_or_else(|| AlgebraError::NotConjunctive(format!("condition {cond}")))?;
                for (col, path, value) in conj {
                    let [attr] = path else {
                        return Err(AlgebraError::NotConjunctive(format!("attribute path in {cond}")));
                    };
                    self.meta_eqs.push(Atom::attr_eq(
                        meta_var(&format!("X{}", c[col - 1])),
                        attr.clone(),
                        value,
                    ));
                }
                c
            }
            Query::Project(cols, inner) => {
                let c = self.gen(inner)?;
                cols.iter().map(|i| c[i - 1]).collect()
            }
            Query::Intersect(a, b) => {
                let ca = self.gen(a)?;
                let cb = self.gen(b)?;
                for (x, y) in ca.iter().zip(&cb) {
                    self.union(*x, *y);
                }
                ca
            }
            other => return Err(AlgebraError::NotConjunctive(other.to_string())),
        })
    }
}

/// `Q ⋉_μ M(Q)` as a conjunctive query with leaf bookkeeping.
///
/// Class scans get variables `X1, X2, …` in left-to-right order and their
/// descriptions `X1', X2', …`. The body lists the atoms of `Q`, then those
/// of `M(Q)`, then the `μ` links, then the equalities from `σ′`.
pub fn conjunctive_form(q: &Query, s: &Schema) -> Result<ConjunctiveForm, AlgebraError> {
    if !typecheck(q, s)?.described {
        return Err(AlgebraError::NotInFragment(q.to_string()));
    }
    let mut b = Builder {
        s,
        atoms: Vec::new(),
        meta_eqs: Vec::new(),
        leaves: Vec::new(),
        parent: BTreeMap::new(),
    };
    let cols = b.gen(q)?;
    let name = |k: usize| format!("X{}", b.find(k));
    let rename = |v: &str| {
        let base = v.trim_end_matches('\'');
        let k: usize = base[1..].parse().expect("generated variable");
        let primes = v.len() - base.len();
        format!("{}{}", name(k), "'".repeat(primes))
    };
    let d = &b.s.description;
    let h = &b.s.hierarchy;
    let mut body = Vec::new();
    let instance: Vec<Atom> = b.atoms.iter().map(|a| a.rename(&rename)).collect();
    for a in &instance {
        push_unique(&mut body, a.clone());
    }
    let mut mus = Vec::new();
    for a in &instance {
        match a {
            Atom::Class { class, var } => {
                let meta = d.meta_class_of(class, h).expect("described query");
                push_unique(&mut body, Atom::class(meta, meta_var(var)));
                if !mus.contains(&Atom::mu(var.clone(), meta_var(var))) {
                    mus.push(Atom::mu(var.clone(), meta_var(var)));
                }
            }
            Atom::Rel { rel, from, to } => {
                let meta = d.meta_relationship_of(rel).expect("described query");
                push_unique(&mut body, Atom::rel(meta, meta_var(from), meta_var(to)));
            }
            _ => {}
        }
    }
    for m in mus {
        push_unique(&mut body, m);
    }
    for e in &b.meta_eqs {
        push_unique(&mut body, e.rename(&rename));
    }
    Ok(ConjunctiveForm {
        cq: ConjunctiveQuery {
            head: cols.iter().map(|k| name(*k)).collect(),
            body,
        },
        leaf_vars: (1..=b.leaves.len()).map(name).collect(),
    })
}

/// The merged conjunctive form of a conjunctive described query.
pub fn to_conjunctive(q: &Query, s: &Schema) -> Result<ConjunctiveQuery, AlgebraError> {
    conjunctive_form(q, s).map(|f| f.cq)
}

/// All homomorphisms of `pattern` into the frozen `body`, sorted by the
/// images of the pattern variables in name order.
fn matches(pattern: &[Atom], body: &[Atom]) -> Vec<BTreeMap<String, String>> {
    fn bind(m: &mut BTreeMap<String, String>, added: &mut Vec<String>, k: &str, v: &str) -> bool {
        match m.get(k) {
            Some(existing) => existing == v,
            None => {
                m.insert(k.to_string(), v.to_string());
                added.push(k.to_string());
                true
            }
        }
    }
    fn go(pattern: &[Atom], body: &[Atom], m: &mut BTreeMap<String, String>, out: &mut Vec<BTreeMap<String, String>>) {
        let Some((first, rest)) = pattern.split_first() else {
            out.push(m.clone());
            return;
        };
        for cand in body {
            let mut added = Vec::new();
            let ok = match (first, cand) {
                (Atom::Class { class: c1, var: v1 }, Atom::Class { class: c2, var: v2 }) => {
                    c1 == c2 && bind(m, &mut added, v1, v2)
                }
                (
                    Atom::Rel {
                        rel: r1,
                        from: f1,
                        to: t1,
                    },
                    Atom::Rel {
                        rel: r2,
                        from: f2,
                        to: t2,
                    },
                ) => r1 == r2 && bind(m, &mut added, f1, f2) && bind(m, &mut added, t1, t2),
                (Atom::Mu { var: v1, meta: m1 }, Atom::Mu { var: v2, meta: m2 }) => {
                    bind(m, &mut added, v1, v2) && bind(m, &mut added, m1, m2)
                }
                (
                    Atom::AttrEq {
                        var: v1,
                        attr: a1,
                        value: s1,
                        via_mu: u1,
                    },
                    Atom::AttrEq {
                        var: v2,
                        attr: a2,
                        value: s2,
                        via_mu: u2,
                    },
                ) => a1 == a2 && s1 == s2 && u1 == u2 && bind(m, &mut added, v1, v2),
                _ => false,
            };
            if ok {
                go(rest, body, m, out);
            }
            for k in added {
                m.remove(&k);
            }
        }
    }
    let mut out = Vec::new();
    go(pattern, body, &mut BTreeMap::new(), &mut out);
    out.sort_by(|a, b| a.values().cmp(b.values()));
    out.dedup();
    out
}

/// Chases `cq` with `ics` to a fixpoint.
///
/// Constraints are tried in the given order and their matches in
/// lexicographic order of the matched variables; each new head equality
/// is added to the body and reported once.
pub fn chase_apply(cq: &ConjunctiveQuery, ics: &[ImplicationConstraint]) -> (ConjunctiveQuery, Vec<DerivedFact>) {
    let mut body = cq.body.clone();
    let mut facts = Vec::new();
    loop {
        let mut changed = false;
        for ic in ics {
            let Atom::AttrEq {
                var,
                attr,
                value,
                via_mu,
            } = &ic.head
            else {
                continue;
            };
            for m in matches(&ic.body, &body) {
                let Some(target) = m.get(var) else { continue };
                let fact = DerivedFact {
                    var: target.clone(),
                    attr: attr.clone(),
                    value: value.clone(),
                    via_mu: *via_mu,
                    constraint: ic.id.clone(),
                    matched: ic.body.iter().map(|a| a.rename(&|v| m[v].clone())).collect(),
                };
                if push_unique(&mut body, fact.atom()) {
                    facts.push(fact);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (
        ConjunctiveQuery {
            head: cq.head.clone(),
            body,
        },
        facts,
    )
}

/// Two equalities assigning different constants to the same attribute of
/// the same variable, if any.
pub fn is_unsatisfiable(cq: &ConjunctiveQuery) -> Option<(Atom, Atom)> {
    let mut seen: BTreeMap<(&str, &str, bool), &Atom> = BTreeMap::new();
    for a in &cq.body {
        if let Atom::AttrEq {
            var,
            attr,
            value,
            via_mu,
        } = a
        {
            match seen.get(&(var.as_str(), attr.as_str(), *via_mu)) {
                Some(Atom::AttrEq { value: other, .. }) if other != value => {
                    return Some((seen[&(var.as_str(), attr.as_str(), *via_mu)].clone(), a.clone()))
                }
                Some(_) => {}
                None => {
                    seen.insert((var, attr, *via_mu), a);
                }
            }
        }
    }
    None
}

/// Removes the redundancy introduced by merging `Q` with `M(Q)`.
///
/// First every meta-relationship atom `v'(X', Y')` is dropped when
/// `v'` hom `v`, `v(X, Y)` is in the body and `μ(X, X')`, `μ(Y, Y')` are
/// too. Then each meta-class atom `P'(X')` is dropped together with its
/// `μ` atoms when `X'` is not in the head, carries no equality, occurs in
/// no other atom, and its instance variable has a class atom whose
/// meta-class is below `P'`.
pub fn eliminate_redundancy(cq: &ConjunctiveQuery, s: &Schema) -> ConjunctiveQuery {
    let d = &s.description;
    let h = &s.hierarchy;
    let body = &cq.body;
    let has_mu = |x: &str, xm: &str| body.contains(&Atom::mu(x, xm));

    let phase1: Vec<Atom> = body
        .iter()
        .filter(|a| {
            let Atom::Rel { rel, from, to } = a else { return true };
            let Some(inst_rel) = d.described_relationship_of(rel) else {
                return true;
            };
            let covered = body.iter().any(|b| {
                matches!(b, Atom::Rel { rel: r, from: x, to: y }
                    if r == inst_rel && has_mu(x, from) && has_mu(y, to))
            });
            !covered
        })
        .cloned()
        .collect();

    let mut out = phase1.clone();
    for a in &phase1 {
        let Atom::Class {
            class: meta_class,
            var: xm,
        } = a
        else {
            continue;
        };
        let links: Vec<&str> = phase1
            .iter()
            .filter_map(|b| match b {
                Atom::Mu { var, meta } if meta == xm => Some(var.as_str()),
                _ => None,
            })
            .collect();
        if links.is_empty() || cq.head.contains(xm) {
            continue;
        }
        let other_use = phase1
            .iter()
            .any(|b| b != a && !matches!(b, Atom::Mu { meta, .. } if meta == xm) && b.vars().contains(&xm.as_str()));
        let implied = links.iter().all(|x| {
            phase1.iter().any(|b| {
                matches!(b, Atom::Class { class, var } if var == x
                    && d.meta_class_of(class, h).is_some_and(|m| h.is_subclass(m, meta_class)))
            })
        });
        if !other_use && implied {
            out.retain(|b| b != a && !matches!(b, Atom::Mu { meta, .. } if meta == xm));
        }
    }
    ConjunctiveQuery {
        head: cq.head.clone(),
        body: out,
    }
}

/// Translates a meta-level constraint one level down: `P' ↦ P`,
/// `v' ↦ v`, and `X.a = "s"` becomes `μ(X).a = "s"`.
pub fn lower_constraint(ic: &ImplicationConstraint, s: &Schema) -> Result<ImplicationConstraint, AlgebraError> {
    let d = &s.description;
    let lower = |a: &Atom| -> Result<Atom, AlgebraError> {
        Ok(match a {
            Atom::Class { class, var } => Atom::class(
                d.described_class_of(class, &s.hierarchy)
                    .ok_or_else(|| AlgebraError::NotInFragment(format!("class {class} describes no class")))?,
                var.clone(),
            ),
            Atom::Rel { rel, from, to } => Atom::rel(
                d.described_relationship_of(rel)
                    .ok_or_else(|| AlgebraError::NotInFragment(format!("relationship {rel} describes nothing")))?,
                from.clone(),
                to.clone(),
            ),
            Atom::AttrEq {
                var,
                attr,
                value,
                via_mu: false,
            } => Atom::AttrEq {
                var: var.clone(),
                attr: attr.clone(),
                value: value.clone(),
                via_mu: true,
            },
            other => return Err(AlgebraError::NotInFragment(format!("atom {other} cannot be lowered"))),
        })
    };
    Ok(ImplicationConstraint {
        id: ic.id.clone(),
        head: lower(&ic.head)?,
        body: ic.body.iter().map(lower).collect::<Result<_, _>>()?,
    })
}

type Adjacency = Rc<(BTreeMap<Oid, BTreeSet<Oid>>, BTreeMap<Oid, BTreeSet<Oid>>)>;

struct Db<'a> {
    s: &'a Schema,
    inst: &'a Instance,
    classes: HashMap<String, Rc<BTreeSet<Oid>>>,
    rels: HashMap<String, Adjacency>,
    mu_back: BTreeMap<Oid, BTreeSet<Oid>>,
}

impl Db<'_> {
    fn class(&mut self, c: &str) -> Result<Rc<BTreeSet<Oid>>, AlgebraError> {
        if let Some(x) = self.classes.get(c) {
            return Ok(x.clone());
        }
        let ext = Rc::new(class_extension(c, self.inst, &self.s.hierarchy)?);
        self.classes.insert(c.to_string(), ext.clone());
        Ok(ext)
    }

    fn rel(&mut self, r: &str) -> Result<Adjacency, AlgebraError> {
        if let Some(x) = self.rels.get(r) {
            return Ok(x.clone());
        }
        let (mut fwd, mut back): (BTreeMap<Oid, BTreeSet<Oid>>, BTreeMap<Oid, BTreeSet<Oid>>) = Default::default();
        for (a, b) in eval_relationship(r, self.s, self.inst)? {
            fwd.entry(a.clone()).or_default().insert(b.clone());
            back.entry(b).or_default().insert(a);
        }
        let adj = Rc::new((fwd, back));
        self.rels.insert(r.to_string(), adj.clone());
        Ok(adj)
    }
}

fn attr_holds(oid: &Oid, attr: &str, value: &str, via_mu: bool, inst: &Instance) -> bool {
    let target = if via_mu {
        match inst.mu(oid) {
            Some(m) => m,
            None => return false,
        }
    } else {
        oid
    };
    attr_values(target, &[attr.to_string()], inst)
        .iter()
        .any(|v| v.as_const() == Some(value))
}

/// Alternative bindings for the unbound variables of an atom.
type Bindings = Vec<Vec<(String, Oid)>>;

/// Candidate values for the unbound variables of `a` given `env`, or
/// `None` when the atom cannot bind anything yet.
fn extend(a: &Atom, env: &BTreeMap<String, Oid>, db: &mut Db) -> Result<Option<Bindings>, AlgebraError> {
    let inst = db.inst;
    let get = |v: &str| env.get(v).cloned();
    Ok(Some(match a {
        Atom::Class { class, var } => {
            let ext = db.class(class)?;
            match get(var) {
                Some(o) => {
                    if ext.contains(&o) {
                        vec![vec![]]
                    } else {
                        vec![]
                    }
                }
                None => ext.iter().map(|o| vec![(var.clone(), o.clone())]).collect(),
            }
        }
        Atom::Rel { rel, from, to } => {
            let adj = db.rel(rel)?;
            let (fwd, back) = (&adj.0, &adj.1);
            match (get(from), get(to)) {
                (Some(x), Some(y)) => {
                    if fwd.get(&x).is_some_and(|s| s.contains(&y)) {
                        vec![vec![]]
                    } else {
                        vec![]
                    }
                }
                (Some(x), None) => fwd
                    .get(&x)
                    .into_iter()
                    .flatten()
                    .map(|y| vec![(to.clone(), y.clone())])
                    .collect(),
                (None, Some(y)) => back
                    .get(&y)
                    .into_iter()
                    .flatten()
                    .map(|x| vec![(from.clone(), x.clone())])
                    .collect(),
                (None, None) => {
                    let mut out = Vec::new();
                    for (x, ys) in fwd {
                        for y in ys {
                            if from == to && x != y {
                                continue;
                            }
                            let mut b = vec![(from.clone(), x.clone())];
                            if from != to {
                                b.push((to.clone(), y.clone()));
                            }
                            out.push(b);
                        }
                    }
                    out
                }
            }
        }
        Atom::Mu { var, meta } => match (get(var), get(meta)) {
            (Some(x), Some(m)) => {
                if inst.mu(&x) == Some(&m) {
                    vec![vec![]]
                } else {
                    vec![]
                }
            }
            (Some(x), None) => inst
                .mu(&x)
                .map(|m| vec![(meta.clone(), m.clone())])
                .into_iter()
                .collect(),
            (None, Some(m)) => db
                .mu_back
                .get(&m)
                .into_iter()
                .flatten()
                .map(|x| vec![(var.clone(), x.clone())])
                .collect(),
            (None, None) => return Ok(None),
        },
        Atom::AttrEq {
            var,
            attr,
            value,
            via_mu,
        } => match get(var) {
            Some(o) => {
                if attr_holds(&o, attr, value, *via_mu, inst) {
                    vec![vec![]]
                } else {
                    vec![]
                }
            }
            None => return Ok(None),
        },
    }))
}

fn priority(a: &Atom, env: &BTreeMap<String, Oid>) -> u8 {
    let bound = a.vars().iter().filter(|v| env.contains_key(**v)).count();
    let all = a.vars().len();
    match a {
        _ if bound == all => 0,
        Atom::Mu { .. } | Atom::Rel { .. } if bound > 0 => 1,
        Atom::Class { .. } => 2,
        Atom::Rel { .. } => 3,
        _ => 4,
    }
}

fn solve(
    remaining: &mut Vec<&Atom>,
    env: &mut BTreeMap<String, Oid>,
    db: &mut Db,
    on_solution: &mut impl FnMut(&BTreeMap<String, Oid>),
) -> Result<(), AlgebraError> {
    if remaining.is_empty() {
        on_solution(env);
        return Ok(());
    }
    let idx = (0..remaining.len())
        .min_by_key(|&i| priority(remaining[i], env))
        .unwrap();
    let atom = remaining.remove(idx);
    let result = (|| {
        let Some(options) = extend(atom, env, db)? else {
            return Err(AlgebraError::NotConjunctive(format!(
                "atom {atom} has no bound variable"
            )));
        };
        for bindings in options {
            for (k, v) in &bindings {
                env.insert(k.clone(), v.clone());
            }
            solve(remaining, env, db, on_solution)?;
            for (k, _) in &bindings {
                env.remove(k);
            }
        }
        Ok(())
    })();
    remaining.insert(idx, atom);
    result
}

/// Naive evaluation over the instance. `μ` atoms use `μ`, equalities use
/// `ν` (or `ν ∘ μ` for the lowered form).
pub fn eval_conjunctive(cq: &ConjunctiveQuery, s: &Schema, inst: &Instance) -> Result<TupleSet, AlgebraError> {
    let binding: BTreeSet<&str> = cq
        .body
        .iter()
        .filter(|a| !matches!(a, Atom::AttrEq { .. }))
        .flat_map(|a| a.vars())
        .collect();
    for v in cq.head.iter().map(String::as_str).chain(cq.vars()) {
        if !binding.contains(v) {
            return Err(AlgebraError::NotConjunctive(format!("variable {v} is unbound")));
        }
    }
    let row = cq
        .head
        .iter()
        .map(|v| {
            cq.body
                .iter()
                .find_map(|a| match a {
                    Atom::Class { class, var } if var == v => Some(class.clone()),
                    _ => None,
                })
                .unwrap_or_default()
        })
        .collect();
    let mut mu_back: BTreeMap<Oid, BTreeSet<Oid>> = BTreeMap::new();
    for (o, m) in &inst.mu {
        mu_back.entry(m.clone()).or_default().insert(o.clone());
    }
    let mut db = Db {
        s,
        inst,
        classes: HashMap::new(),
        rels: HashMap::new(),
        mu_back,
    };
    let mut out = TupleSet::empty(row);
    let mut remaining: Vec<&Atom> = cq.body.iter().collect();
    solve(&mut remaining, &mut BTreeMap::new(), &mut db, &mut |env| {
        out.tuples.insert(cq.head.iter().map(|v| env[v].clone()).collect());
    })?;
    Ok(out)
}

/// Whether every match of the constraint body in the instance satisfies
/// the head.
pub fn constraint_holds(ic: &ImplicationConstraint, s: &Schema, inst: &Instance) -> Result<bool, AlgebraError> {
    let Atom::AttrEq {
        var,
        attr,
        value,
        via_mu,
    } = &ic.head
    else {
        return Err(AlgebraError::NotConjunctive(format!("constraint head {}", ic.head)));
    };
    let body = ConjunctiveQuery {
        head: vec![var.clone()],
        body: ic.body.clone(),
    };
    Ok(eval_conjunctive(&body, s, inst)?
        .tuples
        .iter()
        .all(|t| attr_holds(&t[0], attr, value, *via_mu, inst)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::tests::{car_instance, car_schema, q1_prime};
    use crate::algebra::{eval_algebra, optimize_with_meta, Cond, OptimizeMode, Scope, VerdictKind};

    pub(crate) fn constraint_a() -> ImplicationConstraint {
        ImplicationConstraint {
            id: "a".into(),
            head: Atom::attr_eq("X", "category", "car_body"),
            body: vec![
                Atom::class("Part'", "X"),
                Atom::rel("prop'", "X", "Y"),
                Atom::class("Property'", "Y"),
                Atom::attr_eq("Y", "name", "color"),
            ],
        }
    }

    pub(crate) fn constraint_b() -> ImplicationConstraint {
        ImplicationConstraint {
            id: "b".into(),
            head: Atom::attr_eq("X", "category", "car"),
            body: vec![
                Atom::class("Part'", "X"),
                Atom::rel("part'", "X", "Y"),
                Atom::class("Part'", "Y"),
                Atom::attr_eq("Y", "category", "car_body"),
            ],
        }
    }

    #[test]
    fn merged_form() {
        let s = car_schema();
        let cq = to_conjunctive(&q1_prime(), &s).unwrap();
        assert_eq!(cq.head, ["X1", "X2", "X3"]);
        assert_eq!(cq.body.len(), 14);
        let expected = [
            "Part(X1)",
            "Part(X2)",
            "part(X1, X2)",
            "Property(X3)",
            "prop(X2, X3)",
            "Part'(X1')",
            "Part'(X2')",
            "part'(X1', X2')",
            "Property'(X3')",
            "prop'(X2', X3')",
            "mu(X1, X1')",
            "mu(X2, X2')",
            "mu(X3, X3')",
            "(X3'.name = \"color\")",
        ];
        let got: Vec<String> = cq.body.iter().map(|a| a.to_string()).collect();
        assert_eq!(got, expected);

        let scan = to_conjunctive(&Query::class("Part"), &s).unwrap();
        assert_eq!(scan.to_string(), "Q(X1) :- Part(X1), Part'(X1'), mu(X1, X1') .");
        let sel = to_conjunctive(
            &Query::select_meta(Cond::eq(1, ["name"], "x"), Query::class("Property")),
            &s,
        )
        .unwrap();
        assert!(sel.body.contains(&Atom::attr_eq("X1'", "name", "x")));
        assert!(to_conjunctive(&Query::union(Query::class("Part"), Query::class("Part")), &s).is_err());
    }

    #[test]
    fn intersection_unifies_columns() {
        let s = car_schema();
        let q = Query::intersect(
            Query::project(
                vec![1],
                Query::join(Query::class("Part"), "part", 1, 1, Query::class("Part")),
            ),
            Query::class("Part"),
        );
        let f = conjunctive_form(&q, &s).unwrap();
        assert_eq!(f.cq.head, ["X1"]);
        assert_eq!(f.leaf_vars, ["X1", "X2", "X1"]);
        let i = car_instance();
        assert_eq!(
            eval_conjunctive(&f.cq, &s, &i).unwrap().tuples,
            eval_algebra(&q, &s, &i).unwrap().tuples
        );
    }

    #[test]
    fn chase_derives_in_order() {
        let s = car_schema();
        let cq = to_conjunctive(&q1_prime(), &s).unwrap();
        let (chased, facts) = chase_apply(&cq, &[constraint_a(), constraint_b()]);
        let got: Vec<(String, String, String, String)> = facts
            .iter()
            .map(|f| (f.var.clone(), f.attr.clone(), f.value.clone(), f.constraint.clone()))
            .collect();
        assert_eq!(
            got,
            [
                ("X2'".into(), "category".into(), "car_body".into(), "a".into()),
                ("X1'".into(), "category".into(), "car".into(), "b".into()),
            ]
        );
        assert_eq!(facts[0].to_string(), "X2'.category = \"car_body\" by a");
        assert!(is_unsatisfiable(&chased).is_none());
        let (reversed, facts_rev) = chase_apply(&cq, &[constraint_b(), constraint_a()]);
        assert_eq!(
            reversed.body.iter().collect::<BTreeSet<_>>(),
            chased.body.iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(facts_rev.len(), 2);
        assert_eq!(chase_apply(&cq, &[]).0, cq);
    }

    #[test]
    fn unsatisfiability() {
        let cq = ConjunctiveQuery {
            head: vec!["X".into()],
            body: vec![
                Atom::class("P", "X"),
                Atom::attr_eq("X", "a", "p"),
                Atom::attr_eq("X", "a", "q"),
            ],
        };
        assert!(is_unsatisfiable(&cq).is_some());
        assert!(is_unsatisfiable(&ConjunctiveQuery {
            head: vec![],
            body: vec![]
        })
        .is_none());
    }

    #[test]
    fn redundancy_elimination() {
        let (s, i) = (car_schema(), car_instance());
        let cq = to_conjunctive(&q1_prime(), &s).unwrap();
        let (chased, _) = chase_apply(&cq, &[constraint_a(), constraint_b()]);
        let reduced = eliminate_redundancy(&chased, &s);
        assert!(!reduced
            .body
            .iter()
            .any(|a| matches!(a, Atom::Rel { rel, .. } if rel.ends_with('\''))));
        for v in ["X1'", "X2'", "X3'"] {
            assert!(reduced
                .body
                .iter()
                .any(|a| matches!(a, Atom::Class { var, .. } if var == v)));
        }
        let before = eval_conjunctive(&cq, &s, &i).unwrap();
        assert_eq!(eval_conjunctive(&reduced, &s, &i).unwrap(), before);
        assert_eq!(before.tuples, eval_algebra(&q1_prime(), &s, &i).unwrap().tuples);

        let scan = to_conjunctive(&Query::class("Part"), &s).unwrap();
        assert_eq!(eliminate_redundancy(&scan, &s).body, [Atom::class("Part", "X1")]);

        let no_inst_rel = ConjunctiveQuery {
            head: vec!["X".into()],
            body: vec![
                Atom::class("Part", "X"),
                Atom::class("Part", "Y"),
                Atom::mu("X", "X'"),
                Atom::mu("Y", "Y'"),
                Atom::rel("part'", "X'", "Y'"),
            ],
        };
        assert!(eliminate_redundancy(&no_inst_rel, &s)
            .body
            .contains(&Atom::rel("part'", "X'", "Y'")));
    }

    #[test]
    fn lowering() {
        let s = car_schema();
        let lowered = lower_constraint(&constraint_a(), &s).unwrap();
        assert_eq!(
            lowered.to_string(),
            "a: (mu(X).category = \"car_body\") :- Part(X), prop(X, Y), Property(Y), (mu(Y).name = \"color\") ."
        );
        assert!(lower_constraint(&lowered, &s).is_err());
        let i = car_instance();
        for ic in [constraint_a(), constraint_b()] {
            assert!(constraint_holds(&ic, &s, &i).unwrap());
            assert!(constraint_holds(&lower_constraint(&ic, &s).unwrap(), &s, &i).unwrap());
        }
    }

    #[test]
    fn conjunctive_evaluation_edge_cases() {
        let (s, i) = (car_schema(), car_instance());
        let unbound = ConjunctiveQuery {
            head: vec!["X".into()],
            body: vec![],
        };
        assert!(eval_conjunctive(&unbound, &s, &i).is_err());
        let single = ConjunctiveQuery {
            head: vec!["X".into()],
            body: vec![Atom::class("Property", "X")],
        };
        assert_eq!(eval_conjunctive(&single, &s, &i).unwrap().len(), 2);
    }

    #[test]
    fn constraint_mode_optimization() {
        let (s, i) = (car_schema(), car_instance());
        let ics = [constraint_a(), constraint_b()];
        let once = optimize_with_meta(&q1_prime(), &s, &i, "fig3", OptimizeMode::Constraint, &ics).unwrap();
        assert_eq!(once.verdicts.len(), 1);
        assert_eq!(once.verdicts[0].scope, Scope::AllInstances);
        assert!(matches!(&once.verdicts[0].kind, VerdictKind::RestrictionIntroduced(r) if r.len() == 2));
        let expected = Query::join(
            Query::join(
                Query::select_meta(Cond::eq(1, ["category"], "car"), Query::class("Part")),
                "part",
                1,
                1,
                Query::select_meta(Cond::eq(1, ["category"], "car_body"), Query::class("Part")),
            ),
            "prop",
            2,
            1,
            Query::select_meta(Cond::eq(1, ["name"], "color"), Query::class("Property")),
        );
        assert_eq!(once.query, expected);
        assert_eq!(
            eval_algebra(&once.query, &s, &i).unwrap(),
            eval_algebra(&q1_prime(), &s, &i).unwrap()
        );
        let twice = optimize_with_meta(&once.query, &s, &i, "fig3", OptimizeMode::Constraint, &ics).unwrap();
        assert_eq!(twice.query, once.query);
        assert_eq!(twice.verdicts[0].kind, VerdictKind::Unchanged);
    }
}
