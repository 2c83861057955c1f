//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use metalevel::algebra::{Cond, Query};
use metalevel::chase::{Atom, ImplicationConstraint};
use metalevel::graphdb::{check_description_binding, DescriptionBinding, GraphDatabase, NodeId, NodeLabel};
use metalevel::model::{
    validate_all, ClassHierarchy, Instance, OValue, Oid, PathExpr, RelationDecl, Relationship, Schema, TypeExpr,
};
use metalevel::pathquery::{Condition, PathQuery};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const VALUES: [&str; 2] = ["x", "y"];

fn value(r: &mut ChaCha8Rng) -> String {
    VALUES.choose(r).unwrap().to_string()
}

// ---------------------------------------------------------------------------
// Layered schemas and instances.

/// A binary relationship `name ⊆ from × to` of a generated schema.
#[derive(Debug, Clone)]
pub struct Rel {
    pub name: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone)]
pub struct Layered {
    pub schema: Schema,
    pub inst: Instance,
    pub classes: Vec<String>,
    pub rels: Vec<Rel>,
}

/// Classes `C0..`, each described by `Ci'` (attributes `a`, `b`), with
/// relation-backed relationships `Rn`/`Rn'` and, unless `relations_only`,
/// a path relationship `nx`/`nx'` out of `C0`. At most 24 oids.
pub fn layered(r: &mut ChaCha8Rng, relations_only: bool) -> Layered {
    let k = r.gen_range(1..=3);
    let classes: Vec<String> = (0..k).map(|i| format!("C{i}")).collect();
    let nx_target = (!relations_only && r.gen_bool(0.7)).then(|| r.gen_range(0..k));

    let mut h = ClassHierarchy::new();
    let mut s = Schema::default();
    for (i, c) in classes.iter().enumerate() {
        let mut inst_fields = vec![("v".to_string(), TypeExpr::D)];
        let mut meta_fields = vec![("a".to_string(), TypeExpr::D), ("b".to_string(), TypeExpr::D)];
        if i == 0 {
            if let Some(t) = nx_target {
                inst_fields.push(("nx".into(), TypeExpr::set_of(TypeExpr::class(format!("C{t}")))));
                meta_fields.push(("nx'".into(), TypeExpr::set_of(TypeExpr::class(format!("C{t}'")))));
            }
        }
        h.add_class(c.clone(), TypeExpr::tuple(inst_fields));
        h.add_class(format!("{c}'"), TypeExpr::tuple(meta_fields));
        s.description.desc.insert((format!("{c}'"), c.clone()));
    }
    s.hierarchy = h;

    let mut rels = Vec::new();
    for n in 0..r.gen_range(1..=3) {
        let from = classes.choose(r).unwrap().clone();
        let to = classes.choose(r).unwrap().clone();
        let (name, table) = (format!("R{n}"), format!("T{n}"));
        s.relations.insert(
            table.clone(),
            RelationDecl::new([("from", TypeExpr::class(&from)), ("to", TypeExpr::class(&to))]),
        );
        s.relations.insert(
            format!("{table}'"),
            RelationDecl::new([
                ("from", TypeExpr::class(format!("{from}'"))),
                ("to", TypeExpr::class(format!("{to}'"))),
            ]),
        );
        s.relationships
            .insert(name.clone(), Relationship::Relation(table.clone()));
        s.relationships
            .insert(format!("{name}'"), Relationship::Relation(format!("{table}'")));
        s.description.hom.insert((format!("{name}'"), name.clone()));
        rels.push(Rel { name, from, to });
    }
    if let Some(t) = nx_target {
        s.relationships
            .insert("nx".into(), Relationship::Path(PathExpr::new("C0", ["nx"])));
        s.relationships
            .insert("nx'".into(), Relationship::Path(PathExpr::new("C0'", ["nx'"])));
        s.description.hom.insert(("nx'".into(), "nx".into()));
        rels.push(Rel {
            name: "nx".into(),
            from: "C0".into(),
            to: format!("C{t}"),
        });
    }

    let mut inst = Instance::default();
    let metas: Vec<Vec<Oid>> = (0..k)
        .map(|i| (0..r.gen_range(1..=3)).map(|j| Oid::new(format!("m{i}_{j}"))).collect())
        .collect();
    let objects: Vec<Vec<(Oid, Oid)>> = (0..k)
        .map(|i| {
            (0..r.gen_range(0..=5))
                .map(|j| (Oid::new(format!("o{i}_{j}")), metas[i].choose(r).unwrap().clone()))
                .collect()
        })
        .collect();
    let subset = |r: &mut ChaCha8Rng, items: &[Oid], p: f64| -> Vec<OValue> {
        items
            .iter()
            .filter(|_| r.gen_bool(p))
            .map(|o| OValue::Oid(o.clone()))
            .collect()
    };
    let mut meta_nx: Vec<BTreeSet<Oid>> = Vec::new();
    for i in 0..k {
        for m in &metas[i] {
            let mut fields = vec![
                ("a".to_string(), OValue::constant(value(r))),
                ("b".to_string(), OValue::constant(value(r))),
            ];
            if i == 0 {
                if let Some(t) = nx_target {
                    let targets = subset(r, &metas[t], 0.5);
                    meta_nx.push(targets.iter().filter_map(|v| v.as_oid().cloned()).collect());
                    fields.push(("nx'".into(), OValue::set(targets)));
                }
            }
            inst.add_object(m.clone(), &format!("C{i}'"), OValue::tuple(fields));
        }
    }
    for i in 0..k {
        for (o, m) in &objects[i] {
            let mut fields = vec![("v".to_string(), OValue::constant(value(r)))];
            if i == 0 {
                if let Some(t) = nx_target {
                    let allowed = &meta_nx[metas[0].iter().position(|x| x == m).unwrap()];
                    let candidates: Vec<Oid> = objects[t]
                        .iter()
                        .filter(|(_, mt)| allowed.contains(mt))
                        .map(|(p, _)| p.clone())
                        .collect();
                    fields.push(("nx".into(), OValue::set(subset(r, &candidates, 0.6))));
                }
            }
            inst.add_object(o.clone(), &format!("C{i}"), OValue::tuple(fields));
            inst.mu.insert(o.clone(), m.clone());
        }
    }
    let index = |c: &str| classes.iter().position(|x| x == c).unwrap();
    for (n, rel) in rels.iter().enumerate().filter(|(_, rel)| rel.name != "nx") {
        let (fi, ti) = (index(&rel.from), index(&rel.to));
        let mut meta_pairs = BTreeSet::new();
        for a in &metas[fi] {
            for b in &metas[ti] {
                if r.gen_bool(0.5) {
                    meta_pairs.insert((a.clone(), b.clone()));
                }
            }
        }
        let tuple =
            |a: &Oid, b: &Oid| OValue::tuple([("from", OValue::Oid(a.clone())), ("to", OValue::Oid(b.clone()))]);
        let meta_table = inst.relations.entry(format!("T{n}'")).or_default();
        for (a, b) in &meta_pairs {
            meta_table.insert(tuple(a, b));
        }
        let mut table = BTreeSet::new();
        for (a, ma) in &objects[fi] {
            for (b, mb) in &objects[ti] {
                if meta_pairs.contains(&(ma.clone(), mb.clone())) && r.gen_bool(0.6) {
                    table.insert(tuple(a, b));
                }
            }
        }
        inst.relations.insert(format!("T{n}"), table);
    }
    let violations = validate_all(&s, &inst);
    assert!(
        violations.is_empty(),
        "generator produced an invalid instance: {violations:?}"
    );
    Layered {
        schema: s,
        inst,
        classes,
        rels,
    }
}

/// A `σ′` condition on column `col`: a single equality when `conjunctive`,
/// otherwise a small boolean combination.
pub fn meta_cond(r: &mut ChaCha8Rng, col: usize, conjunctive: bool, depth: usize) -> Cond {
    let attr = if r.gen_bool(0.5) { "a" } else { "b" };
    let leaf = Cond::eq(col, [attr], value(r));
    if depth == 0 || r.gen_bool(0.5) {
        return leaf;
    }
    let other = meta_cond(r, col, conjunctive, depth - 1);
    if conjunctive {
        return Cond::and(leaf, other);
    }
    match r.gen_range(0..3) {
        0 => Cond::and(leaf, other),
        1 => Cond::or(leaf, other),
        _ => Cond::not(other),
    }
}

/// A random described query of depth at most `depth` together with its row
/// type. Conjunctive queries use only joins, `σ′` with equalities,
/// projection and intersection.
pub fn random_dq(r: &mut ChaCha8Rng, l: &Layered, depth: usize, conjunctive: bool) -> (Query, Vec<String>) {
    if depth == 0 || r.gen_bool(0.25) {
        let c = l.classes.choose(r).unwrap().clone();
        return (Query::class(&c), vec![c]);
    }
    let op = r.gen_range(0..6);
    let (q, row) = random_dq(r, l, depth - 1, conjunctive);
    match op {
        0 => {
            let (q2, row2) = random_dq(r, l, depth - 1, conjunctive);
            let mut options = Vec::new();
            for rel in &l.rels {
                for (i, a) in row.iter().enumerate() {
                    for (j, b) in row2.iter().enumerate() {
                        if *a == rel.from && *b == rel.to {
                            options.push((rel.name.clone(), i + 1, j + 1));
                        }
                    }
                }
            }
            match options.choose(r) {
                Some((rel, i, j)) if row.len() + row2.len() <= 4 => {
                    let joined: Vec<String> = row.iter().chain(&row2).cloned().collect();
                    (Query::join(q, rel.clone(), *i, *j, q2), joined)
                }
                _ => (q, row),
            }
        }
        1 => {
            let mut options = Vec::new();
            for rel in &l.rels {
                for (i, a) in row.iter().enumerate() {
                    for (j, b) in row.iter().enumerate() {
                        if *a == rel.from && *b == rel.to {
                            options.push((rel.name.clone(), i + 1, j + 1));
                        }
                    }
                }
            }
            match options.choose(r) {
                Some((rel, i, j)) => (Query::self_join(rel.clone(), *i, *j, q), row),
                None => (q, row),
            }
        }
        2 => {
            let col = r.gen_range(1..=row.len());
            (Query::select_meta(meta_cond(r, col, conjunctive, 2), q), row)
        }
        3 => {
            let mut cols: Vec<usize> = (1..=row.len()).filter(|_| r.gen_bool(0.6)).collect();
            if cols.is_empty() {
                cols.push(r.gen_range(1..=row.len()));
            }
            let projected = cols.iter().map(|c| row[c - 1].clone()).collect();
            (Query::project(cols, q), projected)
        }
        _ => {
            let mut other = None;
            for _ in 0..8 {
                let (q2, row2) = random_dq(r, l, depth - 1, conjunctive);
                if row2 == row {
                    other = Some(q2);
                    break;
                }
            }
            let q2 = other.unwrap_or_else(|| {
                let col = r.gen_range(1..=row.len());
                Query::select_meta(meta_cond(r, col, conjunctive, 1), q.clone())
            });
            if op == 4 || conjunctive {
                (Query::intersect(q, q2), row)
            } else {
                (Query::union(q, q2), row)
            }
        }
    }
}

/// A meta-level constraint over `l`: a class atom for `X`, optionally one
/// relationship atom linking `X` with a classified `Y`, an optional
/// attribute equality in the body and an attribute equality head.
pub fn random_constraint(r: &mut ChaCha8Rng, l: &Layered, id: &str) -> ImplicationConstraint {
    let meta = |c: &str| format!("{c}'");
    let x_class = l.classes.choose(r).unwrap().clone();
    let mut body = vec![Atom::class(meta(&x_class), "X")];
    let mut vars = vec!["X"];
    let linked: Vec<&Rel> = l
        .rels
        .iter()
        .filter(|rel| rel.from == x_class || rel.to == x_class)
        .collect();
    if let Some(rel) = linked.choose(r).filter(|_| r.gen_bool(0.7)) {
        if rel.from == x_class && (rel.to != x_class || r.gen_bool(0.5)) {
            body.push(Atom::rel(meta(&rel.name), "X", "Y"));
            body.push(Atom::class(meta(&rel.to), "Y"));
        } else {
            body.push(Atom::rel(meta(&rel.name), "Y", "X"));
            body.push(Atom::class(meta(&rel.from), "Y"));
        }
        vars.push("Y");
    }
    let attr = |r: &mut ChaCha8Rng| if r.gen_bool(0.5) { "a" } else { "b" };
    if r.gen_bool(0.7) {
        let v = *vars.choose(r).unwrap();
        body.push(Atom::attr_eq(v, attr(r), value(r)));
    }
    let v = *vars.choose(r).unwrap();
    ImplicationConstraint {
        id: id.into(),
        head: Atom::attr_eq(v, attr(r), value(r)),
        body,
    }
}

// ---------------------------------------------------------------------------
// Graphs, bindings and path queries.

pub const TAGS: [&str; 3] = ["a", "b", "c"];

fn random_label(r: &mut ChaCha8Rng, with_attrs: bool) -> NodeLabel {
    let mut l = NodeLabel::new(*TAGS.choose(r).unwrap());
    if with_attrs {
        if r.gen_bool(0.5) {
            l = l.with_attr("name", value(r));
        }
        if r.gen_bool(0.3) {
            l = l.with_attr("k", value(r));
        }
    }
    l
}

/// A rooted graph with `n ≤ max_nodes` nodes `m0..`, every node reachable
/// from `m0`.
pub fn random_graph(r: &mut ChaCha8Rng, max_nodes: usize, acyclic: bool, with_attrs: bool) -> GraphDatabase {
    let n = r.gen_range(1..=max_nodes);
    let id = |i: usize| format!("m{i}");
    let mut g = GraphDatabase::new(id(0), random_label(r, with_attrs));
    for i in 1..n {
        g.add_node(id(i), random_label(r, with_attrs));
        let p = r.gen_range(0..i);
        g.add_edge(id(p), id(i));
    }
    for _ in 0..r.gen_range(0..=n) {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        if !acyclic || a < b {
            g.add_edge(id(a), id(b));
        }
    }
    g
}

/// An instance graph (≤ `max_nodes` nodes `i0..`) with a strict binding
/// into `m`. Instance nodes copy some of their meta node's attributes and
/// may carry attributes the meta node leaves unassigned.
pub fn bound_instance(r: &mut ChaCha8Rng, m: &GraphDatabase, max_nodes: usize) -> (GraphDatabase, DescriptionBinding) {
    let copy_label = |r: &mut ChaCha8Rng, meta: &NodeLabel| {
        let mut l = NodeLabel::new(meta.tag.clone());
        for (a, v) in &meta.attrs {
            if r.gen_bool(0.8) {
                l = l.with_attr(a.clone(), v.clone());
            }
        }
        for a in ["name", "k"] {
            if meta.attr(a).is_none() && r.gen_bool(0.3) {
                l = l.with_attr(a, value(r));
            }
        }
        l
    };
    let mut mu = DescriptionBinding::new();
    let root_label = copy_label(r, m.label(m.root()).unwrap());
    let mut g = GraphDatabase::new("i0", root_label);
    mu.insert("i0", m.root().clone());
    let mut nodes: Vec<(NodeId, NodeId)> = vec![(NodeId::from("i0"), m.root().clone())];
    let target = r.gen_range(1..=max_nodes);
    for _ in 0..max_nodes * 3 {
        let (u, mu_u) = nodes.choose(r).unwrap().clone();
        let succ: Vec<NodeId> = m.successors(&mu_u).cloned().collect();
        let Some(mv) = succ.choose(r).cloned() else { continue };
        let existing: Vec<NodeId> = nodes.iter().filter(|(_, x)| *x == mv).map(|(n, _)| n.clone()).collect();
        if nodes.len() < target && (existing.is_empty() || r.gen_bool(0.7)) {
            let v = NodeId::from(format!("i{}", nodes.len()));
            g.add_node(v.clone(), copy_label(r, m.label(&mv).unwrap()));
            g.add_edge(u, v.clone());
            mu.insert(v.clone(), mv.clone());
            nodes.push((v, mv));
        } else if let Some(v) = existing.choose(r) {
            g.add_edge(u, v.clone());
        }
    }
    let violations = check_description_binding(&g, m, &mu, true);
    assert!(
        violations.is_empty(),
        "generator produced an invalid binding: {violations:?}"
    );
    (g, mu)
}

/// A random path query of depth at most `depth` whose conditions nest at
/// most `nesting` levels deep.
pub fn random_query(r: &mut ChaCha8Rng, depth: usize, nesting: usize, conditions: bool) -> PathQuery {
    if depth == 0 || r.gen_bool(0.2) {
        return PathQuery::tag(*TAGS.choose(r).unwrap());
    }
    let choices = if conditions { 5 } else { 4 };
    match r.gen_range(0..choices) {
        0 | 1 => PathQuery::concat(
            random_query(r, depth - 1, nesting, conditions),
            random_query(r, depth - 1, nesting, conditions),
        ),
        2 => PathQuery::alt(
            random_query(r, depth - 1, nesting, conditions),
            random_query(r, depth - 1, nesting, conditions),
        ),
        3 => PathQuery::star(random_query(r, depth - 1, nesting, conditions)),
        _ => {
            let mut conds = Vec::new();
            for _ in 0..r.gen_range(1..=2) {
                if nesting > 0 && r.gen_bool(0.5) {
                    conds.push(Condition::Query(random_query(r, depth.min(3) - 1, nesting - 1, true)));
                } else {
                    let attr = if r.gen_bool(0.7) { "name" } else { "k" };
                    conds.push(Condition::AttrEq(attr.into(), value(r)));
                }
            }
            PathQuery::cond(random_query(r, depth - 1, nesting, conditions), conds)
        }
    }
}

/// Nesting depth of conditions.
pub fn nesting(q: &PathQuery) -> usize {
    match q {
        PathQuery::Concat(a, b) | PathQuery::Alt(a, b) => nesting(a).max(nesting(b)),
        PathQuery::Star(a) => nesting(a),
        PathQuery::Cond(a, cs) => {
            let inner = cs
                .iter()
                .map(|c| match c {
                    Condition::Query(q) => 1 + nesting(q),
                    Condition::AttrEq(..) => 0,
                })
                .max()
                .unwrap_or(0);
            nesting(a).max(inner)
        }
        _ => 0,
    }
}

/// All words over `alphabet` of length at most `max_len`.
pub fn words(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut layer: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|w| {
                alphabet.iter().map(move |a| {
                    let mut w = w.clone();
                    w.push(a.to_string());
                    w
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}
