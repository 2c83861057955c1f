//! Condition-labeled automata and pruning of path queries against a
//! meta-level graph.
//!
//! Symbols are pairs `⟨t, C⟩` of a tag (or `ε`) and a set of conditions.
//! An `ε` symbol is a real alphabet symbol that tests conditions at the
//! current node; construction never introduces silent transitions.
//!
//! [`prune`] runs query → regex → NFA, takes the condition-aware product
//! with the meta graph's automaton (recursively pruning nested conditions),
//! trims it, and converts it back into a query by state elimination.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::graphdb::{GraphDatabase, NodeId};
use crate::pathquery::{eval_path_query, Condition, PathQuery};
use crate::quoted;

/// `⟨t, C⟩`; `tag == None` stands for `ε`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CondLabel {
    pub tag: Option<String>,
    pub conds: BTreeSet<Condition>,
}

impl CondLabel {
    pub fn tag(t: impl Into<String>) -> Self {
        CondLabel {
            tag: Some(t.into()),
            conds: BTreeSet::new(),
        }
    }

    pub fn epsilon(conds: impl IntoIterator<Item = Condition>) -> Self {
        CondLabel {
            tag: None,
            conds: conds.into_iter().collect(),
        }
    }

    pub fn is_epsilon(&self) -> bool {
        self.tag.is_none()
    }

    fn conds_text(&self) -> String {
        self.conds.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
    }

    /// Compact form used in DOT output: `t` or `ε[c1, c2]`.
    pub fn short(&self) -> String {
        match &self.tag {
            Some(t) if self.conds.is_empty() => t.clone(),
            Some(t) => format!("{t}[{}]", self.conds_text()),
            None => format!("ε[{}]", self.conds_text()),
        }
    }
}

impl fmt::Display for CondLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tag.as_deref().unwrap_or("ε");
        if self.conds.is_empty() {
            write!(f, "⟨{t}, ∅⟩")
        } else {
            write!(f, "⟨{t}, {{{}}}⟩", self.conds_text())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub from: usize,
    pub label: CondLabel,
    pub to: usize,
}

/// A nondeterministic automaton over condition labels. States are indices
/// into `states`, which holds their display names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CondNfa {
    pub states: Vec<String>,
    pub start: usize,
    pub finals: BTreeSet<usize>,
    pub transitions: BTreeSet<Transition>,
}

impl CondNfa {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn outgoing(&self, q: usize) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.from == q)
    }

    /// The same automaton with another start state.
    pub fn with_start(&self, start: usize) -> CondNfa {
        CondNfa { start, ..self.clone() }
    }

    /// Transitions as `(from name, label, to name)` triples.
    pub fn named_transitions(&self) -> BTreeSet<(String, CondLabel, String)> {
        self.transitions
            .iter()
            .map(|t| (self.states[t.from].clone(), t.label.clone(), self.states[t.to].clone()))
            .collect()
    }

    fn adjacency(&self) -> Vec<Vec<&Transition>> {
        let mut adj = vec![Vec::new(); self.states.len()];
        for t in &self.transitions {
            adj[t.from].push(t);
        }
        adj
    }

    /// DOT rendering with labels in short form.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph nfa {\n  rankdir=LR;\n  __start [shape=point];\n");
        for (i, name) in self.states.iter().enumerate() {
            let shape = if self.finals.contains(&i) {
                "doublecircle"
            } else {
                "circle"
            };
            out.push_str(&format!("  s{i} [label={}, shape={shape}];\n", quoted(name)));
        }
        out.push_str(&format!("  __start -> s{};\n", self.start));
        for t in &self.transitions {
            out.push_str(&format!(
                "  s{} -> s{} [label={}];\n",
                t.from,
                t.to,
                quoted(&t.label.short())
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// `FSA(G)`: one state per node, every state final, edge transitions
/// labeled with the target's tag and one `ε` self-loop per node carrying
/// its attribute assignments.
pub fn graph_to_fsa(g: &GraphDatabase) -> CondNfa {
    let ids: Vec<&NodeId> = g.node_ids().collect();
    let index: BTreeMap<&NodeId, usize> = ids.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut transitions = BTreeSet::new();
    for (a, b) in g.edges() {
        if let (Some(&i), Some(&j), Some(t)) = (index.get(a), index.get(b), g.tag(b)) {
            transitions.insert(Transition {
                from: i,
                label: CondLabel::tag(t),
                to: j,
            });
        }
    }
    for (n, label) in g.nodes() {
        let i = index[n];
        transitions.insert(Transition {
            from: i,
            label: CondLabel::epsilon(label.attrs.iter().map(|(a, v)| Condition::AttrEq(a.clone(), v.clone()))),
            to: i,
        });
    }
    CondNfa {
        states: ids.iter().map(|n| n.to_string()).collect(),
        start: index[g.root()],
        finals: (0..ids.len()).collect(),
        transitions,
    }
}

/// Regular expressions over condition labels. `Seq` and `Alt` are n-ary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegexExpr {
    Symbol(CondLabel),
    Seq(Vec<RegexExpr>),
    Alt(Vec<RegexExpr>),
    Star(Box<RegexExpr>),
    EmptySet,
    EmptyWord,
}

impl RegexExpr {
    /// Concatenation with `∅` and empty-word simplification.
    pub fn seq(items: impl IntoIterator<Item = RegexExpr>) -> RegexExpr {
        let mut out = Vec::new();
        for item in items {
            match item {
                RegexExpr::EmptySet => return RegexExpr::EmptySet,
                RegexExpr::EmptyWord => {}
                RegexExpr::Seq(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => RegexExpr::EmptyWord,
            1 => out.pop().unwrap(),
            _ => RegexExpr::Seq(out),
        }
    }

    /// Alternation with `∅` removal, flattening and duplicate removal.
    pub fn alt(items: impl IntoIterator<Item = RegexExpr>) -> RegexExpr {
        let mut out: Vec<RegexExpr> = Vec::new();
        for item in items {
            let parts = match item {
                RegexExpr::EmptySet => continue,
                RegexExpr::Alt(inner) => inner,
                other => vec![other],
            };
            for p in parts {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        // ε | x* is x*
        if out.contains(&RegexExpr::EmptyWord) && out.iter().any(|r| matches!(r, RegexExpr::Star(_))) {
            out.retain(|r| *r != RegexExpr::EmptyWord);
        }
        match out.len() {
            0 => RegexExpr::EmptySet,
            1 => out.pop().unwrap(),
            _ => RegexExpr::Alt(out),
        }
    }

    pub fn star(inner: RegexExpr) -> RegexExpr {
        match inner {
            RegexExpr::EmptySet | RegexExpr::EmptyWord => RegexExpr::EmptyWord,
            RegexExpr::Star(x) => RegexExpr::Star(x),
            other => RegexExpr::Star(Box::new(other)),
        }
    }

    pub fn contains_star(&self) -> bool {
        match self {
            RegexExpr::Star(_) => true,
            RegexExpr::Seq(xs) | RegexExpr::Alt(xs) => xs.iter().any(RegexExpr::contains_star),
            _ => false,
        }
    }

    fn symbols<'a>(&'a self, out: &mut BTreeSet<&'a CondLabel>) {
        match self {
            RegexExpr::Symbol(l) => {
                out.insert(l);
            }
            RegexExpr::Seq(xs) | RegexExpr::Alt(xs) => xs.iter().for_each(|x| x.symbols(out)),
            RegexExpr::Star(x) => x.symbols(out),
            RegexExpr::EmptySet | RegexExpr::EmptyWord => {}
        }
    }
}

impl fmt::Display for RegexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegexExpr::Symbol(l) => write!(f, "{l}"),
            RegexExpr::Seq(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" · ")?;
                    }
                    match x {
                        RegexExpr::Alt(_) => write!(f, "({x})")?,
                        _ => write!(f, "{x}")?,
                    }
                }
                Ok(())
            }
            RegexExpr::Alt(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            RegexExpr::Star(x) => match x.as_ref() {
                RegexExpr::Symbol(_) => write!(f, "{x}*"),
                _ => write!(f, "({x})*"),
            },
            RegexExpr::EmptySet => f.write_str("∅"),
            RegexExpr::EmptyWord => f.write_str("()"),
        }
    }
}

/// Structural translation; nested queries inside condition sets are kept
/// as they are.
pub fn query_to_regex(q: &PathQuery) -> RegexExpr {
    match q {
        PathQuery::Tag(t) => RegexExpr::Symbol(CondLabel::tag(t.clone())),
        PathQuery::Concat(a, b) => RegexExpr::seq([query_to_regex(a), query_to_regex(b)]),
        PathQuery::Alt(a, b) => RegexExpr::alt([query_to_regex(a), query_to_regex(b)]),
        PathQuery::Star(a) => RegexExpr::star(query_to_regex(a)),
        PathQuery::Cond(a, cs) => RegexExpr::seq([
            query_to_regex(a),
            RegexExpr::Symbol(CondLabel::epsilon(cs.iter().cloned())),
        ]),
        PathQuery::Epsilon => RegexExpr::EmptyWord,
        PathQuery::Empty => RegexExpr::EmptySet,
    }
}

struct Positions {
    labels: Vec<CondLabel>,
    follow: Vec<BTreeSet<usize>>,
}

struct Linear {
    nullable: bool,
    first: BTreeSet<usize>,
    last: BTreeSet<usize>,
}

fn linearize(re: &RegexExpr, pos: &mut Positions) -> Option<Linear> {
    match re {
        RegexExpr::EmptySet => None,
        RegexExpr::EmptyWord => Some(Linear {
            nullable: true,
            first: BTreeSet::new(),
            last: BTreeSet::new(),
        }),
        RegexExpr::Symbol(l) => {
            let p = pos.labels.len();
            pos.labels.push(l.clone());
            pos.follow.push(BTreeSet::new());
            Some(Linear {
                nullable: false,
                first: BTreeSet::from([p]),
                last: BTreeSet::from([p]),
            })
        }
        RegexExpr::Seq(xs) => {
            let mut acc = Linear {
                nullable: true,
                first: BTreeSet::new(),
                last: BTreeSet::new(),
            };
            let mut empty = false;
            for x in xs {
                let Some(lx) = linearize(x, pos) else {
                    empty = true;
                    continue;
                };
                for &p in &acc.last {
                    pos.follow[p].extend(lx.first.iter().copied());
                }
                if acc.nullable {
                    acc.first.extend(lx.first.iter().copied());
                }
                acc.last = if lx.nullable {
                    acc.last.union(&lx.last).copied().collect()
                } else {
                    lx.last
                };
                acc.nullable &= lx.nullable;
            }
            (!empty).then_some(acc)
        }
        RegexExpr::Alt(xs) => {
            let mut acc: Option<Linear> = None;
            for x in xs {
                if let Some(lx) = linearize(x, pos) {
                    acc = Some(match acc {
                        None => lx,
                        Some(mut a) => {
                            a.nullable |= lx.nullable;
                            a.first.extend(lx.first);
                            a.last.extend(lx.last);
                            a
                        }
                    });
                }
            }
            acc
        }
        RegexExpr::Star(x) => {
            let lx = linearize(x, pos).unwrap_or(Linear {
                nullable: true,
                first: BTreeSet::new(),
                last: BTreeSet::new(),
            });
            for &p in &lx.last {
                pos.follow[p].extend(lx.first.iter().copied());
            }
            Some(Linear {
                nullable: true,
                first: lx.first,
                last: lx.last,
            })
        }
    }
}

/// Position (Glushkov) automaton, quotiented by merging states with equal
/// outgoing transitions and finality. The result has no silent
/// transitions; `ε` condition symbols are ordinary symbols.
///
/// States are named `q1, q2, …` in order of their first position, with the
/// start state first.
pub fn regex_to_nfa(re: &RegexExpr) -> CondNfa {
    let mut pos = Positions {
        labels: Vec::new(),
        follow: Vec::new(),
    };
    let lin = linearize(re, &mut pos);
    // Glushkov state 0 is initial, state p+1 is position p.
    let n = pos.labels.len() + 1;
    let mut out: Vec<BTreeSet<(CondLabel, usize)>> = vec![BTreeSet::new(); n];
    let mut finals = vec![false; n];
    if let Some(lin) = &lin {
        for &p in &lin.first {
            out[0].insert((pos.labels[p].clone(), p + 1));
        }
        for (p, fs) in pos.follow.iter().enumerate() {
            for &q in fs {
                out[p + 1].insert((pos.labels[q].clone(), q + 1));
            }
        }
        finals[0] = lin.nullable;
        for &p in &lin.last {
            finals[p + 1] = true;
        }
    }

    // Reachable states only.
    let mut reachable = vec![false; n];
    reachable[0] = true;
    let mut queue = VecDeque::from([0]);
    while let Some(s) = queue.pop_front() {
        for (_, t) in &out[s] {
            if !reachable[*t] {
                reachable[*t] = true;
                queue.push_back(*t);
            }
        }
    }

    // Merge states with identical signatures until stable.
    let mut class: Vec<usize> = (0..n).collect();
    loop {
        let mut groups: BTreeMap<(bool, BTreeSet<(CondLabel, usize)>), usize> = BTreeMap::new();
        let mut next = class.clone();
        for s in (0..n).filter(|&s| reachable[s]) {
            let sig = (finals[s], out[s].iter().map(|(l, t)| (l.clone(), class[*t])).collect());
            next[s] = *groups.entry(sig).or_insert(s);
        }
        if next == class {
            break;
        }
        class = next;
    }

    let mut reps: Vec<usize> = (0..n).filter(|&s| reachable[s] && class[s] == s).collect();
    reps.sort_by_key(|&r| (0..n).find(|&s| reachable[s] && class[s] == r).unwrap());
    let index: BTreeMap<usize, usize> = reps.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let mut transitions = BTreeSet::new();
    for s in (0..n).filter(|&s| reachable[s]) {
        for (l, t) in &out[s] {
            transitions.insert(Transition {
                from: index[&class[s]],
                label: l.clone(),
                to: index[&class[*t]],
            });
        }
    }
    CondNfa {
        states: (1..=reps.len()).map(|i| format!("q{i}")).collect(),
        start: index[&class[0]],
        finals: reps
            .iter()
            .enumerate()
            .filter(|(_, r)| finals[**r])
            .map(|(i, _)| i)
            .collect(),
        transitions,
    }
}

/// `FSA(Q)`.
pub fn query_to_fsa(q: &PathQuery) -> CondNfa {
    regex_to_nfa(&query_to_regex(q))
}

/// True iff no final state is reachable from the start state.
pub fn is_empty_language(a: &CondNfa) -> bool {
    reachable_from(a, a.start).iter().all(|q| !a.finals.contains(q))
}

fn reachable_from(a: &CondNfa, start: usize) -> BTreeSet<usize> {
    let adj = a.adjacency();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for t in &adj[s] {
            if seen.insert(t.to) {
                queue.push_back(t.to);
            }
        }
    }
    seen
}

/// Keeps only states that are reachable from the start and can reach a
/// final state. An automaton with empty language becomes a lone
/// non-final start state.
pub fn trim(a: &CondNfa) -> CondNfa {
    let forward = reachable_from(a, a.start);
    let mut backward: BTreeSet<usize> = a.finals.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for t in &a.transitions {
            if backward.contains(&t.to) && backward.insert(t.from) {
                changed = true;
            }
        }
    }
    let mut keep: Vec<usize> = forward.intersection(&backward).copied().collect();
    if !keep.contains(&a.start) {
        keep = vec![a.start];
    }
    let index: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    CondNfa {
        states: keep.iter().map(|s| a.states[*s].clone()).collect(),
        start: index[&a.start],
        finals: a.finals.iter().filter_map(|f| index.get(f).copied()).collect(),
        transitions: a
            .transitions
            .iter()
            .filter_map(|t| {
                Some(Transition {
                    from: *index.get(&t.from)?,
                    label: t.label.clone(),
                    to: *index.get(&t.to)?,
                })
            })
            .collect(),
    }
}

/// Options for the condition-aware product.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PruneOptions {
    /// Also copy the meta node's attribute assignments into combined `ε`
    /// labels. Only equivalence-preserving when instance nodes carry the
    /// same assignments as their meta nodes.
    pub import_meta_restrictions: bool,
}

/// Shared state for one pruning run against a fixed meta automaton.
struct Pruner<'m> {
    meta: &'m CondNfa,
    meta_adj: Vec<Vec<&'m Transition>>,
    opts: PruneOptions,
    combine_cache: HashMap<(CondLabel, CondLabel, usize), Option<CondLabel>>,
    nested_cache: HashMap<(PathQuery, usize), Option<PathQuery>>,
}

impl<'m> Pruner<'m> {
    fn new(meta: &'m CondNfa, opts: PruneOptions) -> Self {
        Pruner {
            meta,
            meta_adj: meta.adjacency(),
            opts,
            combine_cache: HashMap::new(),
            nested_cache: HashMap::new(),
        }
    }

    /// The label combination `l1 ∘_(M, q2') l2`; `None` is `⊥`.
    fn combine(&mut self, l1: &CondLabel, l2: &CondLabel, q2prime: usize) -> Option<CondLabel> {
        if l1.tag != l2.tag {
            return None;
        }
        if l1.tag.is_some() {
            return Some(l1.clone());
        }
        let key = (l1.clone(), l2.clone(), q2prime);
        if let Some(hit) = self.combine_cache.get(&key) {
            return hit.clone();
        }
        let result = self.combine_epsilon(l1, l2, q2prime);
        self.combine_cache.insert(key, result.clone());
        result
    }

    fn combine_epsilon(&mut self, l1: &CondLabel, l2: &CondLabel, q2prime: usize) -> Option<CondLabel> {
        let mut conds = BTreeSet::new();
        for c in &l1.conds {
            if let Condition::AttrEq(a, s) = c {
                let conflict = l2
                    .conds
                    .iter()
                    .any(|m| matches!(m, Condition::AttrEq(b, t) if b == a && t != s));
                if conflict {
                    return None;
                }
                conds.insert(c.clone());
            }
        }
        for c in &l1.conds {
            if let Condition::Query(q) = c {
                let pruned = self.prune_nested(q, q2prime)?;
                conds.insert(Condition::Query(pruned));
            }
        }
        if self.opts.import_meta_restrictions {
            for c in &l2.conds {
                if let Condition::AttrEq(a, _) = c {
                    let present = conds.iter().any(|x| matches!(x, Condition::AttrEq(b, _) if b == a));
                    if !present {
                        conds.insert(c.clone());
                    }
                }
            }
        }
        Some(CondLabel { tag: None, conds })
    }

    /// `RPQ(FSA(Q') ×̃ M')` with `M'` rooted at `start`, or `None` when the
    /// product recognizes the empty language.
    fn prune_nested(&mut self, q: &PathQuery, start: usize) -> Option<PathQuery> {
        let key = (q.clone(), start);
        if let Some(hit) = self.nested_cache.get(&key) {
            return hit.clone();
        }
        let p = self.product(&query_to_fsa(q), start);
        let result = if is_empty_language(&p) { None } else { Some(rpq(&p)) };
        self.nested_cache.insert(key, result.clone());
        result
    }

    /// Reachable part of `qa ×̃ M` with `M` started at `start2`.
    fn product(&mut self, qa: &CondNfa, start2: usize) -> CondNfa {
        let qa_adj = qa.adjacency();
        let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut pairs = vec![(qa.start, start2)];
        index.insert((qa.start, start2), 0);
        let mut transitions = BTreeSet::new();
        let mut i = 0;
        while i < pairs.len() {
            let (q1, q2) = pairs[i];
            let meta_adj = self.meta_adj.clone();
            for t1 in &qa_adj[q1] {
                for t2 in &meta_adj[q2] {
                    let Some(label) = self.combine(&t1.label, &t2.label, t2.to) else {
                        continue;
                    };
                    let target = (t1.to, t2.to);
                    let j = *index.entry(target).or_insert_with(|| {
                        pairs.push(target);
                        pairs.len() - 1
                    });
                    transitions.insert(Transition { from: i, label, to: j });
                }
            }
            i += 1;
        }
        CondNfa {
            states: pairs
                .iter()
                .map(|(a, b)| format!("({},{})", qa.states[*a], self.meta.states[*b]))
                .collect(),
            start: 0,
            finals: pairs
                .iter()
                .enumerate()
                .filter(|(_, (a, b))| qa.finals.contains(a) && self.meta.finals.contains(b))
                .map(|(i, _)| i)
                .collect(),
            transitions,
        }
    }
}

/// `l1 ∘_(M, q2') l2` for a query label `l1` and a meta label `l2` whose
/// transition ends in `q2prime`.
pub fn combine_labels(l1: &CondLabel, l2: &CondLabel, m: &CondNfa, q2prime: usize) -> Option<CondLabel> {
    Pruner::new(m, PruneOptions::default()).combine(l1, l2, q2prime)
}

/// `qa ×̃ ma`, materializing only the part reachable from the start pair.
pub fn product(qa: &CondNfa, ma: &CondNfa) -> CondNfa {
    product_with(qa, ma, PruneOptions::default())
}

pub fn product_with(qa: &CondNfa, ma: &CondNfa, opts: PruneOptions) -> CondNfa {
    Pruner::new(ma, opts).product(qa, ma.start)
}

/// The classical product: labels must be equal and are kept.
pub fn classical_product(a: &CondNfa, b: &CondNfa) -> CondNfa {
    let (adj_a, adj_b) = (a.adjacency(), b.adjacency());
    let mut index = BTreeMap::from([((a.start, b.start), 0)]);
    let mut pairs = vec![(a.start, b.start)];
    let mut transitions = BTreeSet::new();
    let mut i = 0;
    while i < pairs.len() {
        let (p, q) = pairs[i];
        for t1 in &adj_a[p] {
            for t2 in adj_b[q].iter().filter(|t2| t2.label == t1.label) {
                let target = (t1.to, t2.to);
                let j = *index.entry(target).or_insert_with(|| {
                    pairs.push(target);
                    pairs.len() - 1
                });
                transitions.insert(Transition {
                    from: i,
                    label: t1.label.clone(),
                    to: j,
                });
            }
        }
        i += 1;
    }
    CondNfa {
        states: pairs
            .iter()
            .map(|(x, y)| format!("({},{})", a.states[*x], b.states[*y]))
            .collect(),
        start: 0,
        finals: pairs
            .iter()
            .enumerate()
            .filter(|(_, (x, y))| a.finals.contains(x) && b.finals.contains(y))
            .map(|(i, _)| i)
            .collect(),
        transitions,
    }
}

/// Word acceptance by subset simulation.
pub fn accepts(a: &CondNfa, word: &[CondLabel]) -> bool {
    let mut current = BTreeSet::from([a.start]);
    for sym in word {
        current = a
            .transitions
            .iter()
            .filter(|t| current.contains(&t.from) && &t.label == sym)
            .map(|t| t.to)
            .collect();
        if current.is_empty() {
            return false;
        }
    }
    current.iter().any(|q| a.finals.contains(q))
}

/// State elimination to a regular expression. The next state eliminated is
/// the one minimizing in-degree × out-degree (self-loops excluded), ties
/// broken by the lower index.
pub fn nfa_to_regex(a: &CondNfa) -> RegexExpr {
    let n = a.states.len();
    let (init, fin) = (n, n + 1);
    let mut edges: BTreeMap<(usize, usize), RegexExpr> = BTreeMap::new();
    let add = |edges: &mut BTreeMap<(usize, usize), RegexExpr>, p: usize, q: usize, r: RegexExpr| {
        let merged = match edges.remove(&(p, q)) {
            Some(old) => RegexExpr::alt([old, r]),
            None => r,
        };
        if merged != RegexExpr::EmptySet {
            edges.insert((p, q), merged);
        }
    };
    add(&mut edges, init, a.start, RegexExpr::EmptyWord);
    for &f in &a.finals {
        add(&mut edges, f, fin, RegexExpr::EmptyWord);
    }
    for t in &a.transitions {
        add(&mut edges, t.from, t.to, RegexExpr::Symbol(t.label.clone()));
    }

    let mut remaining: BTreeSet<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let k = *remaining
            .iter()
            .min_by_key(|&&k| {
                let indeg = edges.keys().filter(|(p, q)| *q == k && *p != k).count();
                let outdeg = edges.keys().filter(|(p, q)| *p == k && *q != k).count();
                (indeg * outdeg, k)
            })
            .unwrap();
        remaining.remove(&k);
        let self_loop = edges
            .remove(&(k, k))
            .map(RegexExpr::star)
            .unwrap_or(RegexExpr::EmptyWord);
        let incoming: Vec<(usize, RegexExpr)> = edges
            .iter()
            .filter(|((_, q), _)| *q == k)
            .map(|((p, _), r)| (*p, r.clone()))
            .collect();
        let outgoing: Vec<(usize, RegexExpr)> = edges
            .iter()
            .filter(|((p, _), _)| *p == k)
            .map(|((_, q), r)| (*q, r.clone()))
            .collect();
        edges.retain(|(p, q), _| *p != k && *q != k);
        for (p, rin) in &incoming {
            for (q, rout) in &outgoing {
                add(
                    &mut edges,
                    *p,
                    *q,
                    RegexExpr::seq([rin.clone(), self_loop.clone(), rout.clone()]),
                );
            }
        }
    }
    edges.remove(&(init, fin)).unwrap_or(RegexExpr::EmptySet)
}

/// Replaces `R*` by `(() | R)^k` when `R` only contains `ε` symbols, where
/// `k` is the number of distinct symbols in `R`. Such loops only repeat
/// node tests at one node, and repeating a test is idempotent, so the
/// result denotes the same query.
pub fn unroll_test_loops(re: &RegexExpr) -> RegexExpr {
    match re {
        RegexExpr::Symbol(_) | RegexExpr::EmptySet | RegexExpr::EmptyWord => re.clone(),
        RegexExpr::Seq(xs) => RegexExpr::seq(xs.iter().map(unroll_test_loops)),
        RegexExpr::Alt(xs) => RegexExpr::alt(xs.iter().map(unroll_test_loops)),
        RegexExpr::Star(x) => {
            let inner = unroll_test_loops(x);
            let mut symbols = BTreeSet::new();
            inner.symbols(&mut symbols);
            if !inner.contains_star() && symbols.iter().all(|l| l.is_epsilon()) {
                let once = RegexExpr::alt([RegexExpr::EmptyWord, inner.clone()]);
                RegexExpr::seq(std::iter::repeat_n(once, symbols.len().max(1)))
            } else {
                RegexExpr::star(inner)
            }
        }
    }
}

/// Merges condition symbols back into the preceding factor. A condition
/// symbol with no preceding factor becomes `<self>[...]`.
pub fn regex_to_query(re: &RegexExpr) -> PathQuery {
    fn conv(re: &RegexExpr) -> PathQuery {
        match re {
            RegexExpr::Symbol(l) => symbol(l, None),
            RegexExpr::Seq(xs) => {
                let mut acc: Option<PathQuery> = None;
                for x in xs {
                    acc = Some(match (acc, x) {
                        (Some(prev), RegexExpr::Symbol(l)) if l.is_epsilon() => symbol(l, Some(prev)),
                        (Some(prev), other) => PathQuery::concat(prev, conv(other)),
                        (None, other) => conv(other),
                    });
                }
                acc.unwrap_or(PathQuery::Epsilon)
            }
            RegexExpr::Alt(xs) => {
                let mut it = xs.iter().map(conv);
                let first = it.next().unwrap_or(PathQuery::Empty);
                it.fold(first, PathQuery::alt)
            }
            RegexExpr::Star(x) => PathQuery::star(conv(x)),
            RegexExpr::EmptySet => PathQuery::Empty,
            RegexExpr::EmptyWord => PathQuery::Epsilon,
        }
    }
    fn symbol(l: &CondLabel, prev: Option<PathQuery>) -> PathQuery {
        let base = match (&l.tag, prev) {
            (Some(t), None) => PathQuery::Tag(t.clone()),
            (Some(t), Some(p)) => PathQuery::concat(p, PathQuery::Tag(t.clone())),
            (None, Some(p)) => p,
            (None, None) => PathQuery::Epsilon,
        };
        if l.conds.is_empty() {
            base
        } else {
            PathQuery::cond(base, l.conds.iter().cloned().collect())
        }
    }
    conv(re).canonical()
}

/// `RPQ(A)`: trim, eliminate states, unroll test loops, and read back a
/// query in canonical form.
pub fn rpq(a: &CondNfa) -> PathQuery {
    regex_to_query(&unroll_test_loops(&nfa_to_regex(&trim(a))))
}

/// Prunes `q` against the meta-level graph `m`.
pub fn prune(q: &PathQuery, m: &GraphDatabase) -> PathQuery {
    prune_with(q, m, PruneOptions::default())
}

pub fn prune_with(q: &PathQuery, m: &GraphDatabase, opts: PruneOptions) -> PathQuery {
    let ma = graph_to_fsa(m);
    let p = product_with(&query_to_fsa(&q.canonical()), &ma, opts);
    rpq(&p)
}

/// Nodes reached by accepting runs of `a` over paths of `g` starting at
/// `context`. Tag symbols follow an edge into a node with that tag; `ε`
/// symbols stay put and require their conditions to hold at the node.
pub fn run_on_graph(a: &CondNfa, g: &GraphDatabase, context: &NodeId) -> BTreeSet<NodeId> {
    let adj = a.adjacency();
    let mut cond_memo: HashMap<(CondLabel, NodeId), bool> = HashMap::new();
    let mut seen = BTreeSet::from([(a.start, context.clone())]);
    let mut queue = VecDeque::from([(a.start, context.clone())]);
    let mut out = BTreeSet::new();
    while let Some((q, n)) = queue.pop_front() {
        if a.finals.contains(&q) {
            out.insert(n.clone());
        }
        for t in &adj[q] {
            let targets: Vec<NodeId> = match &t.label.tag {
                Some(tag) => g
                    .successors(&n)
                    .filter(|m| g.tag(m) == Some(tag.as_str()))
                    .cloned()
                    .collect(),
                None => {
                    let ok = *cond_memo.entry((t.label.clone(), n.clone())).or_insert_with(|| {
                        t.label.conds.iter().all(|c| match c {
                            Condition::AttrEq(a, s) => g.label(&n).is_some_and(|l| l.has(a, s)),
                            Condition::Query(sub) => !eval_path_query(sub, g, &n).is_empty(),
                        })
                    });
                    if ok {
                        vec![n.clone()]
                    } else {
                        Vec::new()
                    }
                }
            };
            for m in targets {
                if seen.insert((t.to, m.clone())) {
                    queue.push_back((t.to, m));
                }
            }
        }
    }
    out
}
