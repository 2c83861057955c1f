//! Text formats: XML graph databases, description bindings, the
//! schema/instance format, implication constraints and algebra queries.
//!
//! Every loader has a serializer whose output parses back to an equal value.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::algebra::{Cond, Query};
use crate::chase::{Atom, ImplicationConstraint};
use crate::graphdb::{DescriptionBinding, GraphDatabase, NodeId, NodeLabel};
use crate::model::{
    validate_all, ClassHierarchy, ConjView, Instance, OValue, Oid, PathExpr, RelationDecl, Relationship, Schema, Term,
    TypeExpr, ViewAtom, Violation,
};
use crate::{is_ident_continue, is_ident_start, is_identifier, quoted};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IoError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("XML: {0}")]
    Xml(String),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("reference to unknown id `{0}`")]
    DanglingRef(String),
    #[error("validation failed:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

// ---------------------------------------------------------------------------
// Lexer shared by the line and expression formats.

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    Col(usize),
    Punct(&'static str),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => quoted(s),
            Tok::Col(c) => format!("`${c}`"),
            Tok::Punct(p) => format!("`{p}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

const PUNCT: [&str; 15] = [
    ":=", ":-", "->", "<=", "(", ")", "<", ">", "{", "}", ",", ";", ":", ".", "=",
];

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn syntax(text: &str, offset: usize, message: impl Into<String>) -> IoError {
    let (line, column) = position(text, offset);
    IoError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Tokenizes `text[start..end]`; `#` starts a comment running to the end
/// of the line. Offsets are relative to `text`.
fn lex(text: &str, start: usize, end: usize) -> Result<Vec<Token>, IoError> {
    let src = &text[..end];
    let mut out = Vec::new();
    let mut i = start;
    while i < end {
        let c = src[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
        } else if c == '#' {
            i = src[i..].find('\n').map_or(end, |n| i + n);
        } else if c == '"' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                let Some(d) = src[j..].chars().next() else {
                    return Err(syntax(text, i, "unterminated string"));
                };
                j += d.len_utf8();
                match d {
                    '"' => break,
                    '\\' => {
                        let Some(e) = src[j..].chars().next() else {
                            return Err(syntax(text, i, "unterminated string"));
                        };
                        j += e.len_utf8();
                        s.push(match e {
                            'n' => '\n',
                            other => other,
                        });
                    }
                    other => s.push(other),
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                offset: i,
            });
            i = j;
        } else if c == '$' {
            let digits: String = src[i + 1..].chars().take_while(|d| d.is_ascii_digit()).collect();
            let n = digits
                .parse()
                .map_err(|_| syntax(text, i, "expected a column number after `$`"))?;
            out.push(Token {
                tok: Tok::Col(n),
                offset: i,
            });
            i += 1 + digits.len();
        } else if is_ident_start(c) {
            let mut j = i;
            for d in src[i..].chars() {
                if !is_ident_continue(d) || (d == '-' && src[j + 1..].starts_with('>')) {
                    break;
                }
                j += d.len_utf8();
            }
            out.push(Token {
                tok: Tok::Ident(src[i..j].to_string()),
                offset: i,
            });
            i = j;
        } else if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            out.push(Token {
                tok: Tok::Punct(p),
                offset: i,
            });
            i += p.len();
        } else {
            return Err(syntax(text, i, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'t> {
    text: &'t str,
    toks: Vec<Token>,
    pos: usize,
    end: usize,
}

impl<'t> Parser<'t> {
    fn new(text: &'t str, start: usize, end: usize) -> Result<Self, IoError> {
        Ok(Parser {
            text,
            toks: lex(text, start, end)?,
            pos: 0,
            end,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn error(&self, message: impl Into<String>) -> IoError {
        let found = self.peek().map_or("end of input".to_string(), Tok::describe);
        syntax(self.text, self.offset(), format!("{}, found {found}", message.into()))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), IoError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`")))
        }
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == k)
    }

    fn eat_keyword(&mut self, k: &str) -> bool {
        if self.is_keyword(k) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, IoError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected an identifier")),
        }
    }

    fn string(&mut self) -> Result<String, IoError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected a string")),
        }
    }

    fn column(&mut self) -> Result<usize, IoError> {
        match self.peek() {
            Some(Tok::Col(c)) => {
                let c = *c;
                self.pos += 1;
                Ok(c)
            }
            _ => Err(self.error("expected a column reference `$i`")),
        }
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    /// Comma-separated list up to (and consuming) `close`.
    fn list<T>(
        &mut self,
        close: &str,
        mut item: impl FnMut(&mut Self) -> Result<T, IoError>,
    ) -> Result<Vec<T>, IoError> {
        let mut out = Vec::new();
        if self.eat_punct(close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat_punct(close) {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }
}

// ---------------------------------------------------------------------------
// XML graph databases.

/// Loads a graph database from XML.
///
/// Each element is a node tagged with the element name; attributes other
/// than `id` and `ref` become attribute assignments; nesting gives edges.
/// An element carrying `ref="#i"` adds an edge from its parent to the node
/// with id `i` instead of creating a node. A node's id is its `id`
/// attribute if present, and otherwise `o{k}` where `k` is the element's
/// position in breadth-first document order.
pub fn load_graph_xml(text: &str) -> Result<GraphDatabase, IoError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| IoError::Xml(e.to_string()))?;
    let is_ref = |n: &roxmltree::Node| n.attribute("ref").is_some();

    let mut order = Vec::new();
    let mut queue = VecDeque::from([doc.root_element()]);
    while let Some(n) = queue.pop_front() {
        order.push(n);
        queue.extend(n.children().filter(|c| c.is_element() && !is_ref(c)));
    }
    let mut ids: HashMap<roxmltree::NodeId, String> = HashMap::new();
    let mut seen = BTreeSet::new();
    for (k, n) in order.iter().enumerate() {
        let id = n.attribute("id").map_or_else(|| format!("o{k}"), str::to_string);
        if !seen.insert(id.clone()) {
            return Err(IoError::DuplicateId(id));
        }
        ids.insert(n.id(), id);
    }
    let label = |n: &roxmltree::Node| {
        let mut l = NodeLabel::new(n.tag_name().name());
        for a in n.attributes().filter(|a| a.name() != "id" && a.name() != "ref") {
            l = l.with_attr(a.name(), a.value());
        }
        l
    };
    let root = order[0];
    let mut g = GraphDatabase::new(ids[&root.id()].as_str(), label(&root));
    for n in &order[1..] {
        g.add_node(ids[&n.id()].as_str(), label(n));
    }
    for n in &order {
        for c in n.children().filter(|c| c.is_element()) {
            let target = match c.attribute("ref") {
                Some(r) => {
                    let r = r.strip_prefix('#').unwrap_or(r);
                    if !seen.contains(r) {
                        return Err(IoError::DanglingRef(r.to_string()));
                    }
                    r.to_string()
                }
                None => ids[&c.id()].clone(),
            };
            g.add_edge(ids[&n.id()].as_str(), target.as_str());
        }
    }
    Ok(g)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Serializes a graph as XML. Nodes reachable from the root form a
/// breadth-first spanning tree; the remaining edges become `ref` elements.
/// Every node carries its id explicitly.
pub fn graph_to_xml(g: &GraphDatabase) -> String {
    let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
    let mut seen = BTreeSet::from([g.root()]);
    let mut queue = VecDeque::from([g.root()]);
    while let Some(n) = queue.pop_front() {
        for m in g.successors(n) {
            if seen.insert(m) {
                parent.insert(m, n);
                queue.push_back(m);
            }
        }
    }
    fn write(g: &GraphDatabase, n: &NodeId, parent: &BTreeMap<&NodeId, &NodeId>, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        let label = g.label(n).expect("node");
        out.push_str(&format!("{pad}<{} id=\"{}\"", label.tag, xml_escape(n.as_str())));
        for (a, v) in &label.attrs {
            out.push_str(&format!(" {a}=\"{}\"", xml_escape(v)));
        }
        let children: Vec<&NodeId> = g.successors(n).collect();
        if children.is_empty() {
            out.push_str("/>\n");
            return;
        }
        out.push_str(">\n");
        for c in children {
            if parent.get(c) == Some(&n) {
                write(g, c, parent, depth + 1, out);
            } else {
                let tag = g.tag(c).unwrap_or("ref");
                out.push_str(&format!("{pad}  <{tag} ref=\"#{}\"/>\n", xml_escape(c.as_str())));
            }
        }
        out.push_str(&format!("{pad}</{}>\n", label.tag));
    }
    let mut out = String::new();
    write(g, g.root(), &parent, 0, &mut out);
    out
}

/// Parses a binding file: one `instance-node -> meta-node` pair per line.
pub fn load_binding(text: &str) -> Result<DescriptionBinding, IoError> {
    let mut out = DescriptionBinding::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let mut p = Parser::new(text, offset, offset + line.len())?;
        offset += line.len();
        if p.at_end() {
            continue;
        }
        let a = p.ident()?;
        p.expect("->")?;
        let b = p.ident()?;
        p.finish()?;
        out.insert(a.as_str(), b.as_str());
    }
    Ok(out)
}

pub fn binding_to_text(mu: &DescriptionBinding) -> String {
    mu.iter().map(|(a, b)| format!("{a} -> {b}\n")).collect()
}

// ---------------------------------------------------------------------------
// Schema and instance format.

const STATEMENTS: [&str; 8] = ["class", "relation", "rel", "desc", "hom", "object", "tuple", "mu"];

/// Splits a line-oriented file into statements: a statement starts on a
/// line whose first word is a statement keyword and extends over the
/// following lines that do not.
fn statements(text: &str) -> Result<Vec<(usize, usize)>, IoError> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let first: String = trimmed.chars().take_while(|c| is_ident_continue(*c)).collect();
        if STATEMENTS.contains(&first.as_str()) {
            out.push((start, offset));
        } else if let Some(last) = out.last_mut() {
            last.1 = offset;
        } else {
            return Err(syntax(
                text,
                start + (line.len() - trimmed.len()),
                "expected a statement keyword",
            ));
        }
    }
    Ok(out)
}

impl Parser<'_> {
    fn type_expr(&mut self) -> Result<TypeExpr, IoError> {
        if self.eat_punct("<") {
            Ok(TypeExpr::Tuple(self.fields()?.into_iter().collect()))
        } else if self.eat_punct("{") {
            let inner = self.type_expr()?;
            self.expect("}")?;
            Ok(TypeExpr::set_of(inner))
        } else {
            let name = self.ident()?;
            Ok(if name == "D" {
                TypeExpr::D
            } else {
                TypeExpr::Class(name)
            })
        }
    }

    /// `A: T, … >` after an opening `<`, in declaration order.
    fn fields(&mut self) -> Result<Vec<(String, TypeExpr)>, IoError> {
        self.list(">", |p| {
            let name = p.ident()?;
            p.expect(":")?;
            Ok((name, p.type_expr()?))
        })
    }

    fn value(&mut self) -> Result<OValue, IoError> {
        match self.peek() {
            Some(Tok::Str(_)) => Ok(OValue::Const(self.string()?)),
            Some(Tok::Punct("<")) => {
                self.pos += 1;
                let fields = self.list(">", |p| {
                    let name = p.ident()?;
                    p.expect(":")?;
                    Ok((name, p.value()?))
                })?;
                Ok(OValue::tuple(fields))
            }
            Some(Tok::Punct("{")) => {
                self.pos += 1;
                Ok(OValue::set(self.list("}", Self::value)?))
            }
            Some(Tok::Ident(s)) if s == "oid" && matches!(self.peek_at(1), Some(Tok::Punct("("))) => {
                self.pos += 2;
                let o = self.string()?;
                self.expect(")")?;
                Ok(OValue::oid(o))
            }
            Some(Tok::Ident(_)) => Ok(OValue::oid(self.ident()?)),
            _ => Err(self.error("expected a value")),
        }
    }

    fn oid(&mut self) -> Result<Oid, IoError> {
        match self.value()? {
            OValue::Oid(o) => Ok(o),
            _ => Err(self.error("expected an object identifier")),
        }
    }

    fn term(&mut self) -> Result<Term, IoError> {
        match self.peek() {
            Some(Tok::Str(_)) => Ok(Term::Const(self.string()?)),
            _ => Ok(Term::Var(self.ident()?)),
        }
    }
}

/// `name(args)` atoms of a view body before relation names are resolved.
struct RawAtom {
    name: String,
    args: Vec<Term>,
    offset: usize,
}

enum PendingRel {
    Ready(Relationship),
    View { head: (String, String), body: Vec<RawAtom> },
}

fn parse_statements(text: &str, allow_schema: bool, s: &mut Schema, inst: &mut Instance) -> Result<(), IoError> {
    let mut pending: Vec<(String, PendingRel)> = Vec::new();
    for (start, end) in statements(text)? {
        let mut p = Parser::new(text, start, end)?;
        let kw_offset = p.offset();
        let kw = p.ident()?;
        let schema_kw = ["class", "relation", "rel", "desc", "hom"].contains(&kw.as_str());
        if schema_kw && !allow_schema {
            return Err(syntax(text, kw_offset, format!("`{kw}` belongs in a schema file")));
        }
        match kw.as_str() {
            "class" => {
                let name = p.ident()?;
                let mut supers = Vec::new();
                if p.eat_punct("<=") {
                    loop {
                        supers.push(p.ident()?);
                        if !p.eat_punct(",") {
                            break;
                        }
                    }
                }
                p.expect(":")?;
                let ty = p.type_expr()?;
                for sup in supers {
                    s.hierarchy.add_subclass(name.clone(), sup);
                }
                s.hierarchy.add_class(name, ty);
            }
            "relation" => {
                let name = p.ident()?;
                p.expect(":")?;
                p.expect("<")?;
                let fields = p.fields()?;
                s.relations.insert(name, RelationDecl::new(fields));
            }
            "rel" => {
                let name = p.ident()?;
                p.expect(":=")?;
                let rel = if p.eat_keyword("path") {
                    let class = p.ident()?;
                    let mut attrs = Vec::new();
                    while p.eat_punct(".") {
                        attrs.push(p.ident()?);
                    }
                    PendingRel::Ready(Relationship::Path(PathExpr::new(class, attrs)))
                } else if p.eat_keyword("relation") {
                    PendingRel::Ready(Relationship::Relation(p.ident()?))
                } else if p.eat_keyword("view") {
                    p.ident()?;
                    p.expect("(")?;
                    let a = p.ident()?;
                    p.expect(",")?;
                    let b = p.ident()?;
                    p.expect(")")?;
                    p.expect(":-")?;
                    let mut body = Vec::new();
                    loop {
                        let offset = p.offset();
                        let name = p.ident()?;
                        p.expect("(")?;
                        let args = p.list(")", Parser::term)?;
                        body.push(RawAtom { name, args, offset });
                        if !p.eat_punct(",") {
                            break;
                        }
                    }
                    PendingRel::View { head: (a, b), body }
                } else {
                    return Err(p.error("expected `path`, `relation` or `view`"));
                };
                pending.push((name, rel));
            }
            "desc" | "hom" => {
                let a = p.ident()?;
                p.expect("->")?;
                let b = p.ident()?;
                let set = if kw == "desc" {
                    &mut s.description.desc
                } else {
                    &mut s.description.hom
                };
                set.insert((a, b));
            }
            "object" => {
                let oid = p.oid()?;
                p.expect(":")?;
                let class = p.ident()?;
                p.expect("=")?;
                let v = p.value()?;
                inst.add_object(oid, &class, v);
            }
            "tuple" => {
                let name = p.ident()?;
                p.expect("=")?;
                let v = p.value()?;
                inst.relations.entry(name).or_default().insert(v);
            }
            "mu" => {
                let a = p.oid()?;
                p.expect("->")?;
                let b = p.oid()?;
                inst.mu.insert(a, b);
            }
            _ => unreachable!("statement keywords"),
        }
        p.finish()?;
    }
    for (name, rel) in pending {
        let rel = match rel {
            PendingRel::Ready(r) => r,
            PendingRel::View { head, body } => {
                let mut atoms = Vec::new();
                for a in body {
                    if s.relations.contains_key(&a.name) {
                        atoms.push(ViewAtom::Relation {
                            name: a.name,
                            args: a.args,
                        });
                    } else {
                        let [from, to]: [Term; 2] = a
                            .args
                            .try_into()
                            .map_err(|_| syntax(text, a.offset, "relationship atoms take two arguments"))?;
                        atoms.push(ViewAtom::Relationship { name: a.name, from, to });
                    }
                }
                Relationship::View(ConjView { head, body: atoms })
            }
        };
        s.relationships.insert(name, rel);
    }
    Ok(())
}

/// Parses a schema file without validating it.
pub fn parse_schema(text: &str) -> Result<Schema, IoError> {
    let mut s = Schema::default();
    let mut inst = Instance::default();
    parse_statements(text, true, &mut s, &mut inst)?;
    if !inst.classes.is_empty() || !inst.relations.is_empty() || !inst.mu.is_empty() {
        return Err(syntax(
            text,
            0,
            "schema files cannot contain objects, tuples or bindings",
        ));
    }
    Ok(s)
}

/// Parses an instance file without validating it.
pub fn parse_instance(text: &str) -> Result<Instance, IoError> {
    let mut inst = Instance::default();
    parse_statements(text, false, &mut Schema::default(), &mut inst)?;
    Ok(inst)
}

/// Parses and validates a schema and an instance.
pub fn load_schema_instance(schema: &str, instance: &str) -> Result<(Schema, Instance), IoError> {
    let s = parse_schema(schema)?;
    let i = parse_instance(instance)?;
    let violations = validate_all(&s, &i);
    if violations.is_empty() {
        Ok((s, i))
    } else {
        Err(IoError::Invalid(violations))
    }
}

fn oid_text(o: &Oid) -> String {
    if is_identifier(o.as_str()) && o.as_str() != "oid" {
        o.to_string()
    } else {
        format!("oid({})", quoted(o.as_str()))
    }
}

fn value_text(v: &OValue) -> String {
    match v {
        OValue::Const(c) => quoted(c),
        OValue::Oid(o) => oid_text(o),
        OValue::Tuple(fields) => {
            let items: Vec<String> = fields.iter().map(|(k, v)| format!("{k}: {}", value_text(v))).collect();
            format!("<{}>", items.join(", "))
        }
        OValue::Set(items) => {
            let items: Vec<String> = items.iter().map(value_text).collect();
            format!("{{{}}}", items.join(", "))
        }
    }
}

pub fn schema_to_text(s: &Schema) -> String {
    let h: &ClassHierarchy = &s.hierarchy;
    let mut out = String::new();
    for (name, ty) in h.classes() {
        let supers = h.direct_superclasses(name);
        if supers.is_empty() {
            out.push_str(&format!("class {name}: {ty}\n"));
        } else {
            out.push_str(&format!("class {name} <= {}: {ty}\n", supers.join(", ")));
        }
    }
    for (name, decl) in &s.relations {
        let cols: Vec<String> = decl.columns.iter().map(|(k, t)| format!("{k}: {t}")).collect();
        out.push_str(&format!("relation {name} : <{}>\n", cols.join(", ")));
    }
    for (name, rel) in &s.relationships {
        let def = match rel {
            Relationship::Relation(r) => format!("relation {r}"),
            Relationship::Path(pe) => format!("path {pe}"),
            Relationship::View(v) => {
                let atoms: Vec<String> = v
                    .body
                    .iter()
                    .map(|a| match a {
                        ViewAtom::Relation { name, args } => {
                            let args: Vec<String> = args.iter().map(|t| t.to_string()).collect();
                            format!("{name}({})", args.join(", "))
                        }
                        ViewAtom::Relationship { name, from, to } => format!("{name}({from}, {to})"),
                    })
                    .collect();
                format!("view h({}, {}) :- {}", v.head.0, v.head.1, atoms.join(", "))
            }
        };
        out.push_str(&format!("rel {name} := {def}\n"));
    }
    for (m, c) in &s.description.desc {
        out.push_str(&format!("desc {m} -> {c}\n"));
    }
    for (m, r) in &s.description.hom {
        out.push_str(&format!("hom {m} -> {r}\n"));
    }
    out
}

pub fn instance_to_text(inst: &Instance) -> String {
    let mut out = String::new();
    for (class, oids) in &inst.classes {
        for o in oids {
            let v = inst.values.get(o).map_or("<>".to_string(), value_text);
            out.push_str(&format!("object {} : {class} = {v}\n", oid_text(o)));
        }
    }
    for (name, tuples) in &inst.relations {
        for t in tuples {
            out.push_str(&format!("tuple {name} = {}\n", value_text(t)));
        }
    }
    for (a, b) in &inst.mu {
        out.push_str(&format!("mu {} -> {}\n", oid_text(a), oid_text(b)));
    }
    out
}

// ---------------------------------------------------------------------------
// Implication constraints.

impl Parser<'_> {
    fn cq_atom(&mut self) -> Result<Atom, IoError> {
        if self.eat_punct("(") {
            let via_mu = self.is_keyword("mu") && matches!(self.peek_at(1), Some(Tok::Punct("(")));
            let var = if via_mu {
                self.pos += 2;
                let v = self.ident()?;
                self.expect(")")?;
                v
            } else {
                self.ident()?
            };
            self.expect(".")?;
            let attr = self.ident()?;
            self.expect("=")?;
            let value = self.string()?;
            self.expect(")")?;
            return Ok(Atom::AttrEq {
                var,
                attr,
                value,
                via_mu,
            });
        }
        let name = self.ident()?;
        self.expect("(")?;
        let args = self.list(")", Self::ident)?;
        match (name.as_str(), args.as_slice()) {
            ("mu", [a, b]) => Ok(Atom::mu(a.clone(), b.clone())),
            (_, [a]) => Ok(Atom::class(name, a.clone())),
            (_, [a, b]) => Ok(Atom::rel(name, a.clone(), b.clone())),
            _ => Err(self.error("atoms take one or two arguments")),
        }
    }
}

/// Parses constraints, one per line:
/// `[name:] (X.attr = "s") :- Atom, … .`
///
/// Unnamed constraints are called `c1, c2, …` by position.
pub fn load_constraints(text: &str) -> Result<Vec<ImplicationConstraint>, IoError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let mut p = Parser::new(text, offset, offset + line.len())?;
        let line_start = offset;
        offset += line.len();
        if p.at_end() {
            continue;
        }
        let id = if matches!(p.peek(), Some(Tok::Ident(_))) && matches!(p.peek_at(1), Some(Tok::Punct(":"))) {
            let id = p.ident()?;
            p.pos += 1;
            id
        } else {
            format!("c{}", out.len() + 1)
        };
        let head = p.cq_atom()?;
        if !matches!(head, Atom::AttrEq { .. }) {
            return Err(syntax(text, line_start, "constraint heads are attribute equalities"));
        }
        p.expect(":-")?;
        let mut body = vec![p.cq_atom()?];
        while p.eat_punct(",") {
            body.push(p.cq_atom()?);
        }
        p.expect(".")?;
        p.finish()?;
        let ic = ImplicationConstraint { id, head, body };
        ic.check().map_err(|m| syntax(text, line_start, m))?;
        out.push(ic);
    }
    Ok(out)
}

pub fn constraints_to_text(ics: &[ImplicationConstraint]) -> String {
    ics.iter().map(|ic| format!("{ic}\n")).collect()
}

// ---------------------------------------------------------------------------
// Algebra queries.

impl Parser<'_> {
    fn query(&mut self) -> Result<Query, IoError> {
        let offset = self.offset();
        let kw = self.ident().map_err(|_| self.error("expected a query"))?;
        if kw == "class" {
            return Ok(Query::Class(self.ident()?));
        }
        self.expect("(")?;
        let q = match kw.as_str() {
            "join" => {
                let left = self.query()?;
                self.expect(",")?;
                let (rel, a, b) = self.rel_ref()?;
                self.expect(",")?;
                Query::join(left, rel, a, b, self.query()?)
            }
            "sjoin" => {
                let (rel, a, b) = self.rel_ref()?;
                self.expect(",")?;
                Query::self_join(rel, a, b, self.query()?)
            }
            "select" | "selectm" => {
                let c = self.cond()?;
                self.expect(",")?;
                let q = self.query()?;
                if kw == "select" {
                    Query::select(c, q)
                } else {
                    Query::select_meta(c, q)
                }
            }
            "project" => {
                let mut cols = vec![self.column()?];
                while self.eat_punct(",") {
                    cols.push(self.column()?);
                }
                self.expect(";")?;
                Query::project(cols, self.query()?)
            }
            "union" | "intersect" | "diff" | "semijoin" => {
                let a = self.query()?;
                self.expect(",")?;
                let b = self.query()?;
                match kw.as_str() {
                    "union" => Query::union(a, b),
                    "intersect" => Query::intersect(a, b),
                    "diff" => Query::diff(a, b),
                    _ => Query::semijoin_mu(a, b),
                }
            }
            "rows" => {
                let source = self.string()?;
                self.expect(";")?;
                let mut row = vec![self.ident()?];
                while self.eat_punct(",") {
                    row.push(self.ident()?);
                }
                let mut tuples = BTreeSet::new();
                while self.eat_punct(";") {
                    self.expect("(")?;
                    let t = self.list(")", |p| p.string().map(Oid::from))?;
                    if t.len() != row.len() {
                        return Err(self.error(format!("expected a tuple of arity {}", row.len())));
                    }
                    tuples.insert(t);
                }
                Query::Materialized { source, row, tuples }
            }
            "empty" => {
                let mut row = vec![self.ident()?];
                while self.eat_punct(",") {
                    row.push(self.ident()?);
                }
                Query::Empty(row)
            }
            other => return Err(syntax(self.text, offset, format!("unknown operator `{other}`"))),
        };
        self.expect(")")?;
        Ok(q)
    }

    fn rel_ref(&mut self) -> Result<(String, usize, usize), IoError> {
        let rel = self.ident()?;
        self.expect("(")?;
        let a = self.column()?;
        self.expect(",")?;
        let b = self.column()?;
        self.expect(")")?;
        Ok((rel, a, b))
    }

    fn cond(&mut self) -> Result<Cond, IoError> {
        let mut c = self.cond_and()?;
        while self.eat_keyword("or") {
            c = Cond::or(c, self.cond_and()?);
        }
        Ok(c)
    }

    fn cond_and(&mut self) -> Result<Cond, IoError> {
        let mut c = self.cond_unary()?;
        while self.eat_keyword("and") {
            c = Cond::and(c, self.cond_unary()?);
        }
        Ok(c)
    }

    fn cond_unary(&mut self) -> Result<Cond, IoError> {
        if self.eat_keyword("not") {
            return Ok(Cond::not(self.cond_unary()?));
        }
        if self.eat_punct("(") {
            let c = self.cond()?;
            self.expect(")")?;
            return Ok(c);
        }
        let col = self.column()?;
        let mut path = Vec::new();
        while self.eat_punct(".") {
            path.push(self.ident()?);
        }
        if path.is_empty() {
            return Err(self.error("expected `.attribute` after the column"));
        }
        self.expect("=")?;
        Ok(Cond::Eq {
            col,
            path,
            value: self.string()?,
        })
    }
}

/// Parses the algebra syntax: `class P`, `join(Q, R($i, $j), Q)`,
/// `sjoin(R($i, $j), Q)`, `select(C, Q)`, `selectm(C, Q)`,
/// `project($i, …; Q)`, `union`/`intersect`/`diff`/`semijoin(Q, Q)`,
/// `rows("src"; P, …; ("o1", …), …)` and `empty(P, …)`.
pub fn parse_algebra_query(text: &str) -> Result<Query, IoError> {
    let mut p = Parser::new(text, 0, text.len())?;
    let q = p.query()?;
    p.finish()?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::tests::{car_instance, car_schema, q1_prime};
    use crate::graphdb::validate_graph;
    use crate::model::validate_all;

    const CAR_META: &str = r#"<db description="true">
  <part name="01_model_M1" category="car">
    <part name="suv_platform1" />
    <part name="150hp_suv_engine1"><prop name="engine_id" /></part>
    <part name="nostalgic_suv_body1" category="car_body">
      <prop name="color" />
      <prop name="sliding_roof" />
    </part>
  </part>
</db>"#;

    #[test]
    fn car_meta_xml() {
        let g = load_graph_xml(CAR_META).unwrap();
        assert_eq!(g.node_count(), 8);
        assert!(validate_graph(&g).is_empty());
        let ids = |t: &str| -> Vec<String> {
            g.nodes()
                .filter(|(_, l)| l.tag == t)
                .map(|(n, _)| n.to_string())
                .collect()
        };
        assert_eq!(ids("db"), ["o0"]);
        assert_eq!(ids("part"), ["o1", "o2", "o3", "o4"]);
        assert_eq!(ids("prop"), ["o5", "o6", "o7"]);
        assert!(g.has_edge(&"o3".into(), &"o5".into()));
        assert_eq!(g.label(&"o4".into()).unwrap().attr("category"), Some("car_body"));
        assert_eq!(g.label(&"o0".into()).unwrap().attr("description"), Some("true"));
        assert_eq!(load_graph_xml(&graph_to_xml(&g)).unwrap(), g);
        assert_eq!(load_graph_xml("<a/>").unwrap().node_count(), 1);
    }

    #[test]
    fn xml_refs() {
        let g = load_graph_xml(r##"<r><a id="x"><b><a ref="#x"/></b></a></r>"##).unwrap();
        assert_eq!(g.node_count(), 3);
        assert!(g.has_edge(&"o2".into(), &"x".into()));
        assert!(!g.is_acyclic());
        assert!(validate_graph(&g).is_empty());
        assert_eq!(load_graph_xml(&graph_to_xml(&g)).unwrap(), g);
        assert_eq!(
            load_graph_xml(r##"<r><a ref="#nope"/></r>"##),
            Err(IoError::DanglingRef("nope".into()))
        );
        assert_eq!(
            load_graph_xml(r#"<r><a id="x"/><b id="x"/></r>"#),
            Err(IoError::DuplicateId("x".into()))
        );
        assert!(matches!(load_graph_xml("<r description=true/>"), Err(IoError::Xml(_))));
    }

    #[test]
    fn bindings() {
        let mu = load_binding("# comment\np1 -> o1\n\np2->o2\n").unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.get(&"p2".into()), Some(&NodeId::from("o2")));
        assert_eq!(load_binding(&binding_to_text(&mu)).unwrap(), mu);
        assert!(matches!(load_binding("p1 o1"), Err(IoError::Syntax { line: 1, .. })));
    }

    #[test]
    fn schema_instance_round_trip() {
        let (s, i) = (car_schema(), car_instance());
        let st = schema_to_text(&s);
        let it = instance_to_text(&i);
        let (s2, i2) = load_schema_instance(&st, &it).unwrap();
        assert_eq!(s2, s);
        assert_eq!(i2, i);
        assert!(validate_all(&s2, &i2).is_empty());
    }

    #[test]
    fn schema_syntax() {
        let text = "class A: <x: D>\nclass B <= A: <x: D,\n   y: {A}>\nrelation R : <from: A, to: B>\n\
                    rel r := relation R\nrel v := view h(X, Y) :- R(X, Y), r(Y, X)\n";
        let s = parse_schema(text).unwrap();
        assert!(s.hierarchy.is_subclass("B", "A"));
        assert_eq!(s.relations["R"].columns[0].0, "from");
        assert!(matches!(&s.relationships["v"], Relationship::View(v) if v.body.len() == 2));
        assert_eq!(parse_schema(&schema_to_text(&s)).unwrap(), s);
        match parse_schema("class A: <x: D>\nclass B: <y D>\n") {
            Err(IoError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_schema("object o : A = <>\n").is_err());
        assert!(parse_instance("class A: D\n").is_err());
        let cyc = "class A: D\nclass B: D\ndesc A -> B\ndesc B -> A\n";
        assert!(matches!(load_schema_instance(cyc, ""), Err(IoError::Invalid(_))));
    }

    #[test]
    fn odd_oids_round_trip() {
        let mut i = Instance::default();
        i.add_object("has space", "A", OValue::tuple([("r", OValue::oid("oid"))]));
        assert_eq!(parse_instance(&instance_to_text(&i)).unwrap(), i);
    }

    #[test]
    fn constraints() {
        let text = r#"
a: (X.category = "car_body") :- Part'(X), prop'(X, Y), Property'(Y), (Y.name = "color") .
(X.category = "car") :- Part'(X), part'(X, Y), Part'(Y), (Y.category = "car_body") .
"#;
        let ics = load_constraints(text).unwrap();
        assert_eq!(ics.len(), 2);
        assert_eq!(ics[0].id, "a");
        assert_eq!(ics[1].id, "c2");
        assert_eq!(ics[0].body.len(), 4);
        assert_eq!(load_constraints(&constraints_to_text(&ics)).unwrap(), ics);
        assert!(load_constraints("").unwrap().is_empty());
        assert!(matches!(
            load_constraints(r#"(Z.a = "b") :- P(X) ."#),
            Err(IoError::Syntax { .. })
        ));
        let lowered = load_constraints(r#"(mu(X).a = "b") :- P(X), mu(X, Y) ."#).unwrap();
        assert!(matches!(&lowered[0].head, Atom::AttrEq { via_mu: true, .. }));
    }

    #[test]
    fn algebra_queries() {
        let text = r#"join(join(class Part, part($1, $1), class Part), prop($2, $1), selectm($1.name = "color", class Property))"#;
        assert_eq!(parse_algebra_query(text).unwrap(), q1_prime());
        assert_eq!(parse_algebra_query("class Part").unwrap(), Query::class("Part"));
        match parse_algebra_query("join(") {
            Err(IoError::Syntax { line: 1, column, .. }) => assert_eq!(column, 6),
            other => panic!("{other:?}"),
        }
        for q in [
            r#"project($1; select($3.value = "red" or not ($1.a.b = "x" and $2.c = "y"), class Part))"#,
            r#"union(diff(class A, class B), intersect(empty(A), rows("m"; A'; ("o1"); ("o 2"))))"#,
            r#"semijoin(sjoin(r($1, $2), class A), rows("m"; A', B'))"#,
        ] {
            let parsed = parse_algebra_query(q).unwrap();
            assert_eq!(parse_algebra_query(&parsed.to_string()).unwrap(), parsed, "{q}");
        }
    }
}
