//! Query optimization with description meta-data.
//!
//! Objects of a *described* class each have exactly one meta-object (their
//! description), and relationships between meta-objects mirror the
//! relationships between the objects they describe. This crate uses that
//! structure in two settings:
//!
//! - **Algebraic queries** over an object model ([`model`], [`algebra`],
//!   [`chase`]): every described query has a description query on the
//!   meta-level whose result contains the meta-data of every answer. The
//!   description query can be evaluated on the (small) meta-level to detect
//!   emptiness or to restrict the original query, and implication integrity
//!   constraints can be chased over the merged query to introduce new
//!   restrictions.
//! - **Regular path queries** over semistructured graphs ([`graphdb`],
//!   [`pathquery`], [`automata`]): a meta-level graph that simulates an
//!   instance graph is used to prune a path query (including its nested
//!   conditions) through a condition-aware product automaton.
//!
//! File formats live in [`io`].

pub mod algebra;
pub mod automata;
pub mod chase;
pub mod graphdb;
pub mod io;
pub mod model;
pub mod pathquery;

/// Double-quotes a string, escaping `"` and `\`.
pub(crate) fn quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Returns true if `s` can be written as a bare identifier in every text
/// format of this crate.
pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => {}
        _ => return false,
    }
    chars.all(is_ident_continue)
}

pub(crate) fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '-'
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}
