mod common;

use std::collections::BTreeSet;

use common::*;
use metalevel::model::{
    class_extension, conforms, eval_path_expression, eval_relationship, path_target_type, subtype, validate_instance,
    ClassHierarchy, Instance, OValue, PathExpr, Schema, TypeExpr,
};
use rand::Rng;

#[test]
fn valid_instances_conform() {
    let mut r = rng(11);
    for _ in 0..200 {
        let l = layered(&mut r, false);
        let h = &l.schema.hierarchy;
        for (o, v) in &l.inst.values {
            let class = l.inst.class_of(o).unwrap();
            assert!(conforms(v, h.type_of(class).unwrap(), &l.inst, h), "{o}: {v}");
        }
    }
}

fn compose(a: &BTreeSet<(OValue, OValue)>, b: &BTreeSet<(OValue, OValue)>) -> BTreeSet<(OValue, OValue)> {
    let mut out = BTreeSet::new();
    for (x, y) in a {
        for (y2, z) in b {
            if y == y2 {
                out.insert((x.clone(), z.clone()));
            }
        }
    }
    out
}

#[test]
fn path_extension_is_composition_of_steps() {
    let mut r = rng(12);
    let mut checked = 0;
    for _ in 0..300 {
        let l = layered(&mut r, false);
        let s = &l.schema;
        if !s.relationships.contains_key("nx") {
            continue;
        }
        let mut paths = vec![vec!["nx"], vec!["nx", "v"]];
        if path_target_type(&PathExpr::new("C0", ["nx"]), &s.hierarchy).unwrap() == &TypeExpr::class("C0") {
            paths.push(vec!["nx", "nx"]);
            paths.push(vec!["nx", "nx", "v"]);
        }
        for attrs in paths {
            let whole = eval_path_expression(&PathExpr::new("C0", attrs.clone()), s, &l.inst).unwrap();
            let mut class = "C0".to_string();
            let mut acc: Option<BTreeSet<(OValue, OValue)>> = None;
            for a in &attrs {
                let step = PathExpr::new(class.clone(), [*a]);
                let ext = eval_path_expression(&step, s, &l.inst).unwrap();
                acc = Some(match acc {
                    None => ext,
                    Some(prev) => compose(&prev, &ext),
                });
                if let TypeExpr::Class(c) = path_target_type(&step, &s.hierarchy).unwrap() {
                    class = c.clone();
                }
            }
            assert_eq!(whole, acc.unwrap(), "C0.{}", attrs.join("."));
            checked += 1;
        }
    }
    assert!(checked > 100);
}

fn hierarchy_schema() -> Schema {
    let mut h = ClassHierarchy::new();
    let d = || TypeExpr::D;
    h.add_class("A", TypeExpr::tuple([("x", d())]));
    h.add_class("B", TypeExpr::tuple([("x", d()), ("y", d())]));
    h.add_class("C", TypeExpr::tuple([("x", d()), ("y", d()), ("z", d())]));
    h.add_class("E", TypeExpr::tuple([("x", d()), ("w", d())]));
    h.add_class("F", TypeExpr::tuple([("r", TypeExpr::class("A"))]));
    h.add_subclass("B", "A");
    h.add_subclass("C", "B");
    h.add_subclass("E", "A");
    Schema {
        hierarchy: h,
        ..Schema::default()
    }
}

#[test]
fn class_extension_is_monotone() {
    let s = hierarchy_schema();
    let h = &s.hierarchy;
    let classes = ["A", "B", "C", "E"];
    let mut r = rng(13);
    for _ in 0..200 {
        let mut inst = Instance::default();
        for n in 0..r.gen_range(0..12) {
            let class = classes[r.gen_range(0..classes.len())];
            let fields = ["x", "y", "z", "w"].map(|a| (a, OValue::constant("v")));
            inst.add_object(format!("o{n}"), class, OValue::tuple(fields));
        }
        assert!(validate_instance(&s, &inst).is_empty());
        for sub in classes {
            for sup in classes {
                if h.is_subclass(sub, sup) {
                    let a = class_extension(sub, &inst, h).unwrap();
                    let b = class_extension(sup, &inst, h).unwrap();
                    assert!(a.is_subset(&b), "{sub} <= {sup}");
                }
            }
        }
    }
}

#[test]
fn subtype_is_a_partial_order() {
    let s = hierarchy_schema();
    let h = &s.hierarchy;
    let c = TypeExpr::class;
    let types = [
        TypeExpr::D,
        c("A"),
        c("B"),
        c("C"),
        c("E"),
        c("F"),
        TypeExpr::set_of(c("A")),
        TypeExpr::set_of(c("C")),
        TypeExpr::tuple([("x", TypeExpr::D)]),
        TypeExpr::tuple([("x", TypeExpr::D), ("y", TypeExpr::D)]),
        TypeExpr::tuple([("r", c("A"))]),
        TypeExpr::tuple([("r", c("B")), ("x", TypeExpr::D)]),
        TypeExpr::set_of(TypeExpr::tuple([("r", c("C"))])),
        TypeExpr::tuple::<&str>([]),
    ];
    let le = |a: &TypeExpr, b: &TypeExpr| subtype(a, b, h).unwrap();
    for a in &types {
        assert!(le(a, a), "{a}");
        for b in &types {
            if le(a, b) && le(b, a) {
                assert_eq!(a, b);
            }
            for t in &types {
                if le(a, b) && le(b, t) {
                    assert!(le(a, t), "{a} <= {b} <= {t}");
                }
            }
        }
    }
    assert!(subtype(&c("Nope"), &TypeExpr::D, h).is_err());
}

#[test]
fn hom_pairs_are_preserved_by_mu() {
    let mut r = rng(14);
    for _ in 0..300 {
        let l = layered(&mut r, false);
        for (meta, rel) in &l.schema.description.hom {
            let lower = eval_relationship(rel, &l.schema, &l.inst).unwrap();
            let upper = eval_relationship(meta, &l.schema, &l.inst).unwrap();
            for (a, b) in &lower {
                let pair = (l.inst.mu(a).unwrap().clone(), l.inst.mu(b).unwrap().clone());
                assert!(upper.contains(&pair), "{rel}({a}, {b})");
            }
        }
    }
}
