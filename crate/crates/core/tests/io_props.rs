mod common;

use std::fs;
use std::path::PathBuf;

use common::*;
use metalevel::algebra::eval_algebra;
use metalevel::graphdb::check_description_binding;
use metalevel::io::{
    binding_to_text, constraints_to_text, graph_to_xml, instance_to_text, load_binding, load_constraints,
    load_graph_xml, load_schema_instance, parse_algebra_query, parse_instance, parse_schema, schema_to_text, IoError,
};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn graph_xml_round_trips(seed in any::<u64>(), acyclic in any::<bool>()) {
        let g = random_graph(&mut rng(seed), 12, acyclic, true);
        prop_assert_eq!(load_graph_xml(&graph_to_xml(&g)).unwrap(), g);
    }

    #[test]
    fn bindings_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_graph(&mut r, 8, false, true);
        let (_, mu) = bound_instance(&mut r, &m, 20);
        prop_assert_eq!(load_binding(&binding_to_text(&mu)).unwrap(), mu);
    }

    #[test]
    fn schema_and_instance_round_trip(seed in any::<u64>(), relations_only in any::<bool>()) {
        let l = layered(&mut rng(seed), relations_only);
        let s = parse_schema(&schema_to_text(&l.schema)).unwrap();
        let i = parse_instance(&instance_to_text(&l.inst)).unwrap();
        // Empty relations have no textual form.
        let mut expected = l.inst.clone();
        expected.relations.retain(|_, rows| !rows.is_empty());
        prop_assert_eq!(&s, &l.schema);
        prop_assert_eq!(&i, &expected);
    }

    #[test]
    fn constraints_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let l = layered(&mut r, false);
        let ics: Vec<_> = (0..4).map(|k| random_constraint(&mut r, &l, &format!("k{k}"))).collect();
        prop_assert_eq!(load_constraints(&constraints_to_text(&ics)).unwrap(), ics);
    }

    #[test]
    fn algebra_queries_round_trip(seed in any::<u64>(), conjunctive in any::<bool>()) {
        let mut r = rng(seed);
        let l = layered(&mut r, false);
        let (q, _) = random_dq(&mut r, &l, 4, conjunctive);
        prop_assert_eq!(parse_algebra_query(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn garbage_never_panics(text in "[a-z():=,.\"<>{}# \n-]{0,60}") {
        let _ = parse_schema(&text);
        let _ = parse_instance(&text);
        let _ = load_constraints(&text);
        let _ = parse_algebra_query(&text);
        let _ = load_binding(&text);
    }
}

#[test]
fn car_fixtures_load_and_validate() {
    let (s, i) = load_schema_instance(&fixture("car.schema"), &fixture("car.instance")).unwrap();
    assert_eq!(load_constraints(&fixture("car.constraints")).unwrap().len(), 2);
    for f in ["q1prime.alg", "q1.alg", "q2.alg"] {
        let q = parse_algebra_query(&fixture(f)).unwrap();
        eval_algebra(&q, &s, &i).unwrap();
    }
    let (s, i) = load_schema_instance(&fixture("diff.schema"), &fixture("diff.instance")).unwrap();
    eval_algebra(&parse_algebra_query(&fixture("diff.alg")).unwrap(), &s, &i).unwrap();
}

#[test]
fn car_graphs_load() {
    let m = load_graph_xml(&fixture("meta_car.xml")).unwrap();
    let tags = |t: &str| m.node_ids().filter(|n| m.label(n).unwrap().tag == t).count();
    assert_eq!(tags("part"), 4);
    assert_eq!(tags("prop"), 3);
    let i = load_graph_xml(&fixture("instance_car.xml")).unwrap();
    let mu = load_binding(&fixture("instance_car.mu")).unwrap();
    assert_eq!(mu.len(), i.node_count());
    assert!(check_description_binding(&i, &m, &mu, true).is_empty());
}

#[test]
fn invalid_inputs_are_rejected() {
    let cyc = "class A: D\nclass B: D\nclass C: D\ndesc A -> B\ndesc B -> C\ndesc C -> A\n";
    assert!(matches!(load_schema_instance(cyc, ""), Err(IoError::Invalid(_))));

    let schema = fixture("car.schema");
    let no_mu: String = fixture("car.instance")
        .lines()
        .filter(|l| !l.starts_with("mu"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(matches!(
        load_schema_instance(&schema, &no_mu),
        Err(IoError::Invalid(_))
    ));

    assert!(load_constraints("(Z.category = \"car\") :- Part'(X) .").is_err());
    assert!(matches!(
        load_graph_xml("<a id=\"x\"><b id=\"x\"/></a>"),
        Err(IoError::DuplicateId(_))
    ));
    assert!(matches!(
        load_graph_xml("<a><b ref=\"#nope\"/></a>"),
        Err(IoError::DanglingRef(_))
    ));
}
