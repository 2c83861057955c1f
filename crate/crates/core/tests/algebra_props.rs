mod common;

use common::*;
use metalevel::algebra::{
    eval_algebra, m_inverse, m_rewrite, mu_lift, optimize_with_meta, Cond, OptimizeMode, Query, VerdictKind,
};
use metalevel::chase::constraint_holds;
use rand::Rng;

/// Wraps a described query in an instance-level selection half of the time,
/// so the optimizer also has to find described subexpressions.
fn maybe_wrap(r: &mut rand_chacha::ChaCha8Rng, q: Query) -> Query {
    if r.gen_bool(0.5) {
        let v = if r.gen_bool(0.5) { "x" } else { "y" };
        Query::select(Cond::eq(1, ["v"], v), q)
    } else {
        q
    }
}

#[test]
fn lifted_answers_are_contained_in_description_query() {
    let mut r = rng(21);
    for t in 0..300 {
        let l = layered(&mut r, false);
        let (q, _) = random_dq(&mut r, &l, 4, false);
        let answers = eval_algebra(&q, &l.schema, &l.inst).unwrap();
        let lifted = mu_lift(&answers, &l.schema, &l.inst).unwrap();
        let meta = eval_algebra(&m_rewrite(&q, &l.schema).unwrap(), &l.schema, &l.inst).unwrap();
        assert!(lifted.is_subset(&meta), "trial {t}: {q}");
    }
}

#[test]
fn rewrite_preserves_size_and_inverts() {
    let mut r = rng(22);
    for _ in 0..300 {
        let l = layered(&mut r, false);
        let (q, _) = random_dq(&mut r, &l, 4, false);
        let m = m_rewrite(&q, &l.schema).unwrap();
        assert_eq!(m.size(), q.size(), "{q}");
        assert_eq!(m_inverse(&m, &l.schema).unwrap(), q, "{q}");
    }
}

#[test]
fn instance_mode_is_sound_and_idempotent() {
    let mut r = rng(23);
    let mut restricted = 0;
    for t in 0..300 {
        let l = layered(&mut r, false);
        let (q, _) = random_dq(&mut r, &l, 4, false);
        let q = maybe_wrap(&mut r, q);
        let once = optimize_with_meta(&q, &l.schema, &l.inst, "meta", OptimizeMode::Instance, &[]).unwrap();
        assert_eq!(
            eval_algebra(&once.query, &l.schema, &l.inst).unwrap(),
            eval_algebra(&q, &l.schema, &l.inst).unwrap(),
            "trial {t}: {q}\n=> {}",
            once.query
        );
        let twice = optimize_with_meta(&once.query, &l.schema, &l.inst, "meta", OptimizeMode::Instance, &[]).unwrap();
        assert_eq!(twice.query, once.query, "trial {t}");
        assert!(twice.verdicts.is_empty(), "trial {t}: {:?}", twice.verdicts);
        restricted += once
            .verdicts
            .iter()
            .filter(|v| matches!(v.kind, VerdictKind::Restricted { .. }))
            .count();
    }
    assert!(restricted > 50);
}

#[test]
fn constraint_mode_is_sound_and_idempotent() {
    let mut r = rng(24);
    let (mut introduced, mut trials) = (0, 0);
    while trials < 300 {
        let l = layered(&mut r, false);
        let ics: Vec<_> = (0..10)
            .map(|k| random_constraint(&mut r, &l, &format!("c{k}")))
            .filter(|ic| constraint_holds(ic, &l.schema, &l.inst).unwrap())
            .collect();
        if ics.is_empty() {
            continue;
        }
        trials += 1;
        let (q, _) = random_dq(&mut r, &l, 4, true);
        let q = maybe_wrap(&mut r, q);
        let once = optimize_with_meta(&q, &l.schema, &l.inst, "meta", OptimizeMode::Constraint, &ics).unwrap();
        assert_eq!(
            eval_algebra(&once.query, &l.schema, &l.inst).unwrap(),
            eval_algebra(&q, &l.schema, &l.inst).unwrap(),
            "{q}\n=> {}",
            once.query
        );
        let twice =
            optimize_with_meta(&once.query, &l.schema, &l.inst, "meta", OptimizeMode::Constraint, &ics).unwrap();
        assert_eq!(twice.query, once.query, "{q}");
        assert!(twice
            .verdicts
            .iter()
            .all(|v| !matches!(v.kind, VerdictKind::RestrictionIntroduced(_))));
        introduced += once
            .verdicts
            .iter()
            .filter(|v| matches!(v.kind, VerdictKind::RestrictionIntroduced(_)))
            .count();
    }
    assert!(introduced > 20, "{introduced}");
}
