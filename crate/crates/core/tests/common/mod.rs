//! Shared test helpers: random program generation and independent
//! reference evaluators.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use softchase_core::model::{NullId, Substitution};
use softchase_core::{Atom, Fact, Instance, Literal, Program, Term, Value, Var};

const PREDS: &[(&str, usize)] = &[("e", 2), ("f", 1), ("a", 2), ("b", 1), ("c", 2)];
const IDB: &[(&str, usize)] = &[("a", 2), ("b", 1), ("c", 2)];
const VARS: &[&str] = &["X", "Y", "Z"];
const CONSTS: &[&str] = &["k1", "k2", "k3"];

/// A random positive program over `e/2`, `f/1` (extensional) and `a/2`,
/// `b/1`, `c/2`; with `existentials`, some heads carry a fresh variable.
pub fn random_program<R: Rng>(rng: &mut R, existentials: bool) -> String {
    let n = rng.random_range(1..=4);
    let mut out = String::new();
    for _ in 0..n {
        let len = rng.random_range(1..=3);
        let mut body = Vec::new();
        let mut vars = BTreeSet::new();
        for _ in 0..len {
            let (p, ar) = *PREDS.choose(rng).unwrap();
            let args: Vec<&str> = (0..ar).map(|_| *VARS.choose(rng).unwrap()).collect();
            vars.extend(args.iter().copied());
            body.push(format!("{p}({})", args.join(",")));
        }
        let vars: Vec<&str> = vars.into_iter().collect();
        let (h, ar) = *IDB.choose(rng).unwrap();
        let fresh = existentials && rng.random_bool(0.4);
        let mut args: Vec<&str> = (0..ar).map(|_| *vars.choose(rng).unwrap()).collect();
        if fresh {
            let i = rng.random_range(0..ar);
            args[i] = "V";
            out.push_str(&format!("{} -> exists V: {h}({}).\n", body.join(", "), args.join(",")));
        } else {
            out.push_str(&format!("{} -> {h}({}).\n", body.join(", "), args.join(",")));
        }
    }
    out
}

pub fn random_database<R: Rng>(rng: &mut R) -> Instance {
    let mut db = Instance::new();
    for _ in 0..rng.random_range(2..=6) {
        let x = *CONSTS.choose(rng).unwrap();
        let y = *CONSTS.choose(rng).unwrap();
        db.insert(Fact::new("e", vec![Value::sym(x), Value::sym(y)]));
    }
    for _ in 0..rng.random_range(1..=3) {
        db.insert(Fact::new("f", vec![Value::sym(CONSTS.choose(rng).unwrap())]));
    }
    db
}

fn match_atom(atom: &Atom, fact: &Fact, s: &Substitution) -> Option<Substitution> {
    if atom.pred != fact.pred || atom.terms.len() != fact.args.len() {
        return None;
    }
    let mut s = s.clone();
    for (t, v) in atom.terms.iter().zip(fact.args.iter()) {
        match t {
            Term::Val(c) if c != v => return None,
            Term::Val(_) => {}
            Term::Var(x) => match s.get(x) {
                Some(bound) if bound != v => return None,
                Some(_) => {}
                None => s.bind(x.clone(), v.clone()),
            },
        }
    }
    Some(s)
}

/// All substitutions matching the positive atoms against `facts`.
pub fn body_matches(atoms: &[&Atom], facts: &[Fact]) -> Vec<Substitution> {
    let mut out = vec![Substitution::new()];
    for atom in atoms {
        out = out
            .iter()
            .flat_map(|s| facts.iter().filter_map(move |f| match_atom(atom, f, s)))
            .collect();
    }
    out
}

fn positive_body(program: &Program, i: usize) -> Vec<&Atom> {
    program.rules[i]
        .body
        .iter()
        .map(|l| match l {
            Literal::Pos(a) => a,
            other => panic!("reference evaluators take positive bodies only, got {other}"),
        })
        .collect()
}

fn ground(atom: &Atom, s: &Substitution) -> Fact {
    s.apply(atom).expect("head variables bound")
}

/// Least fixpoint of a positive existential-free program, by naive
/// iteration.
pub fn naive_fixpoint(program: &Program, db: &Instance) -> BTreeSet<Fact> {
    let mut facts: BTreeSet<Fact> = db.facts().collect();
    loop {
        let list: Vec<Fact> = facts.iter().cloned().collect();
        let mut grew = false;
        for (i, rule) in program.rules.iter().enumerate() {
            for s in body_matches(&positive_body(program, i), &list) {
                for h in &rule.head {
                    grew |= facts.insert(ground(h, &s));
                }
            }
        }
        if !grew {
            return facts;
        }
    }
}

/// Oblivious chase for `depth` breadth-first rounds: every trigger fires
/// once, existentials get fresh nulls.
pub fn oblivious_chase(program: &Program, db: &Instance, depth: usize) -> Vec<Fact> {
    let mut facts: Vec<Fact> = db.facts().collect();
    let mut seen: BTreeSet<Fact> = facts.iter().cloned().collect();
    let mut fired: BTreeSet<(usize, Substitution)> = BTreeSet::new();
    let mut next_null = 1u64 << 62;
    for _ in 0..depth {
        let mut new = Vec::new();
        for (i, rule) in program.rules.iter().enumerate() {
            for s in body_matches(&positive_body(program, i), &facts) {
                if !fired.insert((i, s.clone())) {
                    continue;
                }
                let mut full = s.clone();
                for v in &rule.existentials {
                    full.bind(v.clone(), Value::Null(NullId(next_null)));
                    next_null += 1;
                }
                for h in &rule.head {
                    let f = ground(h, &full);
                    if seen.insert(f.clone()) {
                        new.push(f);
                    }
                }
            }
        }
        if new.is_empty() {
            break;
        }
        facts.extend(new);
    }
    facts
}

/// Facts of `inst` keyed by multiplicity of their null-insensitive shape.
pub fn shape_counts(facts: impl IntoIterator<Item = Fact>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for f in facts {
        let mut names: BTreeMap<NullId, usize> = BTreeMap::new();
        let args: Vec<String> = f
            .args
            .iter()
            .map(|v| match v {
                Value::Null(n) => {
                    let k = names.len();
                    format!("_{}", names.entry(*n).or_insert(k))
                }
                other => other.to_string(),
            })
            .collect();
        *out.entry(format!("{}({})", f.pred, args.join(","))).or_insert(0) += 1;
    }
    out
}

pub fn var(name: &str) -> Var {
    Var::new(name)
}
