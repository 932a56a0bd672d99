//! Static checks: affected positions, variable classification, wardedness,
//! stratification of negation and aggregation, and query rewriting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use crate::model::{Atom, Literal, Pred, Program, Rule, RuleId, SourceSpan, Term, Var, Weight};
use crate::parser::Query;

pub mod codes {
    pub const NO_WARD: &str = "W001";
    pub const WARD_SHARES_HARMFUL: &str = "W002";
    pub const NEGATIVE_CYCLE: &str = "N001";
    pub const AGGREGATE_CYCLE: &str = "N002";
    pub const NEGATIVE_INFINITE_WEIGHT: &str = "A001";
    pub const UNSAFE_NEGATION: &str = "A002";
    pub const UNSAFE_FILTER: &str = "A003";
    pub const UNSAFE_AGGREGATE: &str = "A004";
    pub const NON_WARDED_QUERY: &str = "Q001";
    pub const UNSAFE_QUERY: &str = "Q002";
}

/// A rule-level problem found by one of the checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub rule: Option<RuleId>,
    pub message: String,
    pub span: SourceSpan,
}

impl Violation {
    fn at(code: &'static str, rule: &Rule, message: String) -> Violation {
        Violation {
            code,
            rule: Some(rule.id),
            message,
            span: rule.span,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            Some(r) => write!(f, "{} {} at {}: {}", self.code, r, self.span, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

/// A predicate argument position, `index` 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Position {
    pub pred: Pred,
    pub index: usize,
}

impl Position {
    pub fn new(pred: &str, index: usize) -> Position {
        Position {
            pred: Pred::new(pred),
            index,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.pred, self.index)
    }
}

pub type PositionSet = BTreeSet<Position>;

fn positions_of<'a>(atom: &'a Atom, var: &'a Var) -> impl Iterator<Item = Position> + 'a {
    atom.terms.iter().enumerate().filter_map(move |(i, t)| match t {
        Term::Var(v) if v == var => Some(Position {
            pred: atom.pred.clone(),
            index: i + 1,
        }),
        _ => None,
    })
}

/// True when `var` occurs in some positive body atom and only at affected
/// positions there.
fn only_affected(rule: &Rule, var: &Var, affected: &PositionSet) -> bool {
    let mut seen = false;
    for atom in rule.positive_atoms() {
        for p in positions_of(atom, var) {
            if !affected.contains(&p) {
                return false;
            }
            seen = true;
        }
    }
    seen
}

/// Least set of positions that may hold a labeled null: head positions of
/// existential variables, closed under propagation of variables that occur
/// only at affected body positions.
pub fn affected_positions(program: &Program) -> PositionSet {
    let mut affected = PositionSet::new();
    for rule in &program.rules {
        for atom in &rule.head {
            for z in &rule.existentials {
                affected.extend(positions_of(atom, z));
            }
        }
    }
    loop {
        let mut added = false;
        for rule in &program.rules {
            for x in rule.frontier() {
                if !only_affected(rule, &x, &affected) {
                    continue;
                }
                for atom in &rule.head {
                    for p in positions_of(atom, &x) {
                        added |= affected.insert(p);
                    }
                }
            }
        }
        if !added {
            return affected;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarClass {
    Harmless,
    Harmful,
    Dangerous,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleClassification {
    pub rule: RuleId,
    pub vars: BTreeMap<Var, VarClass>,
    /// Index into the rule body of the ward, when the rule has dangerous
    /// variables and a qualifying atom exists.
    pub ward: Option<usize>,
}

impl RuleClassification {
    pub fn dangerous(&self) -> impl Iterator<Item = &Var> {
        self.vars
            .iter()
            .filter(|(_, c)| **c == VarClass::Dangerous)
            .map(|(v, _)| v)
    }

    pub fn harmful(&self, v: &Var) -> bool {
        matches!(self.vars.get(v), Some(VarClass::Harmful | VarClass::Dangerous))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariableClassification {
    pub affected: PositionSet,
    pub rules: Vec<RuleClassification>,
}

/// Classifies every body variable of every rule and picks wards.
pub fn classify(program: &Program, affected: &PositionSet) -> VariableClassification {
    let rules = program
        .rules
        .iter()
        .map(|rule| {
            let head = rule.head_vars();
            let mut vars = BTreeMap::new();
            for v in rule.bound_vars() {
                let class = if !only_affected(rule, &v, affected) {
                    VarClass::Harmless
                } else if head.contains(&v) {
                    VarClass::Dangerous
                } else {
                    VarClass::Harmful
                };
                vars.insert(v, class);
            }
            let mut rc = RuleClassification {
                rule: rule.id,
                vars,
                ward: None,
            };
            rc.ward = find_ward(rule, &rc);
            rc
        })
        .collect();
    VariableClassification {
        affected: affected.clone(),
        rules,
    }
}

fn find_ward(rule: &Rule, rc: &RuleClassification) -> Option<usize> {
    let dangerous: Vec<&Var> = rc.dangerous().collect();
    if dangerous.is_empty() {
        return None;
    }
    rule.body.iter().enumerate().find_map(|(i, lit)| {
        let Literal::Pos(atom) = lit else { return None };
        let vars: BTreeSet<&Var> = atom.vars().collect();
        if !dangerous.iter().all(|d| vars.contains(d)) {
            return None;
        }
        if shared_harmful(rule, i, atom, rc).is_some() {
            return None;
        }
        Some(i)
    })
}

/// A harmful variable the atom at body index `idx` shares with another body
/// atom, if any.
fn shared_harmful<'a>(rule: &'a Rule, idx: usize, atom: &'a Atom, rc: &RuleClassification) -> Option<&'a Var> {
    let others: BTreeSet<&Var> = rule
        .body
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .flat_map(|(_, l)| match l {
            Literal::Pos(a) | Literal::Neg(a) => a.vars().collect::<Vec<_>>(),
            _ => Vec::new(),
        })
        .collect();
    atom.vars().find(|v| others.contains(v) && rc.harmful(v))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WardedVerdict {
    pub warded: bool,
    pub classification: VariableClassification,
    pub violations: Vec<Violation>,
}

/// Checks that every rule with dangerous variables has a ward: one positive
/// body atom holding all of them and sharing only harmless variables with
/// the rest of the body.
pub fn check_warded(program: &Program) -> WardedVerdict {
    let affected = affected_positions(program);
    let classification = classify(program, &affected);
    let mut violations = Vec::new();
    for (rule, rc) in program.rules.iter().zip(&classification.rules) {
        let dangerous: Vec<&Var> = rc.dangerous().collect();
        if dangerous.is_empty() || rc.ward.is_some() {
            continue;
        }
        let holders: Vec<(usize, &Atom)> = rule
            .body
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Literal::Pos(a) => Some((i, a)),
                _ => None,
            })
            .filter(|(_, a)| {
                let vars: BTreeSet<&Var> = a.vars().collect();
                dangerous.iter().all(|d| vars.contains(d))
            })
            .collect();
        let names = dangerous.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        match holders.first() {
            None => violations.push(Violation::at(
                codes::NO_WARD,
                rule,
                format!("dangerous variables {{{names}}} do not occur together in a single body atom"),
            )),
            Some(&(i, atom)) => {
                let v = shared_harmful(rule, i, atom, rc).expect("ward rejected for sharing");
                violations.push(Violation::at(
                    codes::WARD_SHARES_HARMFUL,
                    rule,
                    format!("candidate ward {atom} shares harmful variable {v} with another body atom"),
                ));
            }
        }
    }
    WardedVerdict {
        warded: violations.is_empty(),
        classification,
        violations,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Pos,
    Neg,
    Agg,
}

/// Stratum per predicate and per rule; rules in stratum `k` are evaluated
/// after every rule of lower strata reached its fixpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stratification {
    pub preds: BTreeMap<Pred, usize>,
    pub rules: Vec<usize>,
    pub count: usize,
}

impl Stratification {
    pub fn of_rule(&self, id: RuleId) -> usize {
        self.rules[id.0]
    }

    /// Rule ids grouped by stratum, in evaluation order.
    pub fn layers(&self) -> Vec<Vec<RuleId>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &s) in self.rules.iter().enumerate() {
            out[s].push(RuleId(i));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StratifyOptions {
    /// Treat aggregate dependencies as positive, so an aggregate is evaluated
    /// over whatever facts have been generated so far.
    pub relax_aggregates: bool,
}

/// Labeled predicate dependency edges `(body pred, head pred, kind, rule)`.
pub fn dependency_edges(program: &Program, opts: StratifyOptions) -> Vec<(Pred, Pred, EdgeKind, RuleId)> {
    let mut edges = Vec::new();
    for rule in &program.rules {
        let operand = rule.aggregate().map(|a| a.operand.clone());
        for h in &rule.head {
            for lit in &rule.body {
                let (atom, kind) = match lit {
                    Literal::Pos(a) => {
                        let agg = operand.as_ref().is_some_and(|o| a.vars().any(|v| v == o));
                        let kind = if agg && !opts.relax_aggregates {
                            EdgeKind::Agg
                        } else {
                            EdgeKind::Pos
                        };
                        (a, kind)
                    }
                    Literal::Neg(a) => (a, EdgeKind::Neg),
                    _ => continue,
                };
                edges.push((atom.pred.clone(), h.pred.clone(), kind, rule.id));
            }
            for other in &rule.head {
                if other.pred != h.pred {
                    edges.push((other.pred.clone(), h.pred.clone(), EdgeKind::Pos, rule.id));
                }
            }
        }
    }
    edges
}

pub fn check_stratified(program: &Program) -> Result<Stratification, Vec<Violation>> {
    check_stratified_with(program, StratifyOptions::default())
}

/// Builds the dependency graph and rejects it when a negative or aggregate
/// edge lies on a cycle; otherwise assigns each predicate the smallest
/// stratum consistent with its edges.
pub fn check_stratified_with(program: &Program, opts: StratifyOptions) -> Result<Stratification, Vec<Violation>> {
    let mut graph: DiGraph<Pred, EdgeKind> = DiGraph::new();
    let mut index: HashMap<Pred, NodeIndex> = HashMap::new();
    for pred in program.decls.keys() {
        index.insert(pred.clone(), graph.add_node(pred.clone()));
    }
    let edges = dependency_edges(program, opts);
    for (from, to, kind, _) in &edges {
        graph.add_edge(index[from], index[to], *kind);
    }
    let sccs = tarjan_scc(&graph);
    let mut comp = vec![0usize; graph.node_count()];
    for (c, scc) in sccs.iter().enumerate() {
        for n in scc {
            comp[n.index()] = c;
        }
    }
    let mut violations = Vec::new();
    let mut reported = BTreeSet::new();
    for (from, to, kind, rule) in &edges {
        if *kind == EdgeKind::Pos || comp[index[from].index()] != comp[index[to].index()] {
            continue;
        }
        if !reported.insert((*rule, from.clone())) {
            continue;
        }
        let (code, what) = match kind {
            EdgeKind::Neg => (codes::NEGATIVE_CYCLE, "negation"),
            _ => (codes::AGGREGATE_CYCLE, "aggregation"),
        };
        violations.push(Violation::at(
            code,
            program.rule(*rule),
            format!("{what} over {from} lies on a dependency cycle through {to}"),
        ));
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    // tarjan_scc yields components in reverse topological order.
    let mut level = vec![0usize; sccs.len()];
    for c in (0..sccs.len()).rev() {
        for n in &sccs[c] {
            for e in graph.edges_directed(*n, petgraph::Direction::Outgoing) {
                use petgraph::visit::EdgeRef;
                let t = comp[e.target().index()];
                if t == c {
                    continue;
                }
                let step = usize::from(*e.weight() != EdgeKind::Pos);
                level[t] = level[t].max(level[c] + step);
            }
        }
    }
    let preds: BTreeMap<Pred, usize> = index.iter().map(|(p, n)| (p.clone(), level[comp[n.index()]])).collect();
    let rules: Vec<usize> = program
        .rules
        .iter()
        .map(|r| r.head.iter().map(|h| preds[&h.pred]).max().unwrap_or(0))
        .collect();
    let count = rules.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Stratification { preds, rules, count })
}

/// Safety and weight checks that the chase relies on.
pub fn check_rules(program: &Program) -> Vec<Violation> {
    let mut out = Vec::new();
    for rule in &program.rules {
        if rule.weight.is_negative_infinite() {
            out.push(Violation::at(
                codes::NEGATIVE_INFINITE_WEIGHT,
                rule,
                "weight -inf is not supported".into(),
            ));
        }
        let positive = rule.positive_vars();
        let bound = rule.bound_vars();
        for atom in rule.negated_atoms() {
            if let Some(v) = atom.vars().find(|v| !positive.contains(*v)) {
                out.push(Violation::at(
                    codes::UNSAFE_NEGATION,
                    rule,
                    format!("variable {v} of negated atom {atom} is not bound by a positive atom"),
                ));
            }
        }
        for cond in rule.filters() {
            if let Some(v) = cond.vars().into_iter().find(|v| !bound.contains(v)) {
                out.push(Violation::at(
                    codes::UNSAFE_FILTER,
                    rule,
                    format!("variable {v} of condition {cond} is not bound by the body"),
                ));
            }
        }
        if let Some(agg) = rule.aggregate() {
            if !positive.contains(&agg.operand) {
                out.push(Violation::at(
                    codes::UNSAFE_AGGREGATE,
                    rule,
                    format!("aggregate operand {} is not bound by a positive atom", agg.operand),
                ));
            }
            if rule.existentials.contains(&agg.result) {
                out.push(Violation::at(
                    codes::UNSAFE_AGGREGATE,
                    rule,
                    format!("aggregate result {} must not be existential", agg.result),
                ));
            }
        }
    }
    out
}

/// Everything the chase needs from a successful analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    pub warded: WardedVerdict,
    pub strata: Stratification,
}

/// Runs every check; the program is accepted iff no violation is reported.
pub fn analyze(program: &Program) -> Result<Analysis, Vec<Violation>> {
    analyze_with(program, StratifyOptions::default())
}

pub fn analyze_with(program: &Program, opts: StratifyOptions) -> Result<Analysis, Vec<Violation>> {
    let mut violations = check_rules(program);
    let warded = check_warded(program);
    violations.extend(warded.violations.iter().cloned());
    let strata = match check_stratified_with(program, opts) {
        Ok(s) => Some(s),
        Err(v) => {
            violations.extend(v);
            None
        }
    };
    match strata {
        Some(strata) if violations.is_empty() => Ok(Analysis { warded, strata }),
        _ => Err(violations),
    }
}

fn fresh_pred(program: &Program, base: &str) -> Pred {
    let candidate = Pred::new(&format!("ans_{base}"));
    if !program.decls.contains_key(&candidate) {
        return candidate;
    }
    (1..)
        .map(|i| Pred::new(&format!("ans_{base}_{i}")))
        .find(|p| !program.decls.contains_key(p))
        .expect("unbounded search")
}

/// Turns a conjunctive query into an extra hard rule over a fresh predicate
/// and returns the augmented program with the predicate to ask for.
pub fn rewrite_query(program: &Program, query: &Query) -> Result<(Program, Pred), Vec<Violation>> {
    let (head, body) = match query {
        Query::Atomic(p) => return Ok((program.clone(), p.clone())),
        Query::Conjunctive { head, body } => (head, body),
    };
    let pred = fresh_pred(program, head.pred.name());
    let mut rule = Rule::new(
        body.clone(),
        vec![Atom::new(pred.name(), head.terms.clone())],
        Weight::HARD,
    );
    let violation = |code, message: String| Violation {
        code,
        rule: None,
        message,
        span: SourceSpan::default(),
    };
    if let Some(v) = rule.existentials.iter().next() {
        return Err(vec![violation(
            codes::UNSAFE_QUERY,
            format!("answer variable {v} does not occur in the query body"),
        )]);
    }
    rule.span = SourceSpan::default();
    let mut augmented = program.clone();
    augmented
        .push(rule)
        .map_err(|e| vec![violation(codes::UNSAFE_QUERY, e.to_string())])?;
    let id = RuleId(augmented.rules.len() - 1);
    let mut errs = check_rules(&augmented);
    errs.retain(|v| v.rule == Some(id));
    if !errs.is_empty() {
        return Err(errs);
    }
    let verdict = check_warded(&augmented);
    if let Some(v) = verdict.violations.iter().find(|v| v.rule == Some(id)) {
        return Err(vec![violation(
            codes::NON_WARDED_QUERY,
            format!("query is not warded: {}", v.message),
        )]);
    }
    Ok((augmented, pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_query};

    const MOTHER: &str = "person(X) -> exists Z: hasMother(X,Z).\nhasMother(X,Y) -> person(Y).";

    fn prog(src: &str) -> Program {
        parse_program(src).unwrap()
    }

    #[test]
    fn mother_affected_positions_and_wards() {
        let p = prog(MOTHER);
        let aff = affected_positions(&p);
        // X of the first rule propagates person[1] into hasmother[1].
        let want: PositionSet = [
            Position::new("hasmother", 1),
            Position::new("hasmother", 2),
            Position::new("person", 1),
        ]
        .into();
        assert_eq!(aff, want);
        let v = check_warded(&p);
        assert!(v.warded);
        assert_eq!(v.classification.rules[0].ward, Some(0));
        assert_eq!(v.classification.rules[1].ward, Some(0));
    }

    #[test]
    fn datalog_has_no_affected_positions() {
        let p = prog("e(X,Y) -> t(X,Y).\nt(X,Y), e(Y,Z) -> t(X,Z).");
        assert!(affected_positions(&p).is_empty());
        assert!(check_warded(&p).warded);
    }

    #[test]
    fn running_example_affected() {
        let p = prog(
            "exposure(X,Y), not lenderType(X1,Y1), contract(X,Y,Z) -> contract(Y,X,Z).\n\
             contract(X,Y,Z), exposure(X,W) -> lenderType(X,Y).\n\
             contract(X,Y,Z), exposure(Y,W) -> contract(Z,W,X).\n\
             lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).",
        );
        let want: PositionSet = [Position::new("guarantee", 3)].into();
        assert_eq!(affected_positions(&p), want);
    }

    #[test]
    fn dangerous_join_is_not_warded() {
        let p = prog("p(X) -> exists Z: e(X,Z).\np(X) -> exists Z: f(X,Z).\ne(X,Y), f(X2,Y) -> q(Y).");
        let want: PositionSet = [Position::new("e", 2), Position::new("f", 2), Position::new("q", 1)].into();
        assert_eq!(affected_positions(&p), want);
        let v = check_warded(&p);
        assert!(!v.warded);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].code, codes::WARD_SHARES_HARMFUL);
        assert_eq!(v.violations[0].rule, Some(RuleId(2)));
    }

    #[test]
    fn dangerous_vars_split_across_atoms() {
        let p = prog("p(X) -> exists Z: e(X,Z).\ne(X,Y), e(Y2,W) -> q(Y,W).");
        let v = check_warded(&p);
        assert_eq!(v.violations[0].code, codes::NO_WARD);
    }

    #[test]
    fn self_negation_is_rejected() {
        let err = check_stratified(&prog("p(X), not q(X) -> q(X).")).unwrap_err();
        assert_eq!(err[0].code, codes::NEGATIVE_CYCLE);
    }

    #[test]
    fn strata_respect_negation() {
        let p = prog(
            "copies(X,Z,F), copies(Z,Y,F) -> copies(X,Y,F).\n\
             copies(X,Y,F) -> doesCopy(Y,F).\n\
             provides(S,F,V), not doesCopy(S,F) -> value(F,V).",
        );
        let s = check_stratified(&p).unwrap();
        assert!(s.preds[&Pred::new("value")] > s.preds[&Pred::new("doescopy")]);
        assert_eq!(s.count, 2);
    }

    #[test]
    fn aggregate_cycle_and_relaxation() {
        let p = prog("t(X,Y,S), V = sum(S) -> t(X,X,V).");
        let err = check_stratified(&p).unwrap_err();
        assert_eq!(err[0].code, codes::AGGREGATE_CYCLE);
        let relaxed = check_stratified_with(&p, StratifyOptions { relax_aggregates: true });
        assert!(relaxed.is_ok());
    }

    #[test]
    fn rule_checks() {
        let p = prog("-inf :: p(X) -> q(X).\np(X), not r(Y) -> s(X).\np(X), Y > 1 -> t(X).");
        let codes_found: Vec<&str> = check_rules(&p).iter().map(|v| v.code).collect();
        assert_eq!(
            codes_found,
            [
                codes::NEGATIVE_INFINITE_WEIGHT,
                codes::UNSAFE_NEGATION,
                codes::UNSAFE_FILTER
            ]
        );
    }

    #[test]
    fn rewrite_atomic_and_conjunctive() {
        let p = prog("own(X,Y,S), S > 0.5 -> control(X,Y).");
        let (same, pred) = rewrite_query(&p, &parse_query("control(X,Y)").unwrap()).unwrap();
        assert_eq!(same, p);
        assert_eq!(pred, Pred::new("control"));
        let q = parse_query("q(X) <- own(X,Y,S), control(Y,X).").unwrap();
        let (aug, pred) = rewrite_query(&p, &q).unwrap();
        assert_eq!(pred, Pred::new("ans_q"));
        assert_eq!(aug.rules.len(), 2);
        assert!(check_warded(&aug).warded);
    }

    #[test]
    fn rewrite_rejects_harmful_join() {
        let p = prog("p(X) -> exists Z: e(X,Z).\np(X) -> exists Z: f(X,Z).");
        let q = parse_query("q(Y) <- e(X,Y), f(X2,Y).").unwrap();
        let err = rewrite_query(&p, &q).unwrap_err();
        assert_eq!(err[0].code, codes::NON_WARDED_QUERY);
    }
}
