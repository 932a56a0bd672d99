//! The warded chase: unifier enumeration, chase steps with labeled nulls,
//! stratified saturation with isomorphism suppression, aggregation, and the
//! soft-rule states walked by exact and approximate inference.
//!
//! A [`ChaseState`] is the hard closure of the database extended with an
//! ordered list of fired soft applications. Firing or undoing a soft
//! application recomputes the closure from the reduced fact set, which also
//! takes care of cascading removals through hard rules and negation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{self, Analysis, StratifyOptions, Violation};
use crate::model::{
    canonical_terms, canonical_tuple_key, AggOp, Atom, Fact, Instance, InstanceKey, KeyTerm, ModelError, NullOrigin,
    NullRegistry, Program, Rule, RuleId, Stamp, Substitution, Term, Tuple, Value, Var,
};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ChaseError {
    #[error("program rejected by analysis ({} violation(s))", .0.len())]
    Rejected(Vec<Violation>),
    #[error("chase exceeded the step budget of {0} applications")]
    StepBudget(usize),
    #[error("unifier {unifier} is not applicable to rule {rule}")]
    Inapplicable { rule: RuleId, unifier: String },
    #[error("application of {rule} with {unifier} is not undoable")]
    NotUndoable { rule: RuleId, unifier: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChaseOptions {
    /// Guard against runaway saturation; wardedness guarantees termination.
    pub max_steps: usize,
    pub stratify: StratifyOptions,
    /// Shuffle the matches of every round with this seed instead of firing
    /// them in canonical order.
    pub order_seed: Option<u64>,
}

impl Default for ChaseOptions {
    fn default() -> Self {
        ChaseOptions {
            max_steps: 1_000_000,
            stratify: StratifyOptions::default(),
            order_seed: None,
        }
    }
}

/// An analysed program together with the null registry shared by every
/// session and state derived from it.
#[derive(Debug)]
pub struct Engine {
    program: Program,
    analysis: Analysis,
    layers: Vec<Vec<RuleId>>,
    nulls: NullRegistry,
    opts: ChaseOptions,
}

impl Engine {
    pub fn new(program: Program) -> Result<Arc<Engine>, ChaseError> {
        Engine::with_options(program, ChaseOptions::default())
    }

    pub fn with_options(program: Program, opts: ChaseOptions) -> Result<Arc<Engine>, ChaseError> {
        let analysis = analysis::analyze_with(&program, opts.stratify).map_err(ChaseError::Rejected)?;
        let layers = analysis.strata.layers();
        Ok(Arc::new(Engine {
            program,
            analysis,
            layers,
            nulls: NullRegistry::new(),
            opts,
        }))
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    pub fn nulls(&self) -> &NullRegistry {
        &self.nulls
    }

    pub fn options(&self) -> ChaseOptions {
        self.opts
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        self.program.rule(id)
    }
}

/// Isomorphism-class key of an application: rule plus the canonical key of
/// the matched body facts (for aggregates, of the group and its value).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoKey {
    pub rule: RuleId,
    pub key: Vec<KeyTerm>,
}

/// A body match of a rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub rule: RuleId,
    pub unifier: Substitution,
    pub body: Vec<Fact>,
    pub memo: MemoKey,
}

/// A performed chase step.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleApplication {
    pub rule: RuleId,
    pub unifier: Substitution,
    pub body: Vec<Fact>,
    /// Head atoms under the unifier extended with nulls for existentials.
    pub generated: Vec<Fact>,
    /// The generated facts that were not already present.
    pub added: Vec<Fact>,
    pub memo: MemoKey,
}

impl fmt::Display for RuleApplication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.rule, self.unifier)?;
        for (i, g) in self.generated.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// Which application generated each fact and which ones consumed it.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub apps: Vec<RuleApplication>,
    generator: HashMap<Fact, usize>,
    consumers: HashMap<Fact, Vec<usize>>,
}

impl Provenance {
    pub fn generator(&self, fact: &Fact) -> Option<&RuleApplication> {
        self.generator.get(fact).map(|&i| &self.apps[i])
    }

    pub fn consumers<'a>(&'a self, fact: &Fact) -> impl Iterator<Item = &'a RuleApplication> + 'a {
        self.consumers
            .get(fact)
            .into_iter()
            .flatten()
            .map(move |&i| &self.apps[i])
    }

    fn record(&mut self, app: RuleApplication) -> usize {
        let idx = self.apps.len();
        for f in &app.added {
            self.generator.entry(f.clone()).or_insert(idx);
        }
        for f in &app.body {
            self.consumers.entry(f.clone()).or_default().push(idx);
        }
        self.apps.push(app);
        idx
    }
}

#[derive(Clone, Copy)]
enum Window {
    Any,
    New(Stamp),
    Old(Stamp),
}

impl Window {
    fn admits(self, stamp: Stamp) -> bool {
        match self {
            Window::Any => true,
            Window::New(d) => stamp >= d,
            Window::Old(d) => stamp < d,
        }
    }
}

fn term_value<'a>(t: &'a Term, s: &'a Substitution) -> Option<&'a Value> {
    match t {
        Term::Val(v) => Some(v),
        Term::Var(v) => s.get(v),
    }
}

/// Extends `s` so that `atom` maps onto `tuple`; returns the newly bound
/// variables, or `None` on a clash (with `s` restored).
fn unify(atom: &Atom, tuple: &[Value], s: &mut Substitution) -> Option<Vec<Var>> {
    if atom.terms.len() != tuple.len() {
        return None;
    }
    let mut bound = Vec::new();
    for (t, v) in atom.terms.iter().zip(tuple) {
        let ok = match t {
            Term::Val(c) => c == v,
            Term::Var(x) => match s.get(x) {
                Some(w) => w == v,
                None => {
                    s.bind(x.clone(), v.clone());
                    bound.push(x.clone());
                    true
                }
            },
        };
        if !ok {
            for x in &bound {
                s.0.remove(x);
            }
            return None;
        }
    }
    Some(bound)
}

/// Join order: start from `first`, then repeatedly the atom with the most
/// already-bound positions.
fn plan(atoms: &[&Atom], first: Option<usize>) -> Vec<usize> {
    let mut order = Vec::with_capacity(atoms.len());
    let mut bound: BTreeSet<&Var> = BTreeSet::new();
    let mut left: Vec<usize> = (0..atoms.len()).collect();
    if let Some(f) = first {
        left.retain(|&i| i != f);
        order.push(f);
        bound.extend(atoms[f].vars());
    }
    while !left.is_empty() {
        let (pos, &best) = left
            .iter()
            .enumerate()
            .max_by_key(|(_, &i)| {
                let score = atoms[i]
                    .terms
                    .iter()
                    .filter(|t| match t {
                        Term::Val(_) => true,
                        Term::Var(v) => bound.contains(v),
                    })
                    .count();
                (score, std::cmp::Reverse(i))
            })
            .expect("non-empty");
        left.remove(pos);
        order.push(best);
        bound.extend(atoms[best].vars());
    }
    order
}

struct Join<'a> {
    atoms: Vec<&'a Atom>,
    windows: Vec<Window>,
    order: Vec<usize>,
    inst: &'a Instance,
}

impl Join<'_> {
    fn run(
        &self,
        depth: usize,
        s: &mut Substitution,
        picked: &mut [Option<Tuple>],
        out: &mut Vec<(Substitution, Vec<Tuple>)>,
    ) {
        if depth == self.order.len() {
            out.push((
                s.clone(),
                picked.iter().map(|t| t.clone().expect("all atoms matched")).collect(),
            ));
            return;
        }
        let i = self.order[depth];
        let atom = self.atoms[i];
        let Some(rel) = self.inst.relation(&atom.pred) else {
            return;
        };
        let window = self.windows[i];
        let best = atom
            .terms
            .iter()
            .enumerate()
            .filter_map(|(p, t)| term_value(t, s).map(|v| (p, v.clone())))
            .min_by_key(|(p, v)| rel.lookup_len(*p, v));
        let candidates: Vec<Tuple> = match best {
            Some((p, v)) => rel.lookup(p, &v).cloned().collect(),
            None => rel.iter().map(|(t, _)| t.clone()).collect(),
        };
        for t in candidates {
            if !window.admits(rel.stamp(&t).expect("indexed tuple")) {
                continue;
            }
            if let Some(bound) = unify(atom, &t, s) {
                picked[i] = Some(t);
                self.run(depth + 1, s, picked, out);
                picked[i] = None;
                for x in bound {
                    s.0.remove(&x);
                }
            }
        }
    }
}

/// All assignments of the positive atoms of `rule` that satisfy its negated
/// atoms and the filters not mentioning `skip_filter_var`. With `delta`, at
/// least one matched fact must carry a stamp `>= delta`.
fn positive_matches(
    rule: &Rule,
    inst: &Instance,
    delta: Option<Stamp>,
    skip_filter_var: Option<&Var>,
) -> Vec<(Substitution, Vec<Fact>)> {
    let atoms: Vec<&Atom> = rule.positive_atoms().collect();
    let mut raw = Vec::new();
    let mut picked = vec![None; atoms.len()];
    match delta {
        Some(d) if d > 0 && !atoms.is_empty() => {
            for pivot in 0..atoms.len() {
                let windows = (0..atoms.len())
                    .map(|j| match j.cmp(&pivot) {
                        std::cmp::Ordering::Less => Window::Old(d),
                        std::cmp::Ordering::Equal => Window::New(d),
                        std::cmp::Ordering::Greater => Window::Any,
                    })
                    .collect();
                let join = Join {
                    order: plan(&atoms, Some(pivot)),
                    atoms: atoms.clone(),
                    windows,
                    inst,
                };
                join.run(0, &mut Substitution::new(), &mut picked, &mut raw);
            }
        }
        Some(d) if d > 0 => {}
        _ => {
            let join = Join {
                order: plan(&atoms, None),
                windows: vec![Window::Any; atoms.len()],
                atoms: atoms.clone(),
                inst,
            };
            join.run(0, &mut Substitution::new(), &mut picked, &mut raw);
        }
    }
    let mut out: Vec<(Substitution, Vec<Fact>)> = raw
        .into_iter()
        .filter(|(s, _)| {
            rule.negated_atoms().all(|a| match s.apply(a) {
                Ok(f) => !inst.contains(&f),
                Err(_) => false,
            })
        })
        .filter(|(s, _)| {
            rule.filters()
                .filter(|c| skip_filter_var.is_none_or(|v| !c.vars().contains(v)))
                .all(|c| c.holds(&|v: &Var| s.get(v).cloned()))
        })
        .map(|(s, tuples)| {
            let facts = atoms
                .iter()
                .zip(tuples)
                .map(|(a, t)| Fact {
                    pred: a.pred.clone(),
                    args: t,
                })
                .collect();
            (s, facts)
        })
        .collect();
    out.sort_by(|a, b| a.1.cmp(&b.1));
    out.dedup_by(|a, b| a.1 == b.1);
    out
}

/// Value of an aggregate over the operand values of a group: sum and count
/// of an empty set are 0, min and max of an empty set are undefined.
/// Non-numeric operands are ignored by sum, min and max.
pub fn evaluate_aggregate<'a>(op: AggOp, operands: impl IntoIterator<Item = &'a Value>) -> Option<f64> {
    let mut n = 0usize;
    let nums: Vec<f64> = operands
        .into_iter()
        .inspect(|_| n += 1)
        .filter_map(Value::as_f64)
        .collect();
    match op {
        AggOp::Sum => Some(nums.iter().sum()),
        AggOp::Count => Some(n as f64),
        AggOp::Min => nums.into_iter().reduce(f64::min),
        AggOp::Max => nums.into_iter().reduce(f64::max),
    }
}

/// Matches of an aggregate rule: one per group of body matches sharing the
/// values of the head variables other than the aggregate result.
fn aggregate_matches(rule: &Rule, inst: &Instance) -> Vec<Match> {
    let agg = rule.aggregate().expect("aggregate rule");
    let positive = rule.positive_vars();
    let group_vars: Vec<Var> = rule
        .head_vars()
        .into_iter()
        .filter(|v| v != &agg.result && positive.contains(v))
        .collect();
    let mut groups: BTreeMap<Vec<Value>, Vec<(Substitution, Vec<Fact>)>> = BTreeMap::new();
    for (s, facts) in positive_matches(rule, inst, None, Some(&agg.result)) {
        let key = group_vars
            .iter()
            .map(|v| s.get(v).cloned().expect("group variable bound"))
            .collect();
        groups.entry(key).or_default().push((s, facts));
    }
    let post: Vec<_> = rule.filters().filter(|c| c.vars().contains(&agg.result)).collect();
    let mut out = Vec::new();
    for (key, members) in groups {
        let operands = members.iter().filter_map(|(s, _)| s.get(&agg.operand));
        let Some(value) = evaluate_aggregate(agg.op, operands) else {
            continue;
        };
        let mut unifier: Substitution = group_vars.iter().cloned().zip(key.iter().cloned()).collect();
        unifier.bind(agg.result.clone(), Value::num(value));
        if !post.iter().all(|c| c.holds(&|v: &Var| unifier.get(v).cloned())) {
            continue;
        }
        let body: BTreeSet<Fact> = members.into_iter().flat_map(|(_, f)| f).collect();
        let mut memo = Vec::new();
        canonical_terms(
            key.iter()
                .chain(std::iter::once(unifier.get(&agg.result).expect("bound"))),
            &mut HashMap::new(),
            &mut memo,
        );
        out.push(Match {
            rule: rule.id,
            unifier,
            body: body.into_iter().collect(),
            memo: MemoKey {
                rule: rule.id,
                key: memo,
            },
        });
    }
    out
}

/// All matches of `rule` over `inst` (not filtered by any memo).
pub fn rule_matches(rule: &Rule, inst: &Instance, delta: Option<Stamp>) -> Vec<Match> {
    if rule.aggregate().is_some() {
        return aggregate_matches(rule, inst);
    }
    positive_matches(rule, inst, delta, None)
        .into_iter()
        .map(|(unifier, body)| Match {
            rule: rule.id,
            memo: MemoKey {
                rule: rule.id,
                key: canonical_tuple_key(&body),
            },
            unifier,
            body,
        })
        .collect()
}

/// Head facts of `rule` under `unifier`, extended with the registry's nulls
/// for the existential variables.
pub fn generated_facts(engine: &Engine, rule: &Rule, unifier: &Substitution) -> Result<Vec<Fact>, ModelError> {
    let mut ext = unifier.clone();
    for z in &rule.existentials {
        let id = engine.nulls.null_for(NullOrigin {
            rule: rule.id,
            var: z.clone(),
            unifier: unifier.clone(),
        });
        ext.bind(z.clone(), Value::Null(id));
    }
    rule.head.iter().map(|a| ext.apply(a)).collect()
}

/// One instance with its provenance and the memo of used applications.
#[derive(Clone, Debug)]
pub struct ChaseSession {
    engine: Arc<Engine>,
    instance: Instance,
    provenance: Provenance,
    memo: HashSet<MemoKey>,
    steps: usize,
}

impl ChaseSession {
    pub fn new(engine: Arc<Engine>, instance: Instance) -> ChaseSession {
        ChaseSession {
            engine,
            instance,
            provenance: Provenance::default(),
            memo: HashSet::new(),
            steps: 0,
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn into_instance(self) -> Instance {
        self.instance
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_used(&self, key: &MemoKey) -> bool {
        self.memo.contains(key)
    }

    /// Matches of `rule` whose isomorphism class has not fired yet.
    pub fn applicable_unifiers(&self, rule: RuleId) -> Vec<Match> {
        let rule = self.engine.rule(rule);
        rule_matches(rule, &self.instance, None)
            .into_iter()
            .filter(|m| !self.memo.contains(&m.memo))
            .collect()
    }

    /// Fires `m`, inserting its head facts; facts already present are
    /// recorded in `generated` but not added again.
    pub fn apply_chase_step(&mut self, m: &Match) -> Result<&RuleApplication, ChaseError> {
        let present = m.body.iter().all(|f| self.instance.contains(f));
        if self.memo.contains(&m.memo) || !present {
            return Err(ChaseError::Inapplicable {
                rule: m.rule,
                unifier: m.unifier.to_string(),
            });
        }
        let idx = self.fire(m)?;
        Ok(&self.provenance.apps[idx])
    }

    fn fire(&mut self, m: &Match) -> Result<usize, ChaseError> {
        if self.steps >= self.engine.opts.max_steps {
            return Err(ChaseError::StepBudget(self.engine.opts.max_steps));
        }
        self.steps += 1;
        let rule = self.engine.rule(m.rule);
        let generated = generated_facts(&self.engine, rule, &m.unifier)?;
        let added = generated
            .iter()
            .filter(|f| self.instance.insert((*f).clone()))
            .cloned()
            .collect();
        self.memo.insert(m.memo.clone());
        Ok(self.provenance.record(RuleApplication {
            rule: m.rule,
            unifier: m.unifier.clone(),
            body: m.body.clone(),
            generated,
            added,
            memo: m.memo.clone(),
        }))
    }

    /// Records externally produced facts (soft outputs) as an application.
    fn inject(&mut self, app: &RuleApplication) {
        let added = app
            .generated
            .iter()
            .filter(|f| self.instance.insert((*f).clone()))
            .cloned()
            .collect();
        self.provenance.record(RuleApplication { added, ..app.clone() });
    }

    /// Stratum by stratum, fires every admissible match of the selected
    /// rules until no new fact appears.
    fn saturate(&mut self, select: impl Fn(&Rule) -> bool) -> Result<(), ChaseError> {
        let engine = self.engine.clone();
        let mut rng = engine.opts.order_seed.map(ChaCha8Rng::seed_from_u64);
        for layer in &engine.layers {
            let rules: Vec<&Rule> = layer.iter().map(|&r| engine.rule(r)).filter(|r| select(r)).collect();
            if rules.is_empty() {
                continue;
            }
            let mut delta: Stamp = 0;
            loop {
                let round = self.instance.tick();
                let mut matches: Vec<Match> = rules
                    .iter()
                    .flat_map(|r| rule_matches(r, &self.instance, Some(delta)))
                    .filter(|m| !self.memo.contains(&m.memo))
                    .collect();
                if let Some(rng) = rng.as_mut() {
                    matches.shuffle(rng);
                }
                let before = self.instance.len();
                for m in &matches {
                    if !self.memo.contains(&m.memo) {
                        self.fire(m)?;
                    }
                }
                if self.instance.len() == before {
                    break;
                }
                delta = round;
            }
        }
        Ok(())
    }

    pub fn close_under_hard_rules(&mut self) -> Result<(), ChaseError> {
        self.saturate(Rule::is_hard)
    }

    /// Saturates under every rule, weights ignored.
    pub fn run(&mut self) -> Result<(), ChaseError> {
        self.saturate(|_| true)
    }
}

/// The warded chase of `database` under all rules of the engine's program.
pub fn warded_chase(engine: &Arc<Engine>, database: Instance) -> Result<Instance, ChaseError> {
    let mut s = ChaseSession::new(engine.clone(), database);
    s.run()?;
    Ok(s.into_instance())
}

/// The closure of `database` under the hard rules.
pub fn close_under_hard_rules(engine: &Arc<Engine>, database: Instance) -> Result<ChaseSession, ChaseError> {
    let mut s = ChaseSession::new(engine.clone(), database);
    s.close_under_hard_rules()?;
    Ok(s)
}

/// A node of the soft-rule state space: the hard closure of the database
/// plus the outputs of the fired soft applications.
#[derive(Clone, Debug)]
pub struct ChaseState {
    engine: Arc<Engine>,
    base: Arc<Instance>,
    soft: Vec<RuleApplication>,
    closure: Arc<ChaseSession>,
}

impl ChaseState {
    pub fn initial(engine: &Arc<Engine>, database: Instance) -> Result<ChaseState, ChaseError> {
        ChaseState::build(engine.clone(), Arc::new(database), Vec::new())
    }

    fn build(engine: Arc<Engine>, base: Arc<Instance>, soft: Vec<RuleApplication>) -> Result<ChaseState, ChaseError> {
        let mut session = ChaseSession::new(engine.clone(), (*base).clone());
        for app in &soft {
            session.inject(app);
        }
        session.close_under_hard_rules()?;
        Ok(ChaseState {
            engine,
            base,
            soft,
            closure: Arc::new(session),
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn instance(&self) -> &Instance {
        &self.closure.instance
    }

    pub fn provenance(&self) -> &Provenance {
        &self.closure.provenance
    }

    pub fn key(&self) -> InstanceKey {
        self.instance().key()
    }

    pub fn soft_apps(&self) -> &[RuleApplication] {
        &self.soft
    }

    /// Sum of the weights of the fired soft applications.
    pub fn trajectory_weight(&self) -> f64 {
        self.soft
            .iter()
            .fold(0.0, |acc, a| acc + self.engine.rule(a.rule).weight.value())
    }

    fn used(&self) -> HashSet<&MemoKey> {
        self.soft.iter().map(|a| &a.memo).collect()
    }

    /// Soft matches that can fire: unused isomorphism class and at least one
    /// new fact. Grouped by rule in program order; rules without matches are
    /// omitted.
    pub fn applicable_soft(&self) -> Result<Vec<(RuleId, Vec<Match>)>, ChaseError> {
        let used = self.used();
        let inst = self.instance();
        let mut out = Vec::new();
        for rule in self.engine.program.soft_rules() {
            let mut ms = Vec::new();
            for m in rule_matches(rule, inst, None) {
                if used.contains(&m.memo) {
                    continue;
                }
                let generated = generated_facts(&self.engine, rule, &m.unifier)?;
                if generated.iter().any(|f| !inst.contains(f)) {
                    ms.push(m);
                }
            }
            if !ms.is_empty() {
                out.push((rule.id, ms));
            }
        }
        Ok(out)
    }

    /// The state after firing `m`; fails if `m` is not applicable here.
    pub fn fire(&self, m: &Match) -> Result<ChaseState, ChaseError> {
        let rule = self.engine.rule(m.rule);
        let inst = self.instance();
        let inapplicable = || ChaseError::Inapplicable {
            rule: m.rule,
            unifier: m.unifier.to_string(),
        };
        if !rule.is_soft() || self.used().contains(&m.memo) || !m.body.iter().all(|f| inst.contains(f)) {
            return Err(inapplicable());
        }
        let generated = generated_facts(&self.engine, rule, &m.unifier)?;
        if generated.iter().all(|f| inst.contains(f)) {
            return Err(inapplicable());
        }
        let mut soft = self.soft.clone();
        soft.push(RuleApplication {
            rule: m.rule,
            unifier: m.unifier.clone(),
            body: m.body.clone(),
            added: generated.clone(),
            generated,
            memo: m.memo.clone(),
        });
        ChaseState::build(self.engine.clone(), self.base.clone(), soft)
    }

    /// Fires the applicable soft match of `rule` with exactly `unifier`.
    pub fn fire_unifier(&self, rule: RuleId, unifier: &Substitution) -> Result<Option<ChaseState>, ChaseError> {
        let found = self
            .applicable_soft()?
            .into_iter()
            .find(|(r, _)| *r == rule)
            .and_then(|(_, ms)| ms.into_iter().find(|m| &m.unifier == unifier));
        found.map(|m| self.fire(&m)).transpose()
    }

    fn without(&self, idx: usize) -> Result<ChaseState, ChaseError> {
        let mut soft = self.soft.clone();
        soft.remove(idx);
        ChaseState::build(self.engine.clone(), self.base.clone(), soft)
    }

    /// Fired soft applications that can be undone, with the resulting
    /// states. An application is undoable when no other fired soft
    /// application consumes a fact that would disappear with it.
    pub fn undo_candidates(&self) -> Result<Vec<(usize, ChaseState)>, ChaseError> {
        let mut out = Vec::new();
        for idx in 0..self.soft.len() {
            let reduced = self.without(idx)?;
            if self.undo_keeps_consumers(idx, &reduced) {
                out.push((idx, reduced));
            }
        }
        Ok(out)
    }

    fn undo_keeps_consumers(&self, idx: usize, reduced: &ChaseState) -> bool {
        let r = reduced.instance();
        self.soft
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .all(|(_, b)| b.body.iter().all(|f| r.contains(f)))
    }

    /// Indices into [`ChaseState::soft_apps`] of the undoable applications.
    pub fn undoable(&self) -> Result<Vec<usize>, ChaseError> {
        Ok(self.undo_candidates()?.into_iter().map(|(i, _)| i).collect())
    }

    /// The state after undoing the fired application at `idx`.
    pub fn undo(&self, idx: usize) -> Result<ChaseState, ChaseError> {
        let app = self.soft.get(idx).ok_or_else(|| ChaseError::NotUndoable {
            rule: RuleId(usize::MAX),
            unifier: format!("index {idx}"),
        })?;
        let reduced = self.without(idx)?;
        if !self.undo_keeps_consumers(idx, &reduced) {
            return Err(ChaseError::NotUndoable {
                rule: app.rule,
                unifier: app.unifier.to_string(),
            });
        }
        Ok(reduced)
    }

    /// Undoes the fired application of `rule` with exactly `unifier`, if it
    /// is fired and undoable.
    pub fn undo_unifier(&self, rule: RuleId, unifier: &Substitution) -> Result<Option<ChaseState>, ChaseError> {
        let Some(idx) = self.soft.iter().position(|a| a.rule == rule && &a.unifier == unifier) else {
            return Ok(None);
        };
        match self.undo(idx) {
            Ok(s) => Ok(Some(s)),
            Err(ChaseError::NotUndoable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NullId, Pred};
    use crate::parser::{parse_facts, parse_program, FactFormat};

    pub const MOTHER: &str = "person(X) -> exists Z: hasMother(X,Z).\nhasMother(X,Y) -> person(Y).";

    pub const RUNNING_HARD: &str = "lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).\n\
        lenderType(X,Y), lenderClass(Y,Z) -> lenderType(X,Z).\n\
        contract(X,Y,Z), exposure(Y,W) -> contract(Z,W,X).\n\
        contract(X,Y,Z), regulatoryRestriction(W,Y) -> lenderType(X,W).";

    pub const RUNNING_SOFT: &str =
        "0.9 :: lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).\n\
        0.8 :: lenderType(X,Y), lenderClass(Y,Z) -> lenderType(X,Z).\n\
        0.7 :: contract(X,Y,Z), exposure(Y,W) -> contract(Z,W,X).\n\
        contract(X,Y,Z), regulatoryRestriction(W,Y) -> lenderType(X,W).";

    pub const RUNNING_FACTS: &str = "contract(a,b,c). exposure(b,l). regulatoryRestriction(m,l). lenderClass(m,n).";

    fn engine(src: &str) -> Arc<Engine> {
        Engine::new(parse_program(src).unwrap()).unwrap()
    }

    fn facts(src: &str) -> Instance {
        parse_facts(src, FactFormat::Datalog).unwrap()
    }

    fn fact(src: &str) -> Fact {
        facts(src).facts().next().unwrap()
    }

    fn sym(s: &str) -> Value {
        Value::sym(s)
    }

    #[test]
    fn mother_rule_one_unifier() {
        let e = engine(MOTHER);
        let s = ChaseSession::new(e, facts("person(alice)."));
        let ms = s.applicable_unifiers(RuleId(0));
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].unifier.get(&Var::new("X")), Some(&sym("alice")));
    }

    #[test]
    fn mother_step_adds_null_fact() {
        let e = engine(MOTHER);
        let mut s = ChaseSession::new(e, facts("person(alice)."));
        let m = s.applicable_unifiers(RuleId(0)).remove(0);
        let app = s.apply_chase_step(&m).unwrap().clone();
        assert_eq!(app.added.len(), 1);
        let f = &app.added[0];
        assert_eq!(f.pred, Pred::new("hasmother"));
        assert_eq!(f.args[0], sym("alice"));
        assert!(f.args[1].is_null());
        assert!(s.apply_chase_step(&m).is_err());
    }

    #[test]
    fn isomorphic_body_is_suppressed() {
        let e = engine(MOTHER);
        let mut s = ChaseSession::new(e, facts("person(alice)."));
        s.run().unwrap();
        let inst = s.instance();
        assert_eq!(inst.len(), 5);
        let hm: Vec<Fact> = inst.facts_of(&Pred::new("hasmother")).collect();
        assert_eq!(hm.len(), 2);
        assert_eq!(hm.iter().filter(|f| !f.args[0].is_null()).count(), 1);
        assert_eq!(hm.iter().filter(|f| f.args.iter().all(Value::is_null)).count(), 1);
        let deepest = inst
            .facts_of(&Pred::new("person"))
            .filter(|f| f.has_nulls())
            .find(|f| s.applicable_unifiers(RuleId(0)).iter().all(|m| m.body[0] != *f));
        assert!(deepest.is_some());
        assert!(s.applicable_unifiers(RuleId(0)).is_empty());
    }

    #[test]
    fn unsatisfiable_filter_yields_nothing() {
        let e = engine("own(X,Y,S), 0 < S < 1 -> control(X,Y).");
        let s = ChaseSession::new(e, facts("own(a,b,1.5)."));
        assert!(s.applicable_unifiers(RuleId(0)).is_empty());
    }

    #[test]
    fn present_head_records_application() {
        let e = engine("p(X) -> q(X).");
        let mut s = ChaseSession::new(e, facts("p(a). q(a)."));
        let m = s.applicable_unifiers(RuleId(0)).remove(0);
        let app = s.apply_chase_step(&m).unwrap();
        assert!(app.added.is_empty());
        assert_eq!(app.generated.len(), 1);
        assert_eq!(s.provenance().apps.len(), 1);
    }

    #[test]
    fn running_example_rule_three() {
        let e = engine(RUNNING_HARD);
        let mut s = ChaseSession::new(e, facts(RUNNING_FACTS));
        let m = s.applicable_unifiers(RuleId(2)).remove(0);
        let app = s.apply_chase_step(&m).unwrap();
        assert_eq!(app.added, vec![fact("contract(c,l,a).")]);
    }

    #[test]
    fn running_example_closure() {
        let e = engine(RUNNING_HARD);
        let s = close_under_hard_rules(&e, facts(RUNNING_FACTS)).unwrap();
        let inst = s.instance();
        assert!(inst.contains(&fact("contract(c,l,a).")));
        assert!(inst.contains(&fact("lenderType(c,m).")));
        assert!(inst.contains(&fact("lenderType(c,n).")));
        let g: Vec<Fact> = inst.facts_of(&Pred::new("guarantee")).collect();
        assert_eq!(g.len(), 1);
        assert_eq!(&g[0].args[..2], &[sym("c"), sym("l")]);
        assert!(g[0].args[2].is_null());
        let gen = s.provenance().generator(&g[0]).unwrap();
        assert_eq!(gen.rule, RuleId(0));
        assert_eq!(inst.len(), 8);
        let mut again = ChaseSession::new(e.clone(), inst.clone());
        again.close_under_hard_rules().unwrap();
        assert_eq!(again.instance(), inst);
    }

    #[test]
    fn soft_rules_idle_in_hard_closure() {
        let e = engine(RUNNING_SOFT);
        let s = close_under_hard_rules(&e, facts(RUNNING_FACTS)).unwrap();
        assert_eq!(s.instance(), &facts(RUNNING_FACTS));
    }

    #[test]
    fn empty_program_leaves_database() {
        let e = engine("");
        let d = facts(RUNNING_FACTS);
        assert_eq!(warded_chase(&e, d.clone()).unwrap(), d);
    }

    #[test]
    fn datalog_transitive_closure() {
        let e = engine("e(X,Y) -> t(X,Y).\nt(X,Y), e(Y,Z) -> t(X,Z).");
        let out = warded_chase(&e, facts("e(a,b). e(b,c). e(c,d). e(d,a).")).unwrap();
        assert_eq!(out.facts_of(&Pred::new("t")).count(), 16);
    }

    #[test]
    fn aggregate_values() {
        let ops = [Value::num(0.3), Value::num(0.25)];
        assert_eq!(evaluate_aggregate(AggOp::Sum, &ops), Some(0.3 + 0.25));
        assert!((evaluate_aggregate(AggOp::Sum, &ops).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(evaluate_aggregate(AggOp::Sum, &[Value::num(0.6)]), Some(0.6));
        assert_eq!(evaluate_aggregate(AggOp::Sum, &[]), Some(0.0));
        assert_eq!(evaluate_aggregate(AggOp::Count, &[]), Some(0.0));
        assert_eq!(evaluate_aggregate(AggOp::Min, &[]), None);
        assert_eq!(evaluate_aggregate(AggOp::Max, &ops), Some(0.3));
    }

    #[test]
    fn aggregate_gate() {
        let src = "control(X,Y), own(Y,Z,S), V = sum(S), V > 0.5 -> control(X,Z).\ncompany(X) -> control(X,X).";
        let e = engine(src);
        let db = facts("company(a). own(a,b,0.3). own(a,c,0.4). own(c,b,0.25). own(b,d,0.2).");
        let out = warded_chase(&e, db).unwrap();
        assert!(!out.contains(&fact("control(a,b).")) || out.contains(&fact("control(a,c).")));
        // a reaches b only through c: 0.3 alone is not enough.
        let e2 = engine(src);
        let db2 = facts("company(a). own(a,b,0.3). own(a,c,0.6). own(c,b,0.25).");
        let out2 = warded_chase(&e2, db2).unwrap();
        assert!(out2.contains(&fact("control(a,c).")));
        assert!(out2.contains(&fact("control(a,b).")));
        let e3 = engine(src);
        let out3 = warded_chase(&e3, facts("company(a). own(a,b,0.3). own(a,c,0.4). own(c,b,0.25).")).unwrap();
        assert!(!out3.contains(&fact("control(a,b).")));
    }

    #[test]
    fn stratified_negation_waits_for_lower_stratum() {
        let e = engine("e(X,Y) -> r(X,Y).\nr(X,Y), e(Y,Z) -> r(X,Z).\nn(X), n(Y), not r(X,Y) -> u(X,Y).");
        let out = warded_chase(&e, facts("n(a). n(b). n(c). e(a,b). e(b,c).")).unwrap();
        assert!(!out.contains(&fact("u(a,c).")));
        assert!(out.contains(&fact("u(c,a).")));
    }

    #[test]
    fn nulls_are_stable_per_origin() {
        let e = engine(MOTHER);
        let a = warded_chase(&e, facts("person(alice).")).unwrap();
        let b = warded_chase(&e, facts("person(alice).")).unwrap();
        assert_eq!(a, b);
        let other = engine(MOTHER);
        assert_eq!(warded_chase(&other, facts("person(alice).")).unwrap(), a);
        let n: BTreeSet<NullId> = a.facts().flat_map(|f| f.nulls().collect::<Vec<_>>()).collect();
        assert_eq!(n.len(), 2);
    }

    fn running_state() -> ChaseState {
        let e = engine(RUNNING_SOFT);
        ChaseState::initial(&e, facts(RUNNING_FACTS)).unwrap()
    }

    fn fire_rule(s: &ChaseState, rule: usize) -> ChaseState {
        let (_, ms) = s
            .applicable_soft()
            .unwrap()
            .into_iter()
            .find(|(r, _)| r.0 == rule)
            .expect("rule applicable");
        s.fire(&ms[0]).unwrap()
    }

    #[test]
    fn soft_transitions_follow_running_example() {
        let w0 = running_state();
        assert!(w0.undoable().unwrap().is_empty());
        let app: Vec<usize> = w0.applicable_soft().unwrap().iter().map(|(r, _)| r.0).collect();
        assert_eq!(app, vec![2]);
        let w1 = fire_rule(&w0, 2);
        assert!(w1.instance().contains(&fact("contract(c,l,a).")));
        assert!(w1.instance().contains(&fact("lenderType(c,m).")));
        assert!((w1.trajectory_weight() - 0.7).abs() < 1e-12);
        assert_eq!(w1.undoable().unwrap(), vec![0]);
        assert_eq!(w1.undo(0).unwrap().key(), w0.key());
        let w2 = fire_rule(&w1, 1);
        assert!(w2.undoable().unwrap() == vec![1]);
        assert!(w2.undo(0).is_err());
        let w3 = fire_rule(&w1, 0);
        let w4a = fire_rule(&w2, 0);
        let w4b = fire_rule(&w3, 1);
        assert_eq!(w4a.key(), w4b.key());
        assert!(w4a.applicable_soft().unwrap().is_empty());
        let redo = fire_rule(&w2.undo(1).unwrap(), 1);
        assert_eq!(redo.key(), w2.key());
    }

    #[test]
    fn undo_cascades_through_hard_rules() {
        let e = engine("0.5 :: p(X) -> q(X).\nq(X) -> r(X).");
        let s0 = ChaseState::initial(&e, facts("p(a).")).unwrap();
        let (_, ms) = s0.applicable_soft().unwrap().remove(0);
        let s1 = s0.fire(&ms[0]).unwrap();
        assert!(s1.instance().contains(&fact("r(a).")));
        let back = s1.undo(0).unwrap();
        assert_eq!(back.instance(), s0.instance());
    }

    #[test]
    fn undo_reinstates_facts_blocked_by_negation() {
        let e = engine("0.5 :: p(X) -> b(X).\np(X), not b(X) -> free(X).");
        let s0 = ChaseState::initial(&e, facts("p(a).")).unwrap();
        assert!(s0.instance().contains(&fact("free(a).")));
        let (_, ms) = s0.applicable_soft().unwrap().remove(0);
        let s1 = s0.fire(&ms[0]).unwrap();
        assert!(!s1.instance().contains(&fact("free(a).")));
        assert_eq!(s1.undo(0).unwrap().key(), s0.key());
    }

    #[test]
    fn shuffled_orders_agree_up_to_isomorphism() {
        let p = parse_program(MOTHER).unwrap();
        let reference = warded_chase(&Engine::new(p.clone()).unwrap(), facts("person(alice). person(bob).")).unwrap();
        for seed in 0..10 {
            let opts = ChaseOptions {
                order_seed: Some(seed),
                ..ChaseOptions::default()
            };
            let e = Engine::with_options(p.clone(), opts).unwrap();
            let out = warded_chase(&e, facts("person(alice). person(bob).")).unwrap();
            assert!(out.is_fact_isomorphic(&reference));
        }
    }

    #[test]
    fn step_budget_is_enforced() {
        let opts = ChaseOptions {
            max_steps: 3,
            ..ChaseOptions::default()
        };
        let e = Engine::with_options(parse_program("e(X,Y) -> t(X,Y).").unwrap(), opts).unwrap();
        let err = warded_chase(&e, facts("e(a,b). e(b,c). e(c,d). e(d,a).")).unwrap_err();
        assert_eq!(err, ChaseError::StepBudget(3));
    }

    #[test]
    fn rejected_program() {
        let err = Engine::new(parse_program("p(X), not q(X) -> q(X).").unwrap()).unwrap_err();
        assert!(matches!(err, ChaseError::Rejected(_)));
    }
}
