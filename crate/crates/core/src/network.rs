//! Exact grounding of the chase network and exact marginal inference.
//!
//! Nodes are hard-closed instances reachable from the closure of the
//! database by single soft applications; a node's weight sums the labels of
//! every edge lying on some path from the source to it, and node
//! probabilities follow the exponentiated weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{rewrite_query, Violation};
use crate::chase::{ChaseError, ChaseOptions, ChaseState, Engine, Match};
use crate::model::{Fact, Instance, InstanceKey, Pred, Program, RuleId, Substitution};
use crate::parser::Query;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Chase(#[from] ChaseError),
    #[error("grounding budget exceeded after {nodes} nodes and {edges} edges")]
    BudgetExceeded { nodes: usize, edges: usize },
    #[error("query rejected ({} violation(s))", .0.len())]
    Query(Vec<Violation>),
}

/// A soft transition in one direction between two cached nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Move {
    pub rule: RuleId,
    pub unifier: Substitution,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

/// Candidate `(rule, unifier)` moves of a node in one direction.
pub type Candidates = Arc<Vec<(RuleId, Substitution)>>;
/// A forward child: the fired application and the resulting state.
type Child = (RuleId, Substitution, ChaseState);

/// Lazily explored soft-rule state space: one representative state per
/// distinct instance, with cached forward and backward moves.
pub struct StateSpace {
    engine: Arc<Engine>,
    states: Vec<ChaseState>,
    index: HashMap<InstanceKey, usize>,
    forward: Vec<Option<Arc<Vec<Move>>>>,
    backward: Vec<Option<Arc<Vec<Move>>>>,
    matches: Vec<Option<Arc<Vec<Match>>>>,
    candidates: HashMap<(usize, Direction), Candidates>,
    fired: Vec<HashMap<(RuleId, Substitution), usize>>,
}

impl StateSpace {
    /// Starts from the hard closure of `database` as node 0.
    pub fn new(engine: &Arc<Engine>, database: Instance) -> Result<StateSpace, ChaseError> {
        let w0 = ChaseState::initial(engine, database)?;
        let mut space = StateSpace {
            engine: engine.clone(),
            states: Vec::new(),
            index: HashMap::new(),
            forward: Vec::new(),
            backward: Vec::new(),
            matches: Vec::new(),
            candidates: HashMap::new(),
            fired: Vec::new(),
        };
        space.intern(w0);
        Ok(space)
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: usize) -> &ChaseState {
        &self.states[id]
    }

    pub fn instance(&self, id: usize) -> &Instance {
        self.states[id].instance()
    }

    pub fn id_of(&self, key: &InstanceKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Node id of `state`, adding it when its instance is new; the first
    /// state seen for an instance stays its representative.
    pub fn intern(&mut self, state: ChaseState) -> usize {
        let key = state.key();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.states.len();
        self.states.push(state);
        self.index.insert(key, id);
        self.forward.push(None);
        self.backward.push(None);
        self.matches.push(None);
        self.fired.push(HashMap::new());
        id
    }

    pub fn is_expanded(&self, id: usize) -> bool {
        self.forward[id].is_some()
    }

    pub fn forward(&mut self, id: usize) -> Result<Arc<Vec<Move>>, ChaseError> {
        if let Some(m) = &self.forward[id] {
            return Ok(m.clone());
        }
        let children = forward_children(&self.states[id])?;
        Ok(self.store_forward(id, children))
    }

    fn store_forward(&mut self, id: usize, children: Vec<Child>) -> Arc<Vec<Move>> {
        let moves: Vec<Move> = children
            .into_iter()
            .map(|(rule, unifier, child)| Move {
                rule,
                unifier,
                target: self.intern(child),
            })
            .collect();
        let moves = Arc::new(moves);
        self.forward[id] = Some(moves.clone());
        moves
    }

    pub fn backward(&mut self, id: usize) -> Result<Arc<Vec<Move>>, ChaseError> {
        if let Some(m) = &self.backward[id] {
            return Ok(m.clone());
        }
        let state = self.states[id].clone();
        let mut moves = Vec::new();
        for (idx, reduced) in state.undo_candidates()? {
            let app = &state.soft_apps()[idx];
            moves.push(Move {
                rule: app.rule,
                unifier: app.unifier.clone(),
                target: self.intern(reduced),
            });
        }
        let moves = Arc::new(moves);
        self.backward[id] = Some(moves.clone());
        Ok(moves)
    }

    pub fn moves(&mut self, id: usize, dir: Direction) -> Result<Arc<Vec<Move>>, ChaseError> {
        match dir {
            Direction::Forward => self.forward(id),
            Direction::Backward => self.backward(id),
        }
    }

    fn soft_matches(&mut self, id: usize) -> Result<Arc<Vec<Match>>, ChaseError> {
        if let Some(m) = &self.matches[id] {
            return Ok(m.clone());
        }
        let all: Vec<Match> = self.states[id]
            .applicable_soft()?
            .into_iter()
            .flat_map(|(_, ms)| ms)
            .collect();
        let all = Arc::new(all);
        self.matches[id] = Some(all.clone());
        Ok(all)
    }

    /// Applications available at node `id`, in the order of [`Self::moves`],
    /// without computing forward targets.
    pub fn candidates(&mut self, id: usize, dir: Direction) -> Result<Candidates, ChaseError> {
        if let Some(c) = self.candidates.get(&(id, dir)) {
            return Ok(c.clone());
        }
        let list: Vec<(RuleId, Substitution)> = match dir {
            Direction::Forward if !self.is_expanded(id) => self
                .soft_matches(id)?
                .iter()
                .map(|m| (m.rule, m.unifier.clone()))
                .collect(),
            _ => self
                .moves(id, dir)?
                .iter()
                .map(|m| (m.rule, m.unifier.clone()))
                .collect(),
        };
        let list = Arc::new(list);
        self.candidates.insert((id, dir), list.clone());
        Ok(list)
    }

    /// Target of firing (or undoing) `rule` with `unifier` at node `id`, or
    /// `None` when that application is not available there. Forward targets
    /// are computed on demand.
    pub fn step(
        &mut self,
        id: usize,
        dir: Direction,
        rule: RuleId,
        unifier: &Substitution,
    ) -> Result<Option<usize>, ChaseError> {
        if dir == Direction::Forward && !self.is_expanded(id) {
            if let Some(&t) = self.fired[id].get(&(rule, unifier.clone())) {
                return Ok(Some(t));
            }
            let matches = self.soft_matches(id)?;
            let Some(m) = matches.iter().find(|m| m.rule == rule && &m.unifier == unifier) else {
                return Ok(None);
            };
            let child = self.states[id].fire(m)?;
            let t = self.intern(child);
            self.fired[id].insert((rule, unifier.clone()), t);
            return Ok(Some(t));
        }
        let moves = self.moves(id, dir)?;
        Ok(moves
            .iter()
            .find(|m| m.rule == rule && &m.unifier == unifier)
            .map(|m| m.target))
    }

    /// Computes the forward moves of every unexpanded node in `ids` in
    /// parallel; nodes are interned in the order of `ids`.
    pub fn expand_all(&mut self, ids: &[usize]) -> Result<(), ChaseError> {
        let todo: Vec<usize> = ids.iter().copied().filter(|&i| !self.is_expanded(i)).collect();
        let states: Vec<&ChaseState> = todo.iter().map(|&i| &self.states[i]).collect();
        let results: Vec<Result<Vec<Child>, ChaseError>> = states.into_par_iter().map(forward_children).collect();
        for (id, children) in todo.into_iter().zip(results) {
            self.store_forward(id, children?);
        }
        Ok(())
    }
}

fn forward_children(state: &ChaseState) -> Result<Vec<Child>, ChaseError> {
    let mut out = Vec::new();
    for (rule, matches) in state.applicable_soft()? {
        for m in matches {
            let child = state.fire(&m)?;
            out.push((rule, m.unifier, child));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct NetworkNode {
    pub id: usize,
    pub key: InstanceKey,
    pub instance: Instance,
    pub weight: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkEdge {
    pub from: usize,
    pub to: usize,
    pub rule: RuleId,
    pub unifier: Substitution,
    pub label: f64,
}

/// The grounded chase network: a DAG multigraph rooted at `source`.
#[derive(Clone, Debug)]
pub struct ChaseNetwork {
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
    pub source: usize,
    pub log_z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundOptions {
    /// Maximum number of nodes; `None` for no limit.
    pub max_nodes: Option<usize>,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions {
            max_nodes: Some(100_000),
        }
    }
}

/// Breadth-first grounding from the closure of `database`. Each edge is one
/// soft application followed by hard closure; targets are deduplicated by
/// instance and parallel edges are kept.
pub fn ground_chase_network(
    engine: &Arc<Engine>,
    database: Instance,
    opts: GroundOptions,
) -> Result<ChaseNetwork, NetworkError> {
    let mut space = StateSpace::new(engine, database)?;
    let mut edges: Vec<(usize, usize, RuleId, Substitution)> = Vec::new();
    let mut frontier = vec![0usize];
    let mut queued = vec![true];
    while !frontier.is_empty() {
        space.expand_all(&frontier)?;
        let mut next = Vec::new();
        for &id in &frontier {
            for m in space.forward(id)?.iter() {
                edges.push((id, m.target, m.rule, m.unifier.clone()));
                if queued.len() <= m.target {
                    queued.resize(m.target + 1, false);
                }
                if !queued[m.target] {
                    queued[m.target] = true;
                    next.push(m.target);
                }
            }
        }
        if let Some(max) = opts.max_nodes {
            if space.len() > max {
                return Err(NetworkError::BudgetExceeded {
                    nodes: space.len(),
                    edges: edges.len(),
                });
            }
        }
        frontier = next;
    }
    let labelled: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|(f, t, r, _)| (*f, *t, engine.rule(*r).weight.value()))
        .collect();
    let weights = path_union_weights(space.len(), &labelled);
    let (probs, log_z) = probabilities(&weights);
    let nodes = (0..space.len())
        .map(|id| NetworkNode {
            id,
            key: space.state(id).key(),
            instance: space.instance(id).clone(),
            weight: weights[id],
            probability: probs[id],
        })
        .collect();
    let edges = edges
        .into_iter()
        .zip(&labelled)
        .map(|((from, to, rule, unifier), l)| NetworkEdge {
            from,
            to,
            rule,
            unifier,
            label: l.2,
        })
        .collect();
    Ok(ChaseNetwork {
        nodes,
        edges,
        source: 0,
        log_z,
    })
}

/// Topological order of a DAG given as edge triples; panics on a cycle.
fn topological(n: usize, edges: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(f, t, _) in edges {
        indeg[t] += 1;
        out[f].push(t);
    }
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &t in &out[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    assert_eq!(order.len(), n, "chase network contains a cycle");
    order
}

/// For every node `W`, the sum of labels of the edges whose head is `W` or
/// an ancestor of `W`, each parallel edge counted once. All nodes are
/// assumed reachable from the source, so this is the edge union of all
/// source-to-`W` paths.
pub fn path_union_weights(n: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let words = n.div_ceil(64);
    let mut anc = vec![vec![0u64; words]; n];
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(f, t, _) in edges {
        incoming[t].push(f);
    }
    for v in topological(n, edges) {
        anc[v][v / 64] |= 1 << (v % 64);
        for &u in &incoming[v].clone() {
            let (a, b) = if u < v {
                let (lo, hi) = anc.split_at_mut(v);
                (&lo[u], &mut hi[0])
            } else {
                let (lo, hi) = anc.split_at_mut(u);
                (&hi[0], &mut lo[v])
            };
            for (x, y) in b.iter_mut().zip(a) {
                *x |= *y;
            }
        }
    }
    (0..n)
        .map(|w| {
            edges
                .iter()
                .filter(|(_, t, _)| anc[w][t / 64] >> (t % 64) & 1 == 1)
                .fold(0.0, |acc, (_, _, l)| acc + l)
        })
        .collect()
}

/// Weights of the nodes of a grounded network.
pub fn node_weights(net: &ChaseNetwork) -> Vec<f64> {
    net.nodes.iter().map(|n| n.weight).collect()
}

/// Normalised `exp(w)` with a max shift; also returns `ln Z`.
pub fn probabilities(weights: &[f64]) -> (Vec<f64>, f64) {
    if weights.is_empty() {
        return (Vec::new(), f64::NEG_INFINITY);
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

pub fn node_probabilities(net: &ChaseNetwork) -> Vec<f64> {
    net.nodes.iter().map(|n| n.probability).collect()
}

impl ChaseNetwork {
    pub fn node_by_key(&self, key: &InstanceKey) -> Option<&NetworkNode> {
        self.nodes.iter().find(|n| &n.key == key)
    }

    /// Total probability of the nodes containing `fact`; 0 if none does.
    pub fn marginal(&self, fact: &Fact) -> f64 {
        marginal(self.nodes.iter().map(|n| (&n.instance, n.probability)), fact)
    }

    /// Every fact of `pred` in some node, with its marginal, sorted.
    pub fn answer(&self, pred: &Pred) -> Vec<(Fact, f64)> {
        answers(self.nodes.iter().map(|n| (&n.instance, n.probability)), pred)
    }

    /// Textual dump: a header line, one line per node, one per edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "network nodes={} edges={} source={} log_z={:.12}",
            self.nodes.len(),
            self.edges.len(),
            self.source,
            self.log_z
        )
        .expect("string write");
        for n in &self.nodes {
            writeln!(
                out,
                "node {} weight={:.12} probability={:.12} facts={} key={}",
                n.id,
                n.weight,
                n.probability,
                n.instance.len(),
                n.key
            )
            .expect("string write");
        }
        for e in &self.edges {
            writeln!(
                out,
                "edge {} -> {} {} label={} {}",
                e.from, e.to, e.rule, e.label, e.unifier
            )
            .expect("string write");
        }
        out
    }
}

pub fn marginal<'a>(nodes: impl IntoIterator<Item = (&'a Instance, f64)>, fact: &Fact) -> f64 {
    nodes
        .into_iter()
        .filter(|(i, _)| i.contains(fact))
        .map(|(_, p)| p)
        .sum::<f64>()
        .min(1.0)
}

/// Facts of `pred` over weighted instances with their summed probability.
pub fn answers<'a>(nodes: impl IntoIterator<Item = (&'a Instance, f64)>, pred: &Pred) -> Vec<(Fact, f64)> {
    let mut acc: BTreeMap<Fact, f64> = BTreeMap::new();
    for (inst, p) in nodes {
        for f in inst.facts_of(pred) {
            *acc.entry(f).or_insert(0.0) += p;
        }
    }
    acc.into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(f, p)| (f, p.min(1.0)))
        .collect()
}

/// Parses nothing, checks the query, grounds the network and answers it.
pub fn answer_query(
    program: &Program,
    database: Instance,
    query: &Query,
    chase: ChaseOptions,
    opts: GroundOptions,
) -> Result<(ChaseNetwork, Vec<(Fact, f64)>), NetworkError> {
    let (program, pred) = rewrite_query(program, query).map_err(NetworkError::Query)?;
    let engine = Engine::with_options(program, chase)?;
    let net = ground_chase_network(&engine, database, opts)?;
    let answer = net.answer(&pred);
    Ok((net, answer))
}
