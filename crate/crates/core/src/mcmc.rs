//! Approximate marginal inference with the MCMC-chase: a Metropolis-Hastings
//! walk over chase-network nodes mixing forward chase steps and undo steps.
//!
//! Each iteration draws a Poisson number of inner steps. An inner step picks
//! a direction, draws one `μ` shared by all candidate rules, selects the
//! rules whose threshold admits `μ`, picks one unifier per selected rule and
//! applies the picks in rule order, skipping stale ones. The proposal is
//! accepted with probability `min(1, α)`.
//!
//! By default the target weight of a node is the path-union weight of the
//! network (computed on the sub-network below the node) and `α` carries the
//! Hastings ratio of the inner-step path, so the chain samples the exact
//! node distribution. [`WeightMode::Trajectory`] with `hastings = false`
//! runs the literal algorithm: cumulative applied weights and
//! `α = exp(w(T) - w(D))`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chase::{ChaseError, Engine};
use crate::model::{Fact, Instance, InstanceKey, Pred, RuleId, Substitution};
use crate::network::{probabilities, ChaseNetwork, Direction, StateSpace};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum McmcError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no accepted samples")]
    Empty,
    #[error(transparent)]
    Chase(#[from] ChaseError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Edge-union weight of every path from the source, as in the network.
    PathUnion,
    /// Sum of the weights of the fired soft applications.
    Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
    /// An inner step moves forward when its `δ` draw is below this value.
    pub backward_threshold: f64,
    pub weight: WeightMode,
    pub hastings: bool,
    /// Largest number of unifier combinations enumerated for one proposal
    /// probability; beyond it the step is left uncorrected.
    pub combo_cap: usize,
    /// Largest sub-network explored for one path-union weight, also bounding
    /// `2^k` for a node with `k` soft applications; beyond it the trajectory
    /// weight is used.
    pub union_budget: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 1000,
            lambda: 5.0,
            seed: 0,
            backward_threshold: 0.5,
            weight: WeightMode::PathUnion,
            hastings: true,
            combo_cap: 4096,
            union_budget: 4096,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.iterations == 0 {
            return Err(McmcError::Config("iterations must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(McmcError::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.backward_threshold) {
            return Err(McmcError::Config(format!(
                "backward threshold must lie in [0,1], got {}",
                self.backward_threshold
            )));
        }
        if self.combo_cap == 0 {
            return Err(McmcError::Config("combo cap must be at least 1".into()));
        }
        Ok(())
    }

    /// The literal algorithm: trajectory weights, no Hastings correction.
    pub fn literal(mut self) -> McmcConfig {
        self.weight = WeightMode::Trajectory;
        self.hastings = false;
        self
    }
}

/// Whether a rule of weight `w` is selected by the shared draw `mu`.
pub fn selects(w: f64, mu: f64) -> bool {
    if w > 0.0 {
        mu < 1.0 - (-w).exp()
    } else if w < 0.0 {
        mu > 1.0 - w.exp()
    } else {
        false
    }
}

/// Selects among `(rule, weight, number of unifiers)` candidates with one
/// shared `μ` and draws one unifier index per selected rule.
pub fn sample_rules<R: Rng + ?Sized>(candidates: &[(RuleId, f64, usize)], rng: &mut R) -> Vec<(RuleId, usize)> {
    let mu: f64 = rng.random();
    pick(candidates, mu, rng)
}

fn pick<R: Rng + ?Sized>(candidates: &[(RuleId, f64, usize)], mu: f64, rng: &mut R) -> Vec<(RuleId, usize)> {
    candidates
        .iter()
        .filter(|(_, w, n)| *n > 0 && selects(*w, mu))
        .map(|&(r, _, n)| (r, rng.random_range(0..n)))
        .collect()
}

/// An accepted sample; `node` indexes [`SampleSet::nodes`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub iteration: usize,
    pub node: usize,
    pub weight: f64,
    pub trajectory_weight: f64,
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    /// Distinct instances referenced by samples and trace.
    pub nodes: Vec<(InstanceKey, Instance)>,
    pub accepted: Vec<Sample>,
    /// Node after every iteration, rejected proposals repeating the state.
    pub trace: Vec<usize>,
    pub proposals: usize,
    pub uncorrected_steps: usize,
    pub weight_fallbacks: usize,
}

impl PartialEq for SampleSet {
    fn eq(&self, other: &SampleSet) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| a.0 == b.0)
            && self.accepted == other.accepted
            && self.trace == other.trace
            && self.proposals == other.proposals
            && self.uncorrected_steps == other.uncorrected_steps
            && self.weight_fallbacks == other.weight_fallbacks
    }
}

impl SampleSet {
    fn empty() -> SampleSet {
        SampleSet {
            nodes: Vec::new(),
            accepted: Vec::new(),
            trace: Vec::new(),
            proposals: 0,
            uncorrected_steps: 0,
            weight_fallbacks: 0,
        }
    }

    pub fn acceptance_count(&self) -> usize {
        self.accepted.len()
    }

    /// Every network node as one accepted sample with its exact weight.
    pub fn from_network(net: &ChaseNetwork) -> SampleSet {
        let mut s = SampleSet::empty();
        for (i, n) in net.nodes.iter().enumerate() {
            s.nodes.push((n.key, n.instance.clone()));
            s.accepted.push(Sample {
                iteration: i,
                node: i,
                weight: n.weight,
                trajectory_weight: n.weight,
            });
            s.trace.push(i);
        }
        s.proposals = net.nodes.len();
        s
    }

    /// Pools chains; node indices of `other` are remapped by key.
    pub fn merge(&mut self, other: SampleSet) {
        let mut index: HashMap<InstanceKey, usize> = self.nodes.iter().enumerate().map(|(i, (k, _))| (*k, i)).collect();
        let remap: Vec<usize> = other
            .nodes
            .into_iter()
            .map(|(k, inst)| {
                *index.entry(k).or_insert_with(|| {
                    self.nodes.push((k, inst));
                    self.nodes.len() - 1
                })
            })
            .collect();
        let offset = self.proposals;
        self.accepted.extend(other.accepted.into_iter().map(|s| Sample {
            iteration: s.iteration + offset,
            node: remap[s.node],
            ..s
        }));
        self.trace.extend(other.trace.into_iter().map(|n| remap[n]));
        self.proposals += other.proposals;
        self.uncorrected_steps += other.uncorrected_steps;
        self.weight_fallbacks += other.weight_fallbacks;
    }

    /// Relative frequency of each visited node in the trace, by key.
    pub fn visit_frequencies(&self) -> BTreeMap<InstanceKey, f64> {
        let mut out = BTreeMap::new();
        let n = self.trace.len() as f64;
        for &i in &self.trace {
            *out.entry(self.nodes[i].0).or_insert(0.0) += 1.0 / n;
        }
        out
    }

    /// Sample trace as CSV: one row per accepted sample.
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "weight", "trajectory_weight", "instance_size", "key"])
            .expect("in-memory write");
        for s in &self.accepted {
            w.write_record([
                s.iteration.to_string(),
                s.weight.to_string(),
                s.trajectory_weight.to_string(),
                self.nodes[s.node].1.len().to_string(),
                self.nodes[s.node].0.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }
}

/// Node distribution over the distinct accepted samples: their recorded
/// weights normalised locally.
pub fn sampled_distribution(samples: &SampleSet) -> Result<Vec<(usize, f64)>, McmcError> {
    let mut weight: BTreeMap<usize, f64> = BTreeMap::new();
    for s in &samples.accepted {
        weight.entry(s.node).or_insert(s.weight);
    }
    if weight.is_empty() {
        return Err(McmcError::Empty);
    }
    let ws: Vec<f64> = weight.values().copied().collect();
    let (p, _) = probabilities(&ws);
    Ok(weight.keys().copied().zip(p).collect())
}

/// Marginals of every fact of every distinct accepted sample.
pub fn estimate_marginals(samples: &SampleSet) -> Result<BTreeMap<Fact, f64>, McmcError> {
    let dist = sampled_distribution(samples)?;
    let mut out: BTreeMap<Fact, f64> = BTreeMap::new();
    for (node, p) in dist {
        for f in samples.nodes[node].1.facts() {
            *out.entry(f).or_insert(0.0) += p;
        }
    }
    for v in out.values_mut() {
        *v = v.min(1.0);
    }
    Ok(out)
}

/// Marginal of `fact` from visit frequencies in the trace.
pub fn frequency_marginal(samples: &SampleSet, fact: &Fact) -> f64 {
    if samples.trace.is_empty() {
        return 0.0;
    }
    let hits = samples
        .trace
        .iter()
        .filter(|&&n| samples.nodes[n].1.contains(fact))
        .count();
    hits as f64 / samples.trace.len() as f64
}

/// Estimated answers for `pred`, sorted by fact.
pub fn estimate_answer(samples: &SampleSet, pred: &Pred) -> Result<Vec<(Fact, f64)>, McmcError> {
    Ok(estimate_marginals(samples)?
        .into_iter()
        .filter(|(f, p)| &f.pred == pred && *p > 0.0)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub proposals: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub distinct_nodes: usize,
    pub uncorrected_steps: usize,
    pub weight_fallbacks: usize,
    pub weight_trace: Vec<f64>,
}

pub fn diagnostics(samples: &SampleSet) -> Diagnostics {
    let distinct: HashSet<usize> = samples.accepted.iter().map(|s| s.node).collect();
    Diagnostics {
        proposals: samples.proposals,
        accepted: samples.accepted.len(),
        acceptance_rate: if samples.proposals == 0 {
            0.0
        } else {
            samples.accepted.len() as f64 / samples.proposals as f64
        },
        distinct_nodes: distinct.len(),
        uncorrected_steps: samples.uncorrected_steps,
        weight_fallbacks: samples.weight_fallbacks,
        weight_trace: samples.accepted.iter().map(|s| s.weight).collect(),
    }
}

type StepDist = Option<Arc<HashMap<usize, f64>>>;

/// The walker: state space cache plus per-node weights and proposal
/// distributions.
pub struct Chain {
    space: StateSpace,
    config: McmcConfig,
    union_weight: HashMap<usize, Option<f64>>,
    dists: HashMap<(usize, Direction), StepDist>,
}

impl Chain {
    pub fn new(engine: &Arc<Engine>, database: Instance, config: McmcConfig) -> Result<Chain, McmcError> {
        config.validate()?;
        Ok(Chain {
            space: StateSpace::new(engine, database)?,
            config,
            union_weight: HashMap::new(),
            dists: HashMap::new(),
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    fn rule_weight(&self, r: RuleId) -> f64 {
        self.space.engine().rule(r).weight.value()
    }

    /// Candidates grouped by rule in rule order.
    fn grouped(candidates: &[(RuleId, Substitution)]) -> Vec<(RuleId, Vec<&Substitution>)> {
        let mut by: BTreeMap<RuleId, Vec<&Substitution>> = BTreeMap::new();
        for (r, u) in candidates {
            by.entry(*r).or_default().push(u);
        }
        by.into_iter().collect()
    }

    /// Applies `picks` from `start` one after the other, skipping stale ones.
    fn apply(&mut self, start: usize, dir: Direction, picks: &[(RuleId, Substitution)]) -> Result<usize, ChaseError> {
        let mut cur = start;
        for (rule, unifier) in picks {
            if let Some(t) = self.space.step(cur, dir, *rule, unifier)? {
                cur = t;
            }
        }
        Ok(cur)
    }

    /// Endpoint distribution of one inner step from `x` in direction `dir`,
    /// or `None` when it has too many unifier combinations.
    fn step_distribution(&mut self, x: usize, dir: Direction) -> Result<StepDist, ChaseError> {
        if let Some(d) = self.dists.get(&(x, dir)) {
            return Ok(d.clone());
        }
        let cands = self.space.candidates(x, dir)?;
        let groups: Vec<(RuleId, f64, Vec<Substitution>)> = Chain::grouped(&cands)
            .into_iter()
            .map(|(r, us)| (r, self.rule_weight(r), us.into_iter().cloned().collect()))
            .collect();
        let mut cuts = vec![0.0, 1.0];
        for (_, w, _) in &groups {
            let t = if *w > 0.0 {
                1.0 - (-w).exp()
            } else if *w < 0.0 {
                1.0 - w.exp()
            } else {
                continue;
            };
            if t > 0.0 && t < 1.0 {
                cuts.push(t);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut dist: HashMap<usize, f64> = HashMap::new();
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let sel: Vec<&(RuleId, f64, Vec<Substitution>)> =
                groups.iter().filter(|(_, w, _)| selects(*w, mid)).collect();
            let combos = sel
                .iter()
                .try_fold(1usize, |acc, (_, _, us)| acc.checked_mul(us.len()))
                .filter(|&c| c <= self.config.combo_cap);
            let Some(combos) = combos else {
                self.dists.insert((x, dir), None);
                return Ok(None);
            };
            let share = (b - a) / combos as f64;
            for c in 0..combos {
                let mut rest = c;
                let picks: Vec<(RuleId, Substitution)> = sel
                    .iter()
                    .map(|(r, _, us)| {
                        let i = rest % us.len();
                        rest /= us.len();
                        (*r, us[i].clone())
                    })
                    .collect();
                let end = self.apply(x, dir, &picks)?;
                *dist.entry(end).or_insert(0.0) += share;
            }
        }
        let d = Some(Arc::new(dist));
        self.dists.insert((x, dir), d.clone());
        Ok(d)
    }

    /// Probability that one inner step moves `x` to `y`.
    fn kernel(&mut self, x: usize, y: usize) -> Result<Option<f64>, ChaseError> {
        let th = self.config.backward_threshold;
        let f = self.step_distribution(x, Direction::Forward)?;
        let b = self.step_distribution(x, Direction::Backward)?;
        Ok(match (f, b) {
            (Some(f), Some(b)) => {
                Some(th * f.get(&y).copied().unwrap_or(0.0) + (1.0 - th) * b.get(&y).copied().unwrap_or(0.0))
            }
            _ => None,
        })
    }

    /// Path-union weight of node `t`, computed on the sub-network of nodes
    /// whose facts are contained in those of `t`.
    fn path_union_weight(&mut self, t: usize) -> Result<Option<f64>, ChaseError> {
        if let Some(w) = self.union_weight.get(&t) {
            return Ok(*w);
        }
        let apps = self.space.state(t).soft_apps().len();
        if apps >= usize::BITS as usize || 1usize << apps > self.config.union_budget {
            self.union_weight.insert(t, None);
            return Ok(None);
        }
        let target = self.space.instance(t).clone();
        let mut seen: HashSet<usize> = HashSet::from([0]);
        let mut queue = VecDeque::from([0usize]);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        let mut expanded = 0usize;
        let mut result = None;
        if self.space.instance(0).is_subset_of(&target) {
            while let Some(x) = queue.pop_front() {
                if x == t {
                    continue;
                }
                expanded += 1;
                if expanded > self.config.union_budget {
                    queue.clear();
                    edges.clear();
                    seen.clear();
                    break;
                }
                for m in self.space.forward(x)?.iter() {
                    if !self.space.instance(m.target).is_subset_of(&target) {
                        continue;
                    }
                    edges.push((x, m.target, self.rule_weight(m.rule)));
                    if seen.insert(m.target) {
                        queue.push_back(m.target);
                    }
                }
            }
            if seen.contains(&t) {
                result = Some(union_weight_of(&edges, t));
            }
        }
        self.union_weight.insert(t, result);
        Ok(result)
    }

    /// Target weight of node `x` under the configured weight mode; the flag
    /// reports a fallback to the trajectory weight.
    fn weight(&mut self, x: usize) -> Result<(f64, bool), ChaseError> {
        let traj = self.space.state(x).trajectory_weight();
        match self.config.weight {
            WeightMode::Trajectory => Ok((traj, false)),
            WeightMode::PathUnion => Ok(match self.path_union_weight(x)? {
                Some(w) => (w, false),
                None => (traj, true),
            }),
        }
    }

    /// Runs the configured number of iterations from the source node.
    pub fn run(&mut self) -> Result<SampleSet, McmcError> {
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let poisson = Poisson::new(cfg.lambda).map_err(|e| McmcError::Config(e.to_string()))?;
        let mut out = SampleSet::empty();
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut node_of = |out: &mut SampleSet, space: &StateSpace, id: usize| -> usize {
            *local.entry(id).or_insert_with(|| {
                let st = space.state(id);
                out.nodes.push((st.key(), st.instance().clone()));
                out.nodes.len() - 1
            })
        };
        let mut current = 0usize;
        let (mut w_cur, fb) = self.weight(current)?;
        out.weight_fallbacks += usize::from(fb);
        for iter in 0..cfg.iterations {
            let steps = poisson.sample(&mut rng) as u64;
            let mut path = vec![current];
            let mut t = current;
            for _ in 0..steps {
                let delta: f64 = rng.random();
                let dir = if delta < cfg.backward_threshold {
                    Direction::Forward
                } else {
                    Direction::Backward
                };
                let cands = self.space.candidates(t, dir)?;
                let groups = Chain::grouped(&cands);
                let candidates: Vec<(RuleId, f64, usize)> = groups
                    .iter()
                    .map(|(r, ms)| (*r, self.rule_weight(*r), ms.len()))
                    .collect();
                let picks: Vec<(RuleId, Substitution)> = sample_rules(&candidates, &mut rng)
                    .into_iter()
                    .map(|(r, i)| {
                        let us = &groups.iter().find(|(g, _)| *g == r).expect("selected rule").1;
                        (r, us[i].clone())
                    })
                    .collect();
                t = self.apply(t, dir, &picks)?;
                path.push(t);
            }
            let (w_t, fb) = self.weight(t)?;
            out.weight_fallbacks += usize::from(fb);
            let mut log_alpha = w_t - w_cur;
            if cfg.hastings {
                let mut corrected = true;
                for pair in path.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if a == b {
                        continue;
                    }
                    match (self.kernel(a, b)?, self.kernel(b, a)?) {
                        (Some(fwd), Some(rev)) => log_alpha += rev.ln() - fwd.ln(),
                        _ => corrected = false,
                    }
                }
                if !corrected {
                    log_alpha = w_t - w_cur;
                    out.uncorrected_steps += 1;
                }
            }
            let u: f64 = rng.random();
            out.proposals += 1;
            if log_alpha >= 0.0 || u < log_alpha.exp() {
                current = t;
                w_cur = w_t;
                let node = node_of(&mut out, &self.space, t);
                out.accepted.push(Sample {
                    iteration: iter,
                    node,
                    weight: w_t,
                    trajectory_weight: self.space.state(t).trajectory_weight(),
                });
            }
            let node = node_of(&mut out, &self.space, current);
            out.trace.push(node);
        }
        Ok(out)
    }
}

/// Sum of labels of the edges whose head is `t` or one of its ancestors.
fn union_weight_of(edges: &[(usize, usize, f64)], t: usize) -> f64 {
    let mut incoming: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(f, to, _) in edges {
        incoming.entry(to).or_default().push(f);
    }
    let mut anc: HashSet<usize> = HashSet::from([t]);
    let mut stack = vec![t];
    while let Some(v) = stack.pop() {
        for &u in incoming.get(&v).into_iter().flatten() {
            if anc.insert(u) {
                stack.push(u);
            }
        }
    }
    edges
        .iter()
        .filter(|(_, to, _)| anc.contains(to))
        .fold(0.0, |acc, (_, _, l)| acc + l)
}

/// One chain of the MCMC-chase.
pub fn mcmc_chase(engine: &Arc<Engine>, database: Instance, config: McmcConfig) -> Result<SampleSet, McmcError> {
    Chain::new(engine, database, config)?.run()
}

/// Independent chains with seeds `seed, seed+1, ...`, run in parallel and
/// merged in seed order.
pub fn mcmc_chains(
    engine: &Arc<Engine>,
    database: &Instance,
    config: McmcConfig,
    chains: usize,
) -> Result<SampleSet, McmcError> {
    config.validate()?;
    let sets: Vec<Result<SampleSet, McmcError>> = (0..chains.max(1) as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = McmcConfig {
                seed: config.seed.wrapping_add(i),
                ..config
            };
            mcmc_chase(engine, database.clone(), cfg)
        })
        .collect();
    let mut iter = sets.into_iter();
    let mut merged = iter.next().expect("at least one chain")?;
    for s in iter {
        merged.merge(s?);
    }
    Ok(merged)
}
