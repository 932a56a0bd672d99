//! Benchmark material: the scale-free ownership-graph generator, the
//! shipped example programs with demo facts, and the exact-vs-MCMC
//! evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chase::{ChaseError, Engine};
use crate::mcmc::{diagnostics, estimate_marginals, mcmc_chase, McmcConfig, McmcError};
use crate::model::{Fact, Instance, Program, Value};
use crate::network::{ground_chase_network, ChaseNetwork, GroundOptions, NetworkError};
use crate::parser::{parse_facts, parse_program, FactFormat};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("edge list: {0}")]
    Csv(String),
    #[error(transparent)]
    Chase(#[from] ChaseError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaleFreeParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScaleFreeParams {
    pub const BASE: (f64, f64, f64) = (0.71, 0.09, 0.2);
    pub const DENSE: (f64, f64, f64) = (0.51, 0.34, 0.15);
    pub const SUPER_DENSE: (f64, f64, f64) = (0.51, 0.44, 0.05);

    pub fn new(n: usize, (alpha, beta, gamma): (f64, f64, f64)) -> Result<ScaleFreeParams, BenchError> {
        let p = ScaleFreeParams { n, alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn preset(name: &str) -> Option<(f64, f64, f64)> {
        match name.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "base" => Some(Self::BASE),
            "dense" => Some(Self::DENSE),
            "superdense" => Some(Self::SUPER_DENSE),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(BenchError::InvalidParams(format!("{name} = {v} is outside (0,1)")));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(BenchError::InvalidParams(format!(
                "alpha + beta + gamma = {sum}, expected 1"
            )));
        }
        if self.n < 2 {
            return Err(BenchError::InvalidParams(format!("n = {} is below 2", self.n)));
        }
        Ok(())
    }
}

/// A directed ownership edge: `src` holds `share` of `dst`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShareEdge {
    pub src: String,
    pub dst: String,
    pub share: f64,
}

impl ShareEdge {
    pub fn new(src: &str, dst: &str, share: f64) -> ShareEdge {
        ShareEdge {
            src: src.to_string(),
            dst: dst.to_string(),
            share,
        }
    }
}

/// Offset added to every degree in preferential choices, so that fresh
/// nodes can be picked.
const DEGREE_OFFSET: f64 = 1.0;

/// Picks a node with probability proportional to `degree + DEGREE_OFFSET`,
/// where `ends` lists one entry per unit of degree.
fn preferential(rng: &mut ChaCha8Rng, ends: &[usize], nodes: usize) -> usize {
    let total = ends.len() as f64 + DEGREE_OFFSET * nodes as f64;
    if rng.random::<f64>() * total < ends.len() as f64 {
        ends[rng.random_range(0..ends.len())]
    } else {
        rng.random_range(0..nodes)
    }
}

/// Grows a directed scale-free graph until it has `n` nodes. `corruption`
/// is the share of edges whose share is pushed above 1.
pub fn gen_scale_free_with(params: ScaleFreeParams, seed: u64, corruption: f64) -> Result<Vec<ShareEdge>, BenchError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&corruption) {
        return Err(BenchError::InvalidParams(format!(
            "corruption rate {corruption} is outside [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = 2usize;
    let mut pairs: Vec<(usize, usize)> = vec![(0, 1)];
    let mut sources: Vec<usize> = vec![0];
    let mut targets: Vec<usize> = vec![1];
    while nodes < params.n {
        let r: f64 = rng.random();
        let (v, w) = if r < params.alpha {
            let w = preferential(&mut rng, &targets, nodes);
            nodes += 1;
            (nodes - 1, w)
        } else if r < params.alpha + params.beta {
            let v = preferential(&mut rng, &sources, nodes);
            let w = preferential(&mut rng, &targets, nodes);
            (v, w)
        } else {
            let v = preferential(&mut rng, &targets, nodes);
            let w = preferential(&mut rng, &sources, nodes);
            (v, w)
        };
        if v == w {
            continue;
        }
        pairs.push((v, w));
        sources.push(v);
        targets.push(w);
    }
    Ok(pairs
        .into_iter()
        .map(|(v, w)| {
            let base = 1.0 - rng.random::<f64>();
            let share = if rng.random::<f64>() < corruption {
                1.0 + base
            } else {
                base
            };
            ShareEdge {
                src: format!("c{v}"),
                dst: format!("c{w}"),
                share,
            }
        })
        .collect())
}

pub fn gen_scale_free(params: ScaleFreeParams, seed: u64) -> Result<Vec<ShareEdge>, BenchError> {
    gen_scale_free_with(params, seed, 0.0)
}

pub fn node_count(edges: &[ShareEdge]) -> usize {
    edges
        .iter()
        .flat_map(|e| [e.src.as_str(), e.dst.as_str()])
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn edges_to_csv(edges: &[ShareEdge]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["src", "dst", "share"]).expect("in-memory write");
    for e in edges {
        w.write_record([e.src.as_str(), e.dst.as_str(), &e.share.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn parse_edge_csv(text: &str) -> Result<Vec<ShareEdge>, BenchError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| BenchError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["src", "dst", "share"] {
        return Err(BenchError::Csv(format!(
            "expected header src,dst,share, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| BenchError::Csv(e.to_string()))?;
        let share: f64 = rec[2]
            .parse()
            .map_err(|_| BenchError::Csv(format!("row {}: share `{}` is not a number", i + 2, &rec[2])))?;
        out.push(ShareEdge::new(&rec[0], &rec[1], share));
    }
    Ok(out)
}

/// A probabilistic knowledge graph: a program with its database.
#[derive(Clone, Debug)]
pub struct Pkg {
    pub name: String,
    pub program: Program,
    pub database: Instance,
}

impl Pkg {
    pub fn from_sources(name: &str, program: &str, facts: &str) -> Pkg {
        Pkg {
            name: name.to_string(),
            program: parse_program(program).unwrap_or_else(|e| panic!("builtin program {name}: {e}")),
            database: parse_facts(facts, FactFormat::Datalog).unwrap_or_else(|e| panic!("builtin facts {name}: {e}")),
        }
    }

    pub fn engine(&self) -> Result<Arc<Engine>, ChaseError> {
        Engine::new(self.program.clone())
    }
}

pub const RUNNING_EXAMPLE_HARD: &str = "\
lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).
lenderType(X,Y), lenderClass(Y,Z) -> lenderType(X,Z).
contract(X,Y,Z), exposure(Y,W) -> contract(Z,W,X).
contract(X,Y,Z), regulatoryRestriction(W,Y) -> lenderType(X,W).
";

pub const RUNNING_EXAMPLE: &str = "\
0.9 :: lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).
0.8 :: lenderType(X,Y), lenderClass(Y,Z) -> lenderType(X,Z).
0.7 :: contract(X,Y,Z), exposure(Y,W) -> contract(Z,W,X).
contract(X,Y,Z), regulatoryRestriction(W,Y) -> lenderType(X,W).
";

pub const RUNNING_EXAMPLE_FACTS: &str = "\
contract(a,b,c).
exposure(b,l).
regulatoryRestriction(m,l).
lenderClass(m,n).
";

pub const MOTHER: &str = "\
person(X) -> exists Z: hasMother(X,Z).
hasMother(X,Y) -> person(Y).
";

pub const MOTHER_FACTS: &str = "person(alice).\n";

pub fn record_linkage_program(epsilon: f64) -> String {
    format!(
        "\
0.5 :: company(X), industry(X,Z), company(Y), industry(Y,Z) -> match(X,Y).
0.3 :: company(X), size(X,Z), company(Y), size(Y,W), sameSize(Z,W) -> match(X,Y).
0.9 :: company(X), company(Y), size(X,Z), size(Y,W), |Z - W| < {epsilon} -> sameSize(Z,W).
company(X) -> exists Z: group(X,Z).
company(X), company(Y), subsidiary(X,Y), group(Y,Z) -> group(X,Z).
0.7 :: company(X), company(Y), group(X,Z), group(Y,Z), industry(X,W), industry(Y,W) -> sameSize(X,Y).
"
    )
}

pub const RECORD_LINKAGE_EPSILON: f64 = 10.0;

pub const RECORD_LINKAGE_FACTS: &str = "\
company(acme).
company(apex).
industry(acme,steel).
industry(apex,steel).
size(acme,120).
size(apex,125).
subsidiary(apex,acme).
";

/// Accuracies and copy likelihoods are illustrative demo values.
pub const DATA_FUSION: &str = "\
0.9 :: accuracy(a,income).
0.6 :: accuracy(b,income).
0.7 :: accuracy(c,income).
0.5 :: copies(a,b,income).
0.4 :: copies(b,c,income).
copies(S,U,F) -> doesCopy(S,F).
vote(S,C,F,V), not doesCopy(S,F), accuracy(S,F) -> value(C,F,V).
copies(X,Z,F), copies(Z,Y,F) -> copies(X,Y,F).
";

pub const DATA_FUSION_FACTS: &str = "\
vote(a,acme,income,100).
vote(b,acme,income,100).
vote(c,acme,income,90).
";

pub const COMPANY_CONTROL: &str = "\
0.9 :: inputOwn(X,Y,S), 0 < S, S < 1 -> own(X,Y,S).
0.1 :: inputOwn(X,Y,S), (S < 0 or S > 1) -> exists Z: own(X,Y,Z), unreliable(X,Y).
own(X,Y,S), not unreliable(X,Y), S > 0.5 -> control(X,Y).
0.5 :: own(X,Y,S), unreliable(X,Y) -> control(X,Y).
control(X,Y), own(Y,Z,S), not unreliable(Y,Z), V = sum(S), V > 0.5 -> control(X,Z).
0.3 :: control(X,Y), own(Y,Z,S), unreliable(Y,Z) -> control(X,Z).
company(X) -> control(X,X).
";

pub const PP2DNF: &str = "\
0 :: r(X) -> rp(X).
0 :: t(X) -> tp(X).
rp(X), s(X,Y), tp(Y) -> q().
";

/// Ownership PKG over the companies named by `edges`.
pub fn company_control_pkg(edges: &[ShareEdge]) -> Pkg {
    company_control_pkg_with(&[], edges)
}

/// Ownership PKG declaring `companies` in addition to the edge endpoints.
pub fn company_control_pkg_with(companies: &[&str], edges: &[ShareEdge]) -> Pkg {
    let mut db = Instance::new();
    let names: BTreeSet<&str> = companies
        .iter()
        .copied()
        .chain(edges.iter().flat_map(|e| [e.src.as_str(), e.dst.as_str()]))
        .collect();
    for c in names {
        db.insert(Fact::new("company", vec![Value::sym(c)]));
    }
    for e in edges {
        db.insert(Fact::new(
            "inputOwn",
            vec![Value::sym(&e.src), Value::sym(&e.dst), Value::num(e.share)],
        ));
    }
    Pkg {
        name: "company-control".into(),
        program: parse_program(COMPANY_CONTROL).expect("company-control program"),
        database: db,
    }
}

/// PKG whose marginal of `q()` counts the satisfying assignments of the
/// positive partitioned 2-DNF over `x1..x{nx}`, `y1..y{ny}` with clauses
/// `xi & yj` for `(i, j)` in `clauses` (1-based).
pub fn pp2dnf(nx: usize, ny: usize, clauses: &[(usize, usize)]) -> Pkg {
    let mut db = Instance::new();
    for i in 1..=nx {
        db.insert(Fact::new("r", vec![Value::sym(&format!("x{i}"))]));
    }
    for j in 1..=ny {
        db.insert(Fact::new("t", vec![Value::sym(&format!("y{j}"))]));
    }
    for &(i, j) in clauses {
        assert!(i >= 1 && i <= nx && j >= 1 && j <= ny, "clause ({i},{j}) out of range");
        db.insert(Fact::new(
            "s",
            vec![Value::sym(&format!("x{i}")), Value::sym(&format!("y{j}"))],
        ));
    }
    Pkg {
        name: "pp2dnf".into(),
        program: parse_program(PP2DNF).expect("pp2dnf program"),
        database: db,
    }
}

/// Number of assignments satisfying the formula, by enumeration.
pub fn pp2dnf_count(nx: usize, ny: usize, clauses: &[(usize, usize)]) -> u64 {
    let n = nx + ny;
    (0u64..1 << n)
        .filter(|bits| {
            clauses
                .iter()
                .any(|&(i, j)| bits >> (i - 1) & 1 == 1 && bits >> (nx + j - 1) & 1 == 1)
        })
        .count() as u64
}

pub fn pp2dnf_query() -> Fact {
    Fact::new("q", vec![])
}

/// The shipped programs, each with its demo database, in a fixed order.
pub fn builtin_programs() -> Vec<Pkg> {
    let demo_edges = [
        ShareEdge::new("c0", "c1", 0.6),
        ShareEdge::new("c1", "c2", 0.3),
        ShareEdge::new("c0", "c2", 0.3),
        ShareEdge::new("c2", "c3", 1.5),
    ];
    vec![
        Pkg::from_sources("running-example", RUNNING_EXAMPLE, RUNNING_EXAMPLE_FACTS),
        Pkg::from_sources("mother", MOTHER, MOTHER_FACTS),
        Pkg::from_sources(
            "record-linkage",
            &record_linkage_program(RECORD_LINKAGE_EPSILON),
            RECORD_LINKAGE_FACTS,
        ),
        Pkg::from_sources("data-fusion", DATA_FUSION, DATA_FUSION_FACTS),
        company_control_pkg(&demo_edges),
        pp2dnf(1, 1, &[(1, 1)]),
    ]
}

pub fn builtin(name: &str) -> Option<Pkg> {
    builtin_programs().into_iter().find(|p| p.name == name)
}

/// Marginal of every fact appearing in some node of `net`.
pub fn network_marginals(net: &ChaseNetwork) -> BTreeMap<Fact, f64> {
    let mut out: BTreeMap<Fact, f64> = BTreeMap::new();
    for n in &net.nodes {
        for f in n.instance.facts() {
            *out.entry(f).or_insert(0.0) += n.probability;
        }
    }
    for v in out.values_mut() {
        *v = v.min(1.0);
    }
    out
}

/// Mean absolute difference in percent over the facts of either map that
/// are not in `database`; a fact missing from one side counts as 0.
pub fn error_rate(exact: &BTreeMap<Fact, f64>, estimate: &BTreeMap<Fact, f64>, database: &Instance) -> f64 {
    let facts: BTreeSet<&Fact> = exact
        .keys()
        .chain(estimate.keys())
        .filter(|f| !database.contains(f))
        .collect();
    if facts.is_empty() {
        return 0.0;
    }
    let total: f64 = facts
        .iter()
        .map(|f| (exact.get(*f).copied().unwrap_or(0.0) - estimate.get(*f).copied().unwrap_or(0.0)).abs())
        .sum();
    100.0 * total / facts.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    pub name: String,
    pub mcmc: McmcConfig,
}

/// One `N_i` configuration per multiplier: `i` times the database size.
pub fn iteration_configs(pkg: &Pkg, multipliers: &[usize], base: McmcConfig) -> Vec<EvalConfig> {
    multipliers
        .iter()
        .map(|&i| EvalConfig {
            name: format!("N_{i}"),
            mcmc: McmcConfig {
                iterations: (i * pkg.database.len()).max(1),
                ..base
            },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactEstimate {
    pub fact: String,
    pub exact: Option<f64>,
    pub estimate: f64,
    pub abs_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigReport {
    pub name: String,
    pub iterations: usize,
    pub repetitions: usize,
    /// Mean over repetitions, in percent; `None` without exact marginals.
    pub error_rate: Option<f64>,
    pub acceptance_rate: f64,
    pub mean_time_ms: f64,
    pub facts: Vec<FactEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub pkg: String,
    pub exact_available: bool,
    pub exact_time_ms: Option<f64>,
    pub exact_nodes: Option<usize>,
    pub configs: Vec<ConfigReport>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub skip_exact: bool,
    pub ground: GroundOptions,
}

/// Estimated marginals, acceptance rate and wall-clock milliseconds of one run.
type RunResult = (BTreeMap<Fact, f64>, f64, f64);

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// One row per configuration.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "pkg",
            "config",
            "iterations",
            "repetitions",
            "error_rate_pct",
            "acceptance_rate",
            "mean_time_ms",
            "exact_time_ms",
        ])
        .expect("in-memory write");
        for c in &self.configs {
            w.write_record([
                self.pkg.clone(),
                c.name.clone(),
                c.iterations.to_string(),
                c.repetitions.to_string(),
                fmt_opt(c.error_rate),
                format!("{:.6}", c.acceptance_rate),
                format!("{:.3}", c.mean_time_ms),
                self.exact_time_ms
                    .map_or_else(|| "NA".to_string(), |t| format!("{t:.3}")),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    /// One row per configuration and fact.
    pub fn facts_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["config", "fact", "exact", "estimate", "abs_error"])
            .expect("in-memory write");
        for c in &self.configs {
            for f in &c.facts {
                w.write_record([
                    c.name.clone(),
                    f.fact.clone(),
                    fmt_opt(f.exact),
                    format!("{:.6}", f.estimate),
                    fmt_opt(f.abs_error),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>5} {:>10} {:>10} {:>12}",
            "config", "iterations", "reps", "error%", "accept", "time ms"
        );
        for c in &self.configs {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>5} {:>10} {:>10.4} {:>12.1}",
                c.name,
                c.iterations,
                c.repetitions,
                c.error_rate.map_or_else(|| "NA".to_string(), |e| format!("{e:.3}")),
                c.acceptance_rate,
                c.mean_time_ms
            );
        }
        if let Some(t) = self.exact_time_ms {
            let _ = writeln!(s, "exact: {} nodes in {t:.1} ms", self.exact_nodes.unwrap_or(0));
        } else {
            let _ = writeln!(s, "exact: unavailable");
        }
        s
    }
}

/// Runs exact inference (unless skipped or over budget) and every MCMC
/// configuration `repetitions` times with seeds `seed, seed+1, ...`.
pub fn evaluate(
    pkg: &Pkg,
    configs: &[EvalConfig],
    repetitions: usize,
    opts: EvalOptions,
) -> Result<EvalReport, BenchError> {
    let engine = pkg.engine()?;
    let reps = repetitions.max(1);
    let (exact, exact_time_ms, exact_nodes) = if opts.skip_exact {
        (None, None, None)
    } else {
        let start = Instant::now();
        match ground_chase_network(&engine, pkg.database.clone(), opts.ground) {
            Ok(net) => (
                Some(network_marginals(&net)),
                Some(start.elapsed().as_secs_f64() * 1e3),
                Some(net.nodes.len()),
            ),
            Err(NetworkError::BudgetExceeded { nodes, edges }) => {
                log::warn!("exact phase over budget ({nodes} nodes, {edges} edges); error rate unavailable");
                (None, None, None)
            }
            Err(e) => return Err(e.into()),
        }
    };
    let mut reports = Vec::new();
    for cfg in configs {
        cfg.mcmc.validate()?;
        let runs: Vec<Result<RunResult, McmcError>> = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let mc = McmcConfig {
                    seed: cfg.mcmc.seed.wrapping_add(r),
                    ..cfg.mcmc
                };
                let start = Instant::now();
                let samples = mcmc_chase(&engine, pkg.database.clone(), mc)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                Ok((estimate_marginals(&samples)?, diagnostics(&samples).acceptance_rate, ms))
            })
            .collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let error_rate = exact.as_ref().map(|ex| {
            runs.iter()
                .map(|(est, _, _)| error_rate(ex, est, &pkg.database))
                .sum::<f64>()
                / reps as f64
        });
        let mut facts: BTreeSet<Fact> = runs.iter().flat_map(|(est, _, _)| est.keys().cloned()).collect();
        if let Some(ex) = &exact {
            facts.extend(ex.keys().cloned());
        }
        let facts = facts
            .into_iter()
            .filter(|f| !pkg.database.contains(f))
            .map(|f| {
                let estimate = runs
                    .iter()
                    .map(|(est, _, _)| est.get(&f).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / reps as f64;
                let ex = exact.as_ref().map(|m| m.get(&f).copied().unwrap_or(0.0));
                FactEstimate {
                    fact: f.to_string(),
                    exact: ex,
                    estimate,
                    abs_error: ex.map(|e| (e - estimate).abs()),
                }
            })
            .collect();
        reports.push(ConfigReport {
            name: cfg.name.clone(),
            iterations: cfg.mcmc.iterations,
            repetitions: reps,
            error_rate,
            acceptance_rate: runs.iter().map(|r| r.1).sum::<f64>() / reps as f64,
            mean_time_ms: runs.iter().map(|r| r.2).sum::<f64>() / reps as f64,
            facts,
        });
    }
    Ok(EvalReport {
        pkg: pkg.name.clone(),
        exact_available: exact.is_some(),
        exact_time_ms,
        exact_nodes,
        configs: reports,
    })
}
