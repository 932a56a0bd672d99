//! Acceptance harness: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softchase_core::analysis::{check_stratified, check_warded, codes};
use softchase_core::bench::{
    builtin_programs, company_control_pkg, gen_scale_free, network_marginals, pp2dnf, pp2dnf_count, pp2dnf_query,
    ScaleFreeParams, ShareEdge, MOTHER, MOTHER_FACTS, RUNNING_EXAMPLE, RUNNING_EXAMPLE_FACTS, RUNNING_EXAMPLE_HARD,
};
use softchase_core::chase::{warded_chase, ChaseOptions, ChaseState, Engine};
use softchase_core::mcmc::{estimate_marginals, mcmc_chase, McmcConfig};
use softchase_core::model::NullId;
use softchase_core::network::{
    ground_chase_network, probabilities, ChaseNetwork, Direction, GroundOptions, StateSpace,
};
use softchase_core::parser::{parse_facts, parse_program, FactFormat};
use softchase_core::{Fact, Instance, Pred, Value};

type Outcome = Result<String, String>;

fn db(src: &str) -> Instance {
    parse_facts(src, FactFormat::Datalog).expect("facts parse")
}

fn running_network() -> Result<ChaseNetwork, String> {
    let engine = Engine::new(parse_program(RUNNING_EXAMPLE).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ground_chase_network(&engine, db(RUNNING_EXAMPLE_FACTS), GroundOptions::default()).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sym3(p: &str, a: &str, b: &str, c: &str) -> Fact {
    Fact::new(p, vec![Value::sym(a), Value::sym(b), Value::sym(c)])
}

fn worked_example_marginals() -> Outcome {
    let net = running_network()?;
    ensure(net.nodes.len() == 5, || format!("{} nodes", net.nodes.len()))?;
    let mut w: Vec<f64> = net.nodes.iter().map(|n| n.weight).collect();
    w.sort_by(f64::total_cmp);
    for (got, want) in w.iter().zip([0.0, 0.7, 1.5, 1.6, 4.1]) {
        ensure((got - want).abs() <= 1e-12, || format!("weight {got} vs {want}"))?;
    }
    let contract = net.marginal(&sym3("contract", "c", "l", "a"));
    let g = net.answer(&Pred::new("guarantee"));
    ensure(g.len() == 1, || format!("{} guarantee answers", g.len()))?;
    let guarantee = g[0].1;
    ensure(format!("{contract:.2}") == "0.99", || {
        format!("P(contract(c,l,a)) = {contract}")
    })?;
    ensure(format!("{guarantee:.2}") == "0.90", || {
        format!("P(guarantee(c,l,_)) = {guarantee}")
    })?;
    Ok(format!("contract {contract:.4}, guarantee {guarantee:.4}"))
}

fn logical_regression() -> Outcome {
    let engine = Engine::new(parse_program(RUNNING_EXAMPLE_HARD).unwrap()).map_err(|e| e.to_string())?;
    let out = warded_chase(&engine, db(RUNNING_EXAMPLE_FACTS)).map_err(|e| e.to_string())?;
    ensure(out.contains(&sym3("contract", "c", "l", "a")), || {
        "contract(c,l,a) missing".into()
    })?;
    let ok = out
        .facts_of(&Pred::new("guarantee"))
        .any(|f| f.args[0] == Value::sym("c") && f.args[1] == Value::sym("l") && f.args[2].is_null());
    ensure(ok, || "no guarantee(c,l,null)".into())?;
    Ok(format!("{} facts", out.len()))
}

fn warded_termination() -> Outcome {
    let program = parse_program(MOTHER).unwrap();
    let engine = Engine::new(program.clone()).map_err(|e| e.to_string())?;
    let out = warded_chase(&engine, db(MOTHER_FACTS)).map_err(|e| e.to_string())?;
    let hm: Vec<Fact> = out.facts_of(&Pred::new("hasMother")).collect();
    let constant_first = hm.iter().filter(|f| !f.args[0].is_null()).count();
    let two_nulls = hm.iter().filter(|f| f.args.iter().all(Value::is_null)).count();
    ensure(constant_first == 1 && two_nulls == 1, || {
        format!("{constant_first} / {two_nulls}")
    })?;
    let reference = common::oblivious_chase(&program, &db(MOTHER_FACTS), 4);
    ensure(
        common::shape_counts(out.facts()) == common::shape_counts(reference),
        || "differs from the depth-4 reference".into(),
    )?;
    let deeper = common::oblivious_chase(&program, &db(MOTHER_FACTS), 8);
    ensure(deeper.len() > 5, || "unrestricted chase stopped".into())?;
    Ok(format!("{} facts", out.len()))
}

fn pp2dnf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let nx = rng.random_range(1..=5);
        let ny = rng.random_range(1..=6 - nx);
        let mut clauses = BTreeSet::new();
        for _ in 0..rng.random_range(1..=nx * ny) {
            clauses.insert((rng.random_range(1..=nx), rng.random_range(1..=ny)));
        }
        let clauses: Vec<(usize, usize)> = clauses.into_iter().collect();
        let pkg = pp2dnf(nx, ny, &clauses);
        let engine = pkg.engine().map_err(|e| e.to_string())?;
        let net =
            ground_chase_network(&engine, pkg.database.clone(), GroundOptions::default()).map_err(|e| e.to_string())?;
        let want = pp2dnf_count(nx, ny, &clauses) as f64 / (1u64 << (nx + ny)) as f64;
        let err = (net.marginal(&pp2dnf_query()) - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("nx={nx} ny={ny} {clauses:?}: error {err}"))?;
    }
    Ok(format!("max error {worst:.1e}"))
}

fn mcmc_convergence() -> Outcome {
    let engine = Engine::new(parse_program(RUNNING_EXAMPLE).unwrap()).map_err(|e| e.to_string())?;
    let database = db(RUNNING_EXAMPLE_FACTS);
    let net = running_network()?;
    let exact = network_marginals(&net);
    let mut total = 0.0;
    for seed in 0..5 {
        let cfg = McmcConfig {
            iterations: 20_000,
            lambda: 5.0,
            seed,
            ..McmcConfig::default()
        };
        let s = mcmc_chase(&engine, database.clone(), cfg).map_err(|e| e.to_string())?;
        let est = estimate_marginals(&s).map_err(|e| e.to_string())?;
        let facts: BTreeSet<&Fact> = exact.keys().chain(est.keys()).collect();
        let err: f64 = facts
            .iter()
            .map(|f| (exact.get(*f).copied().unwrap_or(0.0) - est.get(*f).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
            / facts.len() as f64;
        total += err;
    }
    let mean = total / 5.0;
    ensure(mean < 0.05, || format!("mean error {mean:.4}"))?;
    let cfg = McmcConfig {
        iterations: 50_000,
        lambda: 5.0,
        seed: 11,
        ..McmcConfig::default()
    };
    let s = mcmc_chase(&engine, database, cfg).map_err(|e| e.to_string())?;
    let freq = s.visit_frequencies();
    let tv: f64 = net
        .nodes
        .iter()
        .map(|n| (n.probability - freq.get(&n.key).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0;
    let stray: f64 = freq
        .iter()
        .filter(|(k, _)| net.node_by_key(k).is_none())
        .map(|(_, p)| p)
        .sum();
    let tv = tv + stray / 2.0;
    ensure(tv < 0.08, || format!("total variation {tv:.4}"))?;
    Ok(format!("mean error {mean:.4}, TV {tv:.4}"))
}

fn chain_validity() -> Outcome {
    let mut counts = Vec::new();
    let running = {
        let engine = Engine::new(parse_program(RUNNING_EXAMPLE).unwrap()).map_err(|e| e.to_string())?;
        (engine, db(RUNNING_EXAMPLE_FACTS))
    };
    let cc = {
        let pkg = company_control_pkg(&[ShareEdge::new("a", "b", 0.6)]);
        (pkg.engine().map_err(|e| e.to_string())?, pkg.database)
    };
    for (engine, database) in [running, cc] {
        let net =
            ground_chase_network(&engine, database.clone(), GroundOptions::default()).map_err(|e| e.to_string())?;
        let cfg = McmcConfig {
            iterations: 5000,
            seed: 3,
            ..McmcConfig::default()
        };
        let s = mcmc_chase(&engine, database, cfg).map_err(|e| e.to_string())?;
        let bad = s
            .accepted
            .iter()
            .filter(|x| net.node_by_key(&s.nodes[x.node].0).is_none())
            .count();
        ensure(bad == 0, || format!("{bad} samples outside the network"))?;
        counts.push(s.accepted.len());
    }
    Ok(format!("{counts:?} accepted samples, all in network"))
}

fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let value = |rng: &mut R| {
        if rng.random_bool(0.5) {
            Value::sym(["a", "b", "c"][rng.random_range(0..3)])
        } else {
            Value::Null(NullId(rng.random_range(0..4)))
        }
    };
    let mut inst = Instance::new();
    for _ in 0..rng.random_range(0..6) {
        if rng.random_bool(0.5) {
            inst.insert(Fact::new("p", vec![value(rng)]));
        } else {
            let (x, y) = (value(rng), value(rng));
            inst.insert(Fact::new("e", vec![x, y]));
        }
    }
    inst
}

fn rename_nulls<R: Rng>(inst: &Instance, rng: &mut R, offset: u64) -> Instance {
    let mut perm = [0u64, 1, 2, 3];
    for i in (1..4).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    Instance::from_facts(inst.facts().map(|f| {
        let args = f
            .args
            .iter()
            .map(|v| match v {
                Value::Null(n) => Value::Null(NullId(perm[(n.0 % 100) as usize] + offset)),
                other => other.clone(),
            })
            .collect();
        Fact::new(f.pred.name(), args)
    }))
}

fn invariant_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let a = random_instance(&mut rng);
        let b = random_instance(&mut rng);
        let a1 = rename_nulls(&a, &mut rng, 100);
        let a2 = rename_nulls(&a1, &mut rng, 200);
        ensure(a.is_fact_isomorphic(&a), || "not reflexive".into())?;
        ensure(a.is_fact_isomorphic(&b) == b.is_fact_isomorphic(&a), || {
            "not symmetric".into()
        })?;
        ensure(
            a.is_fact_isomorphic(&a1) && a1.is_fact_isomorphic(&a2) && a.is_fact_isomorphic(&a2),
            || "not transitive".into(),
        )?;
    }

    let mut programs = Vec::new();
    while programs.len() < 10 {
        let src = common::random_program(&mut rng, true);
        let program = parse_program(&src).unwrap();
        if check_warded(&program).warded {
            programs.push((src, program, common::random_database(&mut rng)));
        }
    }
    let mut grounded = 0;
    for (src, program, database) in &programs {
        let reference =
            warded_chase(&Engine::new(program.clone()).unwrap(), database.clone()).map_err(|e| e.to_string())?;
        for seed in 0..20 {
            let opts = ChaseOptions {
                order_seed: Some(seed),
                ..ChaseOptions::default()
            };
            let engine = Engine::with_options(program.clone(), opts).map_err(|e| e.to_string())?;
            let out = warded_chase(&engine, database.clone()).map_err(|e| e.to_string())?;
            ensure(out.is_fact_isomorphic(&reference), || {
                format!("order {seed} differs on\n{src}")
            })?;
        }
        let soft: String = src
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i % 2 == 0 {
                    format!("0.{} :: {l}\n", i + 3)
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        let engine = Engine::new(parse_program(&soft).unwrap()).map_err(|e| e.to_string())?;
        let net = ground_chase_network(&engine, database.clone(), GroundOptions { max_nodes: Some(5000) })
            .map_err(|e| e.to_string())?;
        let total: f64 = net.nodes.iter().map(|n| n.probability).sum();
        ensure((total - 1.0).abs() <= 1e-12, || format!("sum of probabilities {total}"))?;
        grounded += 1;
    }
    for pkg in builtin_programs() {
        let engine = pkg.engine().map_err(|e| e.to_string())?;
        let net =
            ground_chase_network(&engine, pkg.database.clone(), GroundOptions::default()).map_err(|e| e.to_string())?;
        let total: f64 = net.nodes.iter().map(|n| n.probability).sum();
        ensure((total - 1.0).abs() <= 1e-12, || {
            format!("{}: sum of probabilities {total}", pkg.name)
        })?;
        grounded += 1;
    }

    for _ in 0..200 {
        let w: Vec<f64> = (0..rng.random_range(1..12))
            .map(|_| rng.random_range(-20.0..20.0))
            .collect();
        let c = rng.random_range(-50.0..50.0);
        let (p, _) = probabilities(&w);
        let (q, _) = probabilities(&w.iter().map(|x| x + c).collect::<Vec<_>>());
        ensure(p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12), || {
            "shift changed probabilities".into()
        })?;
    }

    let engine = Engine::new(parse_program(RUNNING_EXAMPLE).unwrap()).map_err(|e| e.to_string())?;
    let mut space = StateSpace::new(&engine, db(RUNNING_EXAMPLE_FACTS)).map_err(|e| e.to_string())?;
    let mut id = 0;
    while id < space.len() {
        for m in space.forward(id).map_err(|e| e.to_string())?.iter() {
            let back = space
                .step(m.target, Direction::Backward, m.rule, &m.unifier)
                .map_err(|e| e.to_string())?;
            ensure(back == Some(id), || format!("undo from {} lands on {back:?}", m.target))?;
        }
        id += 1;
    }
    let w0 = ChaseState::initial(&engine, db(RUNNING_EXAMPLE_FACTS)).map_err(|e| e.to_string())?;
    for (rule, matches) in w0.applicable_soft().map_err(|e| e.to_string())? {
        for m in matches {
            let fired = w0.fire(&m).map_err(|e| e.to_string())?;
            let undone = fired.undo_unifier(rule, &m.unifier).map_err(|e| e.to_string())?;
            ensure(undone.map(|u| u.key()) == Some(w0.key()), || {
                "undo is not inverse to fire".into()
            })?;
        }
    }
    Ok(format!("1000 pairs, 10 programs x 20 orders, {grounded} networks"))
}

fn static_analysis() -> Outcome {
    let pkgs = builtin_programs();
    ensure(pkgs.len() == 6, || format!("{} builtins", pkgs.len()))?;
    for pkg in &pkgs {
        let w = check_warded(&pkg.program);
        ensure(w.warded, || format!("{} not warded", pkg.name))?;
        check_stratified(&pkg.program).map_err(|_| format!("{} not stratified", pkg.name))?;
    }
    let non_warded =
        parse_program("p(X) -> exists Z: e(X,Z).\np(X) -> exists Z: f(X,Z).\ne(X,Y), f(X2,Y) -> q(Y).").unwrap();
    let v = check_warded(&non_warded);
    ensure(
        !v.warded && v.violations.iter().any(|x| x.code == codes::WARD_SHARES_HARMFUL),
        || "non-warded program accepted".into(),
    )?;
    let cyclic = parse_program("p(X), not q(X) -> q(X).").unwrap();
    let rejected = matches!(check_stratified(&cyclic), Err(v) if v.iter().any(|x| x.code == codes::NEGATIVE_CYCLE));
    ensure(rejected, || "negative cycle accepted".into())?;
    Ok(format!(
        "6 builtins accepted, {} and {} raised",
        codes::WARD_SHARES_HARMFUL,
        codes::NEGATIVE_CYCLE
    ))
}

fn cli_output(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_softchase"))
        .args(args)
        .env("SOFTCHASE_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?} exited with {:?}", o.status.code())
    })?;
    Ok(o.stdout)
}

fn determinism() -> Outcome {
    let infer = [
        "infer",
        "--builtin",
        "running-example",
        "--query",
        "contract",
        "--mode",
        "mcmc",
        "--iterations",
        "5000",
        "--seed",
        "42",
    ];
    let a = cli_output(&infer)?;
    ensure(!a.is_empty() && a == cli_output(&infer)?, || {
        "infer output differs".into()
    })?;
    let gen = ["gen", "--preset", "base", "--nodes", "100", "--seed", "1"];
    let g = cli_output(&gen)?;
    ensure(!g.is_empty() && g == cli_output(&gen)?, || "gen output differs".into())?;
    Ok(format!("{} + {} bytes identical", a.len(), g.len()))
}

fn benchmark_sanity() -> Outcome {
    let presets = [
        ScaleFreeParams::BASE,
        ScaleFreeParams::DENSE,
        ScaleFreeParams::SUPER_DENSE,
    ];
    for t in presets {
        ScaleFreeParams::new(250, t).map_err(|e| format!("{t:?} rejected: {e}"))?;
    }
    let mut perturbed = 0;
    for (a, b, c) in presets {
        for d in [1e-3, -1e-3, 0.05] {
            for t in [(a + d, b, c), (a, b + d, c), (a, b, c + d)] {
                ensure(ScaleFreeParams::new(250, t).is_err(), || format!("{t:?} accepted"))?;
                perturbed += 1;
            }
        }
    }
    let edges = |t| -> Result<f64, String> {
        let mut total = 0;
        for seed in 0..20 {
            total += gen_scale_free(ScaleFreeParams::new(250, t).unwrap(), seed)
                .map_err(|e| e.to_string())?
                .len();
        }
        Ok(total as f64 / 20.0)
    };
    let base = edges(ScaleFreeParams::BASE)?;
    let dense = edges(ScaleFreeParams::DENSE)?;
    ensure(dense > base, || format!("dense {dense} <= base {base}"))?;
    Ok(format!(
        "{perturbed} perturbed triples rejected, mean edges base {base:.1} dense {dense:.1}"
    ))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "1 worked-example marginals",
            worked_example_marginals,
            Duration::from_secs(1),
        ),
        (
            "2 logical-reasoning regression",
            logical_regression,
            Duration::from_secs(1),
        ),
        ("3 warded termination", warded_termination, Duration::from_secs(1)),
        ("4 pp2dnf oracle equivalence", pp2dnf_oracle, Duration::from_secs(30)),
        ("5 mcmc convergence", mcmc_convergence, Duration::from_secs(120)),
        ("6 chain validity", chain_validity, Duration::from_secs(60)),
        ("7 invariant suites", invariant_suites, Duration::from_secs(60)),
        ("8 static analysis regression", static_analysis, Duration::from_secs(1)),
        ("9 determinism", determinism, Duration::from_secs(60)),
        ("10 benchmark sanity", benchmark_sanity, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= limit {
                Ok(d)
            } else {
                Err(format!("{d}; over the {} s runtime limit", limit.as_secs()))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name} ({:.2} s): {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
