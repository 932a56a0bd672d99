use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use softchase_core::analysis::{analyze, rewrite_query, StratifyOptions, Violation};
use softchase_core::bench::{
    builtin, builtin_programs, company_control_pkg, edges_to_csv, evaluate, gen_scale_free_with, iteration_configs,
    parse_edge_csv, BenchError, EvalOptions, Pkg, ScaleFreeParams,
};
use softchase_core::chase::{close_under_hard_rules, warded_chase, ChaseError, ChaseOptions, Engine};
use softchase_core::mcmc::{
    diagnostics, estimate_answer, estimate_marginals, mcmc_chains, McmcConfig, McmcError, WeightMode,
};
use softchase_core::network::{answer_query, ground_chase_network, GroundOptions, NetworkError};
use softchase_core::parser::{
    parse_facts, parse_program, parse_query, serialize_answer, serialize_facts, FactFormat, NullNamer,
};
use softchase_core::{Fact, Instance, Program};

use crate::{
    ChaseArgs, CheckArgs, Cli, Command, EvalArgs, Format, GenArgs, GroundArgs, InferArgs, Input, McmcArgs, Mode,
    SampleArgs, WeightArg,
};

pub const EXIT_ANALYSIS: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

fn input_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        error: e.into(),
    }
}

fn report_violations(v: &[Violation]) {
    for x in v {
        eprintln!("{x}");
    }
}

impl From<ChaseError> for Failure {
    fn from(e: ChaseError) -> Failure {
        let code = match &e {
            ChaseError::Rejected(v) => {
                report_violations(v);
                EXIT_ANALYSIS
            }
            ChaseError::StepBudget(_) => EXIT_BUDGET,
            _ => EXIT_INPUT,
        };
        Failure { code, error: e.into() }
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Failure {
        match e {
            NetworkError::Chase(c) => c.into(),
            NetworkError::BudgetExceeded { .. } => Failure {
                code: EXIT_BUDGET,
                error: e.into(),
            },
            NetworkError::Query(ref v) => {
                report_violations(v);
                Failure {
                    code: EXIT_ANALYSIS,
                    error: e.into(),
                }
            }
        }
    }
}

impl From<McmcError> for Failure {
    fn from(e: McmcError) -> Failure {
        match e {
            McmcError::Chase(c) => c.into(),
            other => input_err(other),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Failure {
        match e {
            BenchError::Chase(c) => c.into(),
            BenchError::Network(n) => n.into(),
            BenchError::Mcmc(m) => m.into(),
            other => input_err(other),
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    inputs: Vec<String>,
    seed: Option<u64>,
    config: serde_json::Value,
    engine_version: &'static str,
    wall_clock_ms: f64,
}

struct Run {
    command: &'static str,
    inputs: Vec<String>,
    seed: Option<u64>,
    config: serde_json::Value,
}

impl Run {
    fn new(command: &'static str) -> Run {
        Run {
            command,
            inputs: Vec::new(),
            seed: None,
            config: json!({}),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(input_err)?;
    }
    let start = Instant::now();
    let mut run = Run::new("");
    let outcome = match cli.command {
        Command::Check(a) => cmd_check(a, &mut run),
        Command::Chase(a) => cmd_chase(a, &mut run),
        Command::Ground(a) => cmd_ground(a, &mut run),
        Command::Infer(a) => cmd_infer(a, &mut run),
        Command::Sample(a) => cmd_sample(a, &mut run),
        Command::Gen(a) => cmd_gen(a, &mut run),
        Command::Eval(a) => cmd_eval(a, &mut run),
    };
    let manifest = RunManifest {
        command: run.command,
        inputs: run.inputs,
        seed: run.seed,
        config: run.config,
        engine_version: env!("CARGO_PKG_VERSION"),
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    eprintln!("manifest {text}");
    if let Some(path) = cli.manifest {
        fs::write(&path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))
            .map_err(input_err)?;
    }
    outcome
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_err)
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(input_err),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_program(path: &Path) -> Result<Program> {
    let text = read(path)?;
    parse_program(&text).map_err(|e| input_err(anyhow!("{}: {e}", path.display())))
}

fn load_facts(paths: &[PathBuf]) -> Result<Instance> {
    let mut db = Instance::new();
    for p in paths {
        let text = read(p)?;
        let format = FactFormat::from_path(&p.to_string_lossy());
        let facts = parse_facts(&text, format).map_err(|e| input_err(anyhow!("{}: {e}", p.display())))?;
        for f in facts.facts() {
            db.insert(f);
        }
    }
    Ok(db)
}

fn unknown_builtin(name: &str) -> Failure {
    let names: Vec<String> = builtin_programs().into_iter().map(|p| p.name).collect();
    input_err(anyhow!("unknown builtin `{name}`; available: {}", names.join(", ")))
}

fn load_pkg(input: &Input, run: &mut Run) -> Result<Pkg> {
    let mut pkg = match (&input.builtin, &input.program) {
        (Some(name), _) => {
            run.inputs.push(format!("builtin:{name}"));
            let mut pkg = builtin(name).ok_or_else(|| unknown_builtin(name))?;
            if !input.facts.is_empty() {
                pkg.database = Instance::new();
            }
            pkg
        }
        (None, Some(path)) => {
            run.inputs.push(path.display().to_string());
            Pkg {
                name: path.display().to_string(),
                program: load_program(path)?,
                database: Instance::new(),
            }
        }
        (None, None) => return Err(input_err(anyhow!("either --program or --builtin is required"))),
    };
    run.inputs.extend(input.facts.iter().map(|p| p.display().to_string()));
    for f in load_facts(&input.facts)?.facts() {
        pkg.database.insert(f);
    }
    Ok(pkg)
}

fn chase_options(input: &Input) -> ChaseOptions {
    ChaseOptions {
        stratify: StratifyOptions {
            relax_aggregates: input.relax_aggregates,
        },
        ..ChaseOptions::default()
    }
}

fn mcmc_config(a: &McmcArgs) -> McmcConfig {
    McmcConfig {
        iterations: a.iterations,
        lambda: a.lambda,
        seed: a.seed,
        weight: match a.weight {
            WeightArg::PathUnion => WeightMode::PathUnion,
            WeightArg::Trajectory => WeightMode::Trajectory,
        },
        hastings: !a.no_hastings,
        ..McmcConfig::default()
    }
}

fn answer_text(answer: &[(Fact, f64)], format: Format) -> String {
    match format {
        Format::Tsv => serialize_answer(answer),
        Format::Csv => {
            let mut sorted = answer.to_vec();
            sorted.sort_by(|a, b| a.0.cmp(&b.0));
            let mut namer = NullNamer::new();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["fact", "probability"]).expect("in-memory write");
            for (f, p) in &sorted {
                let mut s = String::new();
                namer.write_fact(&mut s, f);
                w.write_record([s, format!("{p:.6}")]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
        }
    }
}

fn facts_text(inst: &Instance, format: Format) -> String {
    let mut facts: Vec<Fact> = inst.facts().collect();
    facts.sort();
    match format {
        Format::Tsv => serialize_facts(facts.iter()),
        Format::Csv => {
            let mut namer = NullNamer::new();
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
            for f in &facts {
                let mut rec = vec![f.pred.name().to_string()];
                rec.extend(f.args.iter().map(|v| namer.field(v)));
                w.write_record(&rec).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
        }
    }
}

fn cmd_check(a: CheckArgs, run: &mut Run) -> Result<()> {
    run.command = "check";
    run.inputs.push(a.program.display().to_string());
    let program = load_program(&a.program)?;
    match analyze(&program) {
        Ok(analysis) => {
            println!(
                "ok\trules={}\tsoft={}\tstrata={}",
                program.rules.len(),
                program.soft_rules().count(),
                analysis.strata.count
            );
            Ok(())
        }
        Err(v) => {
            report_violations(&v);
            Err(Failure {
                code: EXIT_ANALYSIS,
                error: anyhow!("{} violation(s)", v.len()),
            })
        }
    }
}

fn cmd_chase(a: ChaseArgs, run: &mut Run) -> Result<()> {
    run.command = "chase";
    let pkg = load_pkg(&a.input, run)?;
    run.config = json!({ "hard_only": a.hard_only });
    let engine = Engine::with_options(pkg.program, chase_options(&a.input))?;
    let out = if a.hard_only {
        close_under_hard_rules(&engine, pkg.database)?.into_instance()
    } else {
        warded_chase(&engine, pkg.database)?
    };
    print!("{}", facts_text(&out, a.format));
    Ok(())
}

fn cmd_ground(a: GroundArgs, run: &mut Run) -> Result<()> {
    run.command = "ground";
    let pkg = load_pkg(&a.input, run)?;
    run.config = json!({ "budget": a.budget });
    let engine = Engine::with_options(pkg.program, chase_options(&a.input))?;
    let net = ground_chase_network(
        &engine,
        pkg.database,
        GroundOptions {
            max_nodes: Some(a.budget),
        },
    )?;
    print!("{}", net.dump());
    Ok(())
}

fn cmd_infer(a: InferArgs, run: &mut Run) -> Result<()> {
    run.command = "infer";
    let pkg = load_pkg(&a.input, run)?;
    let query = parse_query(&a.query).map_err(|e| input_err(anyhow!("query: {e}")))?;
    let opts = chase_options(&a.input);
    let answer = match a.mode {
        Mode::Exact => {
            run.config = json!({ "mode": "exact", "query": a.query, "budget": a.budget });
            let (net, answer) = answer_query(
                &pkg.program,
                pkg.database,
                &query,
                opts,
                GroundOptions {
                    max_nodes: Some(a.budget),
                },
            )?;
            log::info!("network: {} nodes, {} edges", net.nodes.len(), net.edges.len());
            answer
        }
        Mode::Mcmc => {
            let cfg = mcmc_config(&a.mcmc);
            run.seed = Some(cfg.seed);
            run.config = json!({ "mode": "mcmc", "query": a.query, "mcmc": cfg, "chains": a.mcmc.chains });
            let (program, pred) =
                rewrite_query(&pkg.program, &query).map_err(|v| Failure::from(NetworkError::Query(v)))?;
            let engine = Engine::with_options(program, opts)?;
            let samples = mcmc_chains(&engine, &pkg.database, cfg, a.mcmc.chains)?;
            let d = diagnostics(&samples);
            log::info!(
                "acceptance rate {:.4}, {} distinct nodes, {} uncorrected, {} weight fallbacks",
                d.acceptance_rate,
                d.distinct_nodes,
                d.uncorrected_steps,
                d.weight_fallbacks
            );
            estimate_answer(&samples, &pred)?
        }
    };
    print!("{}", answer_text(&answer, a.format));
    Ok(())
}

fn cmd_sample(a: SampleArgs, run: &mut Run) -> Result<()> {
    run.command = "sample";
    let pkg = load_pkg(&a.input, run)?;
    let cfg = mcmc_config(&a.mcmc);
    run.seed = Some(cfg.seed);
    run.config = json!({ "mcmc": cfg, "chains": a.mcmc.chains });
    let engine = Engine::with_options(pkg.program, chase_options(&a.input))?;
    let samples = mcmc_chains(&engine, &pkg.database, cfg, a.mcmc.chains)?;
    if let Some(path) = &a.trace {
        write_out(Some(path), &samples.trace_csv())?;
    }
    let mut d = diagnostics(&samples);
    d.weight_trace.clear();
    eprintln!(
        "diagnostics {}",
        serde_json::to_string(&d).expect("diagnostics serialize")
    );
    let marginals: Vec<(Fact, f64)> = estimate_marginals(&samples)?.into_iter().collect();
    print!("{}", answer_text(&marginals, a.format));
    Ok(())
}

fn cmd_gen(a: GenArgs, run: &mut Run) -> Result<()> {
    run.command = "gen";
    let triple = match (&a.preset, a.alpha, a.beta, a.gamma) {
        (Some(name), ..) => {
            ScaleFreeParams::preset(name).ok_or_else(|| input_err(anyhow!("unknown preset `{name}`")))?
        }
        (None, Some(al), Some(be), Some(ga)) => (al, be, ga),
        _ => ScaleFreeParams::BASE,
    };
    let params = ScaleFreeParams::new(a.nodes, triple)?;
    run.seed = Some(a.seed);
    run.config = json!({ "params": params, "corruption": a.corruption });
    if let Some(p) = &a.out {
        run.inputs.push(p.display().to_string());
    }
    let edges = gen_scale_free_with(params, a.seed, a.corruption)?;
    write_out(a.out.as_ref(), &edges_to_csv(&edges))
}

fn cmd_eval(a: EvalArgs, run: &mut Run) -> Result<()> {
    run.command = "eval";
    let pkg = if let Some(g) = &a.graph {
        run.inputs.push(g.display().to_string());
        company_control_pkg(&parse_edge_csv(&read(g)?)?)
    } else {
        load_pkg(
            &Input {
                program: a.program.clone(),
                facts: a.facts.clone(),
                builtin: a.builtin.clone(),
                relax_aggregates: false,
            },
            run,
        )?
    };
    let base = mcmc_config(&McmcArgs {
        iterations: 1,
        lambda: a.lambda,
        seed: a.seed,
        weight: a.weight,
        no_hastings: a.no_hastings,
        chains: 1,
    });
    run.seed = Some(a.seed);
    run.config = json!({
        "multipliers": a.multipliers,
        "repetitions": a.repetitions,
        "mcmc": base,
        "skip_exact": a.skip_exact,
        "budget": a.budget,
    });
    let configs = iteration_configs(&pkg, &a.multipliers, base);
    let report = evaluate(
        &pkg,
        &configs,
        a.repetitions,
        EvalOptions {
            skip_exact: a.skip_exact,
            ground: GroundOptions {
                max_nodes: Some(a.budget),
            },
        },
    )?;
    eprint!("{}", report.table());
    if let Some(p) = &a.facts_out {
        write_out(Some(p), &report.facts_csv())?;
    }
    write_out(a.out.as_ref(), &report.summary_csv())
}
