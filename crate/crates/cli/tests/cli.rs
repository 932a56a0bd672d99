use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use softchase_core::bench::{RUNNING_EXAMPLE, RUNNING_EXAMPLE_FACTS};

fn softchase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softchase"))
        .args(args)
        .env("SOFTCHASE_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "re.vada", RUNNING_EXAMPLE);
    let bad = write(
        dir.path(),
        "nw.vada",
        "p(X) -> exists Z: e(X,Z).\np(X) -> exists Z: f(X,Z).\ne(X,Y), f(X2,Y) -> q(Y).\n",
    );
    assert_eq!(softchase(&["check", "--program", &good]).status.code(), Some(0));
    let o = softchase(&["check", "--program", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("W002"));
    assert!(o.stdout.is_empty());
    let missing = dir.path().join("none.vada");
    assert_eq!(
        softchase(&["check", "--program", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let garbled = write(dir.path(), "bad.vada", "p(X -> q(X).");
    assert_eq!(softchase(&["check", "--program", &garbled]).status.code(), Some(2));
}

#[test]
fn infer_exact_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "re.vada", RUNNING_EXAMPLE);
    let facts = write(dir.path(), "re.facts", RUNNING_EXAMPLE_FACTS);
    let o = softchase(&["infer", "--program", &program, "--facts", &facts, "--query", "contract"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("contract(a,b,c)\t1.000000\n"));
    assert!(out.contains("contract(c,l,a)\t0.986262\n"));
    let g = stdout(&softchase(&[
        "infer",
        "--builtin",
        "running-example",
        "--query",
        "guarantee",
    ]));
    assert_eq!(g, "guarantee(c,l,_:n0)\t0.897025\n");
    let stderr = String::from_utf8(o.stderr).unwrap();
    let manifest = stderr.lines().find_map(|l| l.strip_prefix("manifest ")).unwrap();
    let v: serde_json::Value = serde_json::from_str(manifest).unwrap();
    assert_eq!(v["command"], "infer");
    assert_eq!(v["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn infer_csv_format() {
    let o = softchase(&["infer", "--builtin", "pp2dnf", "--query", "q", "--format", "csv"]);
    assert_eq!(stdout(&o), "fact,probability\nq(),0.250000\n");
}

#[test]
fn pp2dnf_query() {
    let o = softchase(&["infer", "--builtin", "pp2dnf", "--query", "q"]);
    assert_eq!(stdout(&o), "q()\t0.250000\n");
}

#[test]
fn chase_prints_canonical_nulls() {
    let o = softchase(&["chase", "--builtin", "mother"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.contains("hasmother(alice,_:n0).\n"));
    assert!(out.contains("hasmother(_:n0,_:n1).\n"));
}

#[test]
fn chase_with_csv_facts() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(
        dir.path(),
        "p.vada",
        "edge(X,Y) -> path(X,Y).\npath(X,Y), edge(Y,Z) -> path(X,Z).\n",
    );
    let facts = write(dir.path(), "edge.csv", "edge:2\na,b\nb,c\n");
    let o = softchase(&["chase", "--program", &program, "--facts", &facts, "--format", "csv"]);
    assert_eq!(stdout(&o), "edge,a,b\nedge,b,c\npath,a,b\npath,a,c\npath,b,c\n");
}

#[test]
fn ground_lists_running_example_network() {
    let o = softchase(&["ground", "--builtin", "running-example"]);
    let out = stdout(&o);
    assert!(out.starts_with("network nodes=5 edges=5"));
    let mut weights: Vec<String> = out
        .lines()
        .filter_map(|l| {
            l.split_whitespace()
                .find_map(|t| t.strip_prefix("weight="))
                .map(str::to_string)
        })
        .collect();
    weights.sort();
    assert_eq!(
        weights,
        [
            "0.000000000000",
            "0.700000000000",
            "1.500000000000",
            "1.600000000000",
            "4.100000000000"
        ]
    );
}

#[test]
fn ground_budget_exit_code() {
    let o = softchase(&["ground", "--builtin", "company-control", "--budget", "2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
    let o = softchase(&[
        "infer",
        "--builtin",
        "company-control",
        "--query",
        "control",
        "--budget",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mcmc_is_deterministic() {
    let args = [
        "infer",
        "--builtin",
        "running-example",
        "--query",
        "contract",
        "--mode",
        "mcmc",
        "--iterations",
        "3000",
        "--seed",
        "7",
    ];
    let a = softchase(&args);
    let b = softchase(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("contract(a,b,c)\t1.000000"));
    let mut jobs = vec!["--jobs", "2"];
    jobs.extend(args);
    jobs.extend(["--chains", "3"]);
    assert_eq!(softchase(&jobs).stdout, softchase(&jobs).stdout);
}

#[test]
fn sample_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = softchase(&[
        "sample",
        "--builtin",
        "running-example",
        "--iterations",
        "500",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iteration,weight,trajectory_weight,instance_size,key\n"));
    assert!(stdout(&o).contains("regulatoryrestriction(m,l)\t1.000000"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diagnostics {"));
}

#[test]
fn gen_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = softchase(&[
            "gen",
            "--preset",
            "base",
            "--nodes",
            "100",
            "--seed",
            "1",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert!(text.starts_with(b"src,dst,share\n"));
    let o = softchase(&["gen", "--alpha", "0.5", "--beta", "0.3", "--gamma", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_on_generated_graph() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.csv");
    softchase(&[
        "gen",
        "--preset",
        "base",
        "--nodes",
        "6",
        "--seed",
        "2",
        "--out",
        graph.to_str().unwrap(),
    ]);
    let facts_out = dir.path().join("facts.csv");
    let o = softchase(&[
        "eval",
        "--graph",
        graph.to_str().unwrap(),
        "--multipliers",
        "1",
        "--repetitions",
        "2",
        "--skip-exact",
        "--facts-out",
        facts_out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("pkg,config,iterations"));
    assert!(lines.next().unwrap().contains(",NA,"));
    assert!(fs::metadata(&facts_out).unwrap().len() > 0);
}

#[test]
fn unknown_builtin_is_an_input_error() {
    let o = softchase(&["chase", "--builtin", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("running-example"));
}
