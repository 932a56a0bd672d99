//! Core vocabulary: values, terms, atoms, facts, rules, programs, instances
//! and substitutions, plus canonical keys for facts and instances.
//!
//! Constants, labeled nulls and variables are disjoint. Facts hold only
//! [`Value`]s (constants or nulls); atoms may additionally hold variables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("variable {0} is not bound by the substitution")]
    UnboundVariable(Var),
    #[error("predicate {pred} used with arity {found}, declared with arity {expected}")]
    ArityMismatch { pred: Pred, expected: usize, found: usize },
    #[error("extensional predicate {0} occurs in a rule head")]
    ExtensionalHead(Pred),
}

/// A numeric constant. NaN is not representable and `-0.0` is folded into `0.0`,
/// so equality, hashing and ordering agree.
#[derive(Clone, Copy, Debug)]
pub struct Number(f64);

impl Number {
    pub fn new(v: f64) -> Option<Number> {
        if v.is_nan() {
            None
        } else if v == 0.0 {
            Some(Number(0.0))
        } else {
            Some(Number(v))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for Number {}

impl Hash for Number {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of a labeled null.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NullId(pub u64);

/// A ground term: a constant (number, symbol, quoted string) or a labeled null.
///
/// The derived ordering places every constant before every null.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Num(Number),
    Sym(Arc<str>),
    Str(Arc<str>),
    Null(NullId),
}

impl Value {
    pub fn sym(s: &str) -> Value {
        Value::Sym(Arc::from(s))
    }

    pub fn num(v: f64) -> Value {
        Value::Num(Number::new(v).expect("NaN is not a valid constant"))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null(_))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(n.get()),
            _ => None,
        }
    }
}

/// Writes a string constant in the surface syntax, quoted when needed.
pub(crate) fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(n) => write!(f, "{n}"),
            Value::Sym(s) => f.write_str(s),
            Value::Str(s) => write_quoted(f, s),
            Value::Null(id) => write!(f, "_:n{}", id.0),
        }
    }
}

/// A variable name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub Arc<str>);

impl Var {
    pub fn new(name: &str) -> Var {
        Var(Arc::from(name))
    }
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A predicate name, always stored lower-case.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pred(pub Arc<str>);

impl Pred {
    pub fn new(name: &str) -> Pred {
        Pred(Arc::from(name.to_lowercase()))
    }
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Var {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl Serialize for Pred {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    Val(Value),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(Var::new(name))
    }
    pub fn sym(name: &str) -> Term {
        Term::Val(Value::sym(name))
    }
    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            Term::Val(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Val(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: Pred,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, terms: Vec<Term>) -> Atom {
        Atom {
            pred: Pred::new(pred),
            terms,
        }
    }

    pub fn arity(&self) -> usize {
        self.terms.len()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.terms.iter().filter_map(Term::as_var)
    }

    pub fn is_ground(&self) -> bool {
        self.terms.iter().all(|t| matches!(t, Term::Val(_)))
    }
}

fn write_args<T: fmt::Display>(f: &mut fmt::Formatter<'_>, args: &[T]) -> fmt::Result {
    f.write_str("(")?;
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{a}")?;
    }
    f.write_str(")")
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred)?;
        write_args(f, &self.terms)
    }
}

pub type Tuple = Arc<[Value]>;

/// A ground atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub pred: Pred,
    pub args: Tuple,
}

impl Fact {
    pub fn new(pred: &str, args: Vec<Value>) -> Fact {
        Fact {
            pred: Pred::new(pred),
            args: args.into(),
        }
    }

    pub fn has_nulls(&self) -> bool {
        self.args.iter().any(Value::is_null)
    }

    pub fn nulls(&self) -> impl Iterator<Item = NullId> + '_ {
        self.args.iter().filter_map(|v| match v {
            Value::Null(n) => Some(*n),
            _ => None,
        })
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred)?;
        write_args(f, &self.args)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Var),
    Val(Value),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a Var>) {
        match self {
            Expr::Var(v) => {
                out.insert(v);
            }
            Expr::Val(_) => {}
            Expr::Neg(e) | Expr::Abs(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates the expression under `lookup`. Arithmetic over non-numeric
    /// values (symbols, nulls) yields `None`.
    pub fn eval(&self, lookup: &impl Fn(&Var) -> Option<Value>) -> Option<Value> {
        match self {
            Expr::Var(v) => lookup(v),
            Expr::Val(v) => Some(v.clone()),
            Expr::Neg(e) => num(-e.eval(lookup)?.as_f64()?),
            Expr::Abs(e) => num(e.eval(lookup)?.as_f64()?.abs()),
            Expr::Bin(op, a, b) => {
                let x = a.eval(lookup)?.as_f64()?;
                let y = b.eval(lookup)?.as_f64()?;
                num(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                })
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            _ => 3,
        }
    }
}

fn num(v: f64) -> Option<Value> {
    Number::new(v).map(Value::Num)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Val(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Abs(e) => write!(f, "|{e}|"),
            Expr::Bin(op, a, b) => {
                let p = self.precedence();
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                if a.precedence() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {sym} ")?;
                // left-associative operators need parentheses on an equal-precedence right operand
                if b.precedence() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    /// Ordering comparisons are defined on numbers only; equality on any value.
    pub fn holds(self, a: &Value, b: &Value) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            _ => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => match self {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

/// A comparison filter over bound variables, possibly combined with
/// conjunction and disjunction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Cmp { lhs: Expr, op: CmpOp, rhs: Expr },
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    pub fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a Var>) {
        match self {
            Condition::Cmp { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out.into_iter().cloned().collect()
    }

    pub fn holds(&self, lookup: &impl Fn(&Var) -> Option<Value>) -> bool {
        match self {
            Condition::Cmp { lhs, op, rhs } => match (lhs.eval(lookup), rhs.eval(lookup)) {
                (Some(a), Some(b)) => op.holds(&a, &b),
                _ => false,
            },
            Condition::And(cs) => cs.iter().all(|c| c.holds(lookup)),
            Condition::Or(cs) => cs.iter().any(|c| c.holds(lookup)),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Cmp { lhs, op, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Condition::And(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            Condition::Or(cs) => {
                f.write_str("(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" or ")?;
                    }
                    match c {
                        Condition::And(_) => write!(f, "({c})")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AggOp {
    Sum,
    Count,
    Min,
    Max,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "sum",
            AggOp::Count => "count",
            AggOp::Min => "min",
            AggOp::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<AggOp> {
        match name {
            "sum" => Some(AggOp::Sum),
            "count" => Some(AggOp::Count),
            "min" => Some(AggOp::Min),
            "max" => Some(AggOp::Max),
            _ => None,
        }
    }
}

/// `result = op(operand)`, grouped by the rule's other frontier variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Aggregate {
    pub result: Var,
    pub op: AggOp,
    pub operand: Var,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Filter(Condition),
    Agg(Aggregate),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "not {a}"),
            Literal::Filter(c) => write!(f, "{c}"),
            Literal::Agg(a) => write!(f, "{} = {}({})", a.result, a.op.name(), a.operand),
        }
    }
}

/// Rule weight on the extended reals. `+inf` marks a hard rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Weight(f64);

impl Weight {
    pub const HARD: Weight = Weight(f64::INFINITY);

    pub fn new(w: f64) -> Option<Weight> {
        (!w.is_nan()).then_some(Weight(w))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_hard(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_soft(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_negative_infinite(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Position of a parsed item in its source text. Lines and columns are 1-based;
/// byte offsets are 0-based and half-open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RuleId(pub usize);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: RuleId,
    pub body: Vec<Literal>,
    pub head: Vec<Atom>,
    pub existentials: BTreeSet<Var>,
    pub weight: Weight,
    pub span: SourceSpan,
}

impl Rule {
    pub fn new(body: Vec<Literal>, head: Vec<Atom>, weight: Weight) -> Rule {
        let mut rule = Rule {
            id: RuleId(0),
            body,
            head,
            existentials: BTreeSet::new(),
            weight,
            span: SourceSpan::default(),
        };
        rule.existentials = rule.head_only_vars();
        rule
    }

    pub fn is_hard(&self) -> bool {
        self.weight.is_hard()
    }

    pub fn is_soft(&self) -> bool {
        self.weight.is_soft()
    }

    pub fn positive_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter_map(|l| match l {
            Literal::Pos(a) => Some(a),
            _ => None,
        })
    }

    pub fn negated_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter_map(|l| match l {
            Literal::Neg(a) => Some(a),
            _ => None,
        })
    }

    pub fn filters(&self) -> impl Iterator<Item = &Condition> {
        self.body.iter().filter_map(|l| match l {
            Literal::Filter(c) => Some(c),
            _ => None,
        })
    }

    pub fn aggregate(&self) -> Option<&Aggregate> {
        self.body.iter().find_map(|l| match l {
            Literal::Agg(a) => Some(a),
            _ => None,
        })
    }

    /// Variables bound by positive body atoms.
    pub fn positive_vars(&self) -> BTreeSet<Var> {
        self.positive_atoms().flat_map(|a| a.vars().cloned()).collect()
    }

    /// Variables with a value after body evaluation: positive-atom variables
    /// plus the aggregate result.
    pub fn bound_vars(&self) -> BTreeSet<Var> {
        let mut vars = self.positive_vars();
        if let Some(agg) = self.aggregate() {
            vars.insert(agg.result.clone());
        }
        vars
    }

    pub fn head_vars(&self) -> BTreeSet<Var> {
        self.head.iter().flat_map(|a| a.vars().cloned()).collect()
    }

    /// Universally quantified variables that also occur in the head.
    pub fn frontier(&self) -> BTreeSet<Var> {
        let bound = self.bound_vars();
        self.head_vars().into_iter().filter(|v| bound.contains(v)).collect()
    }

    fn head_only_vars(&self) -> BTreeSet<Var> {
        let bound = self.bound_vars();
        self.head_vars().into_iter().filter(|v| !bound.contains(v)).collect()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.weight.is_hard() {
            write!(f, "{} :: ", self.weight)?;
        }
        for (i, l) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{l}")?;
        }
        if !self.body.is_empty() {
            f.write_str(" -> ")?;
        }
        if !self.existentials.is_empty() {
            f.write_str("exists ")?;
            for (i, v) in self.existentials.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str(": ")?;
        }
        for (i, a) in self.head.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(".")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PredDecl {
    pub arity: usize,
    pub intensional: bool,
}

/// A set of rules with the predicate declarations they induce.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub decls: BTreeMap<Pred, PredDecl>,
}

impl Program {
    /// Builds a program, numbering rules in order and deriving predicate
    /// declarations. Predicates occurring in a head are intensional.
    pub fn new(rules: Vec<Rule>) -> Result<Program, ModelError> {
        let mut program = Program::default();
        for rule in rules {
            program.push(rule)?;
        }
        Ok(program)
    }

    pub fn push(&mut self, mut rule: Rule) -> Result<RuleId, ModelError> {
        let atoms = rule
            .body
            .iter()
            .filter_map(|l| match l {
                Literal::Pos(a) | Literal::Neg(a) => Some((a, false)),
                _ => None,
            })
            .chain(rule.head.iter().map(|a| (a, true)));
        let mut pending: Vec<(Pred, usize, bool)> = Vec::new();
        for (atom, in_head) in atoms {
            let arity = atom.arity();
            match self.decls.get(&atom.pred) {
                Some(d) if d.arity != arity => {
                    return Err(ModelError::ArityMismatch {
                        pred: atom.pred.clone(),
                        expected: d.arity,
                        found: arity,
                    })
                }
                _ => {}
            }
            if let Some((_, a, _)) = pending.iter().find(|(p, _, _)| *p == atom.pred) {
                if *a != arity {
                    return Err(ModelError::ArityMismatch {
                        pred: atom.pred.clone(),
                        expected: *a,
                        found: arity,
                    });
                }
            }
            pending.push((atom.pred.clone(), arity, in_head));
        }
        for (pred, arity, in_head) in pending {
            let decl = self.decls.entry(pred).or_insert(PredDecl {
                arity,
                intensional: false,
            });
            decl.intensional |= in_head;
        }
        let id = RuleId(self.rules.len());
        rule.id = id;
        self.rules.push(rule);
        Ok(id)
    }

    /// Declares an extensional predicate (e.g. from a fact file) if unknown.
    pub fn declare(&mut self, pred: &Pred, arity: usize) -> Result<(), ModelError> {
        match self.decls.get(pred) {
            Some(d) if d.arity != arity => Err(ModelError::ArityMismatch {
                pred: pred.clone(),
                expected: d.arity,
                found: arity,
            }),
            Some(_) => Ok(()),
            None => {
                self.decls.insert(
                    pred.clone(),
                    PredDecl {
                        arity,
                        intensional: false,
                    },
                );
                Ok(())
            }
        }
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.0]
    }

    pub fn is_intensional(&self, pred: &Pred) -> bool {
        self.decls.get(pred).is_some_and(|d| d.intensional)
    }

    pub fn hard_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.is_hard())
    }

    pub fn soft_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| !r.is_hard())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

/// A mapping from variables to ground values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Substitution(pub BTreeMap<Var, Value>);

impl Substitution {
    pub fn new() -> Substitution {
        Substitution::default()
    }

    pub fn get(&self, var: &Var) -> Option<&Value> {
        self.0.get(var)
    }

    pub fn bind(&mut self, var: Var, value: Value) {
        self.0.insert(var, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Value)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Grounds `atom`; every variable of the atom must be bound.
    pub fn apply(&self, atom: &Atom) -> Result<Fact, ModelError> {
        let args = atom
            .terms
            .iter()
            .map(|t| match t {
                Term::Val(v) => Ok(v.clone()),
                Term::Var(v) => self
                    .0
                    .get(v)
                    .cloned()
                    .ok_or_else(|| ModelError::UnboundVariable(v.clone())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Fact {
            pred: atom.pred.clone(),
            args: args.into(),
        })
    }
}

impl FromIterator<(Var, Value)> for Substitution {
    fn from_iter<I: IntoIterator<Item = (Var, Value)>>(iter: I) -> Self {
        Substitution(iter.into_iter().collect())
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}->{v}")?;
        }
        f.write_str("}")
    }
}

/// `apply_substitution` as a free function.
pub fn apply_substitution(atom: &Atom, s: &Substitution) -> Result<Fact, ModelError> {
    s.apply(atom)
}

/// A term of a canonical key: constants stay as they are, nulls are renumbered
/// by first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyTerm {
    Const(Value),
    Null(u32),
}

/// Renames nulls of a sequence of values by first appearance, continuing the
/// numbering held in `seen`.
pub fn canonical_terms<'a>(
    values: impl IntoIterator<Item = &'a Value>,
    seen: &mut HashMap<NullId, u32>,
    out: &mut Vec<KeyTerm>,
) {
    for v in values {
        match v {
            Value::Null(id) => {
                let next = seen.len() as u32;
                out.push(KeyTerm::Null(*seen.entry(*id).or_insert(next)));
            }
            other => out.push(KeyTerm::Const(other.clone())),
        }
    }
}

/// Key of a tuple of facts up to a single renaming of nulls shared by all of
/// them: two tuples get equal keys iff one bijection of nulls maps each fact
/// onto its counterpart.
pub fn canonical_tuple_key<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> Vec<KeyTerm> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for f in facts {
        out.push(KeyTerm::Const(Value::Sym(f.pred.0.clone())));
        canonical_terms(f.args.iter(), &mut seen, &mut out);
    }
    out
}

/// Generating application of a fact: rule, head-atom index and the constant
/// part of the body unifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lineage {
    pub rule: RuleId,
    pub head_index: usize,
    pub constants: Vec<(Var, Value)>,
}

impl Lineage {
    pub fn new(rule: RuleId, head_index: usize, unifier: &Substitution) -> Lineage {
        Lineage {
            rule,
            head_index,
            constants: unifier
                .iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Opaque canonical key of a fact, insensitive to null identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactKey {
    pred: Pred,
    shape: Vec<KeyTerm>,
    lineage: Option<Lineage>,
}

/// Equal keys iff the facts are isomorphic (a constant-preserving bijection of
/// terms maps one onto the other) and, when given, their lineages agree.
pub fn canonical_fact_key(fact: &Fact, lineage: Option<&Lineage>) -> FactKey {
    let mut shape = Vec::with_capacity(fact.args.len());
    canonical_terms(fact.args.iter(), &mut HashMap::new(), &mut shape);
    FactKey {
        pred: fact.pred.clone(),
        shape,
        lineage: lineage.cloned(),
    }
}

/// Stable digest of an instance's fact set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey(pub [u8; 32]);

impl fmt::Debug for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InstanceKey({self})")
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

fn hash_value(h: &mut Sha256, v: &Value) {
    match v {
        Value::Num(n) => {
            h.update([0u8]);
            h.update(n.get().to_bits().to_le_bytes());
        }
        Value::Sym(s) => {
            h.update([1u8]);
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        Value::Str(s) => {
            h.update([2u8]);
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        Value::Null(id) => {
            h.update([3u8]);
            h.update(id.0.to_le_bytes());
        }
    }
}

/// Insertion stamp of a fact, used for semi-naive evaluation.
pub type Stamp = u32;

#[derive(Clone, Debug, Default)]
pub struct Relation {
    tuples: BTreeMap<Tuple, Stamp>,
    index: HashMap<(usize, Value), BTreeSet<Tuple>>,
}

impl Relation {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn contains(&self, t: &[Value]) -> bool {
        self.tuples.contains_key(t)
    }

    pub fn stamp(&self, t: &[Value]) -> Option<Stamp> {
        self.tuples.get(t).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, Stamp)> {
        self.tuples.iter().map(|(t, s)| (t, *s))
    }

    fn insert(&mut self, t: Tuple, stamp: Stamp) -> bool {
        if self.tuples.contains_key(&t) {
            return false;
        }
        for (i, v) in t.iter().enumerate() {
            self.index.entry((i, v.clone())).or_default().insert(t.clone());
        }
        self.tuples.insert(t, stamp);
        true
    }

    /// Tuples whose `pos`-th value is `v`, in canonical order.
    pub fn lookup(&self, pos: usize, v: &Value) -> impl Iterator<Item = &Tuple> {
        self.index.get(&(pos, v.clone())).into_iter().flatten()
    }

    /// Number of tuples whose `pos`-th value is `v`.
    pub fn lookup_len(&self, pos: usize, v: &Value) -> usize {
        self.index.get(&(pos, v.clone())).map_or(0, BTreeSet::len)
    }
}

/// A set of facts over constants and labeled nulls.
#[derive(Clone, Debug, Default)]
pub struct Instance {
    relations: BTreeMap<Pred, Relation>,
    clock: Stamp,
    len: usize,
}

impl Instance {
    pub fn new() -> Instance {
        Instance::default()
    }

    pub fn from_facts(facts: impl IntoIterator<Item = Fact>) -> Instance {
        let mut inst = Instance::new();
        for f in facts {
            inst.insert(f);
        }
        inst
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inserts at the current clock; returns false for a duplicate.
    pub fn insert(&mut self, fact: Fact) -> bool {
        let clock = self.clock;
        let added = self.relations.entry(fact.pred).or_default().insert(fact.args, clock);
        if added {
            self.len += 1;
        }
        added
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.relations.get(&fact.pred).is_some_and(|r| r.contains(&fact.args))
    }

    pub fn relation(&self, pred: &Pred) -> Option<&Relation> {
        self.relations.get(pred)
    }

    pub fn clock(&self) -> Stamp {
        self.clock
    }

    pub fn tick(&mut self) -> Stamp {
        self.clock += 1;
        self.clock
    }

    /// All facts in canonical order: predicate, then terms.
    pub fn facts(&self) -> impl Iterator<Item = Fact> + '_ {
        self.relations.iter().flat_map(|(p, r)| {
            r.tuples.keys().map(move |t| Fact {
                pred: p.clone(),
                args: t.clone(),
            })
        })
    }

    pub fn facts_of<'a>(&'a self, pred: &'a Pred) -> impl Iterator<Item = Fact> + 'a {
        self.relations.get(pred).into_iter().flat_map(move |r| {
            r.tuples.keys().map(move |t| Fact {
                pred: pred.clone(),
                args: t.clone(),
            })
        })
    }

    pub fn is_subset_of(&self, other: &Instance) -> bool {
        self.relations.iter().all(|(p, r)| match other.relations.get(p) {
            Some(o) => r.tuples.keys().all(|t| o.contains(t)),
            None => r.is_empty(),
        })
    }

    /// Digest of the exact fact set, independent of insertion order.
    pub fn key(&self) -> InstanceKey {
        let mut h = Sha256::new();
        for (p, r) in &self.relations {
            if r.is_empty() {
                continue;
            }
            h.update((p.0.len() as u64).to_le_bytes());
            h.update(p.0.as_bytes());
            h.update((r.len() as u64).to_le_bytes());
            for t in r.tuples.keys() {
                for v in t.iter() {
                    hash_value(&mut h, v);
                }
            }
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        InstanceKey(out)
    }

    /// Sorted multiset of the provenance-free keys of all facts.
    pub fn isomorphism_profile(&self) -> Vec<FactKey> {
        let mut keys: Vec<FactKey> = self.facts().map(|f| canonical_fact_key(&f, None)).collect();
        keys.sort();
        keys
    }

    /// Fact-isomorphism: a bijection between the facts pairing isomorphic facts.
    pub fn is_fact_isomorphic(&self, other: &Instance) -> bool {
        self.len == other.len && self.isomorphism_profile() == other.isomorphism_profile()
    }
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.facts().eq(other.facts())
    }
}

/// Where a labeled null came from: the rule, its existential variable and the
/// full body unifier of the generating application.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NullOrigin {
    pub rule: RuleId,
    pub var: Var,
    pub unifier: Substitution,
}

/// Issues labeled nulls. The identifier is a digest of the origin, so the same
/// generating application always receives the same null regardless of the
/// order in which workers request them; the "same" existential witness is
/// shared by every instance of a reasoning session.
#[derive(Debug, Default)]
pub struct NullRegistry {
    inner: Mutex<RegistryInner>,
}

#[derive(Debug, Default)]
struct RegistryInner {
    by_origin: HashMap<NullOrigin, NullId>,
    origins: HashMap<NullId, NullOrigin>,
}

fn origin_digest(origin: &NullOrigin) -> u64 {
    let mut h = Sha256::new();
    h.update((origin.rule.0 as u64).to_le_bytes());
    h.update((origin.var.0.len() as u64).to_le_bytes());
    h.update(origin.var.0.as_bytes());
    for (k, v) in origin.unifier.iter() {
        h.update((k.0.len() as u64).to_le_bytes());
        h.update(k.0.as_bytes());
        hash_value(&mut h, v);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

impl NullRegistry {
    pub fn new() -> NullRegistry {
        NullRegistry::default()
    }

    pub fn null_for(&self, origin: NullOrigin) -> NullId {
        let mut inner = self.inner.lock().expect("null registry poisoned");
        if let Some(id) = inner.by_origin.get(&origin) {
            return *id;
        }
        let mut id = NullId(origin_digest(&origin));
        while inner.origins.contains_key(&id) {
            id = NullId(id.0.wrapping_add(1));
        }
        inner.origins.insert(id, origin.clone());
        inner.by_origin.insert(origin, id);
        id
    }

    pub fn origin(&self, id: NullId) -> Option<NullOrigin> {
        let inner = self.inner.lock().expect("null registry poisoned");
        inner.origins.get(&id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("null registry poisoned").origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
