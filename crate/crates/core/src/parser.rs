//! Surface syntax for weighted programs, fact files and queries, plus the
//! answer serializer.
//!
//! ```text
//! 0.9 :: lenderType(X,Y), regulatoryRestriction(Y,Z) -> exists V: guarantee(X,Z,V).
//! own(X,Y,S), not unreliable(X,Y), S > 0.5 -> control(X,Y).
//! inputOwn(X,Y,S), (S < 0 or S > 1) -> own(X,Y,Z), unreliable(X,Y).
//! control(X,Y), own(Y,Z,S), V = sum(S), V > 0.5 -> control(X,Z).
//! ```
//!
//! Predicates are case-insensitive. Variables start with an upper-case letter
//! or `_`; constants are lower-case identifiers, quoted strings or numbers.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    write_quoted, AggOp, Aggregate, Atom, BinOp, CmpOp, Condition, Expr, Fact, Instance, Literal, ModelError, NullId,
    Program, Rule, Term, Value, Var, Weight,
};

pub use crate::model::SourceSpan;

/// A located problem found while reading input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub message: String,
    pub span: SourceSpan,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.span, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub struct ParseErrors(pub Vec<Diagnostic>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

pub mod codes {
    pub const SYNTAX: &str = "P001";
    pub const ARITY: &str = "P002";
    pub const LEXICAL: &str = "P003";
    pub const EXISTENTIAL_IN_BODY: &str = "P004";
    pub const AGGREGATE: &str = "P005";
    pub const NON_GROUND_FACT: &str = "P006";
    pub const MALFORMED_ROW: &str = "P007";
    pub const CSV_HEADER: &str = "P008";
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Num(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    DColon,
    Colon,
    Arrow,
    LArrow,
    Pipe,
    Plus,
    Minus,
    Star,
    Slash,
    Cmp(CmpOp),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) => write!(f, "`{s}`"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::Str(_) => f.write_str("string"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::DColon => f.write_str("`::`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::LArrow => f.write_str("`<-`"),
            Tok::Pipe => f.write_str("`|`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Cmp(op) => write!(f, "`{}`", op.symbol()),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
    diags: Vec<Diagnostic>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            pos: 0,
            line: 1,
            col: 1,
            diags: Vec::new(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> SourceSpan {
        SourceSpan {
            line: self.line,
            column: self.col,
            start: self.pos,
            end: self.pos,
        }
    }

    fn tokenize(mut self) -> (Vec<Token>, Vec<Diagnostic>) {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let mut span = self.here();
            let Some(c) = self.peek() else {
                out.push(Token { tok: Tok::Eof, span });
                break;
            };
            let tok = match c {
                '(' => self.single(Tok::LParen),
                ')' => self.single(Tok::RParen),
                ',' => self.single(Tok::Comma),
                '.' => self.single(Tok::Dot),
                '|' => self.single(Tok::Pipe),
                '+' => self.single(Tok::Plus),
                '*' => self.single(Tok::Star),
                '/' => self.single(Tok::Slash),
                '=' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                    }
                    Some(Tok::Cmp(CmpOp::Eq))
                }
                '→' => self.single(Tok::Arrow),
                ':' => {
                    self.bump();
                    match self.peek() {
                        Some(':') => {
                            self.bump();
                            Some(Tok::DColon)
                        }
                        Some('-') => {
                            self.bump();
                            Some(Tok::LArrow)
                        }
                        _ => Some(Tok::Colon),
                    }
                }
                '-' => {
                    self.bump();
                    if self.peek() == Some('>') {
                        self.bump();
                        Some(Tok::Arrow)
                    } else {
                        Some(Tok::Minus)
                    }
                }
                '<' => {
                    self.bump();
                    match self.peek() {
                        Some('=') => {
                            self.bump();
                            Some(Tok::Cmp(CmpOp::Le))
                        }
                        Some('-') => {
                            self.bump();
                            Some(Tok::LArrow)
                        }
                        _ => Some(Tok::Cmp(CmpOp::Lt)),
                    }
                }
                '>' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        Some(Tok::Cmp(CmpOp::Ge))
                    } else {
                        Some(Tok::Cmp(CmpOp::Gt))
                    }
                }
                '!' if self.peek2() == Some('=') => {
                    self.bump();
                    self.bump();
                    Some(Tok::Cmp(CmpOp::Ne))
                }
                '"' => self.string(),
                c if c.is_ascii_digit() => self.number(),
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self
                        .peek()
                        .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '\'')
                    {
                        self.bump();
                    }
                    let word = self.src[start..self.pos].to_string();
                    if c.is_uppercase() || c == '_' {
                        Some(Tok::Var(word))
                    } else {
                        Some(Tok::Ident(word))
                    }
                }
                other => {
                    self.bump();
                    span.end = self.pos;
                    self.diags.push(Diagnostic {
                        code: codes::LEXICAL,
                        message: format!("unexpected character {other:?}"),
                        span,
                    });
                    None
                }
            };
            span.end = self.pos;
            if let Some(tok) = tok {
                out.push(Token { tok, span });
            }
        }
        (out, self.diags)
    }

    fn single(&mut self, tok: Tok) -> Option<Tok> {
        self.bump();
        Some(tok)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('%') => self.skip_line(),
                Some('/') if self.peek2() == Some('/') => self.skip_line(),
                _ => return,
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.bump() {
            if c == '\n' {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<Tok> {
        let start = self.pos;
        let span = self.here();
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some('.') && self.peek2().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let rest = &self.src[self.pos + 1..];
            let mut chars = rest.chars();
            let next = chars.next();
            let digit_follows = match next {
                Some('+' | '-') => chars.next().is_some_and(|c| c.is_ascii_digit()),
                Some(c) => c.is_ascii_digit(),
                None => false,
            };
            if digit_follows {
                self.bump();
                if matches!(self.peek(), Some('+' | '-')) {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(Tok::Num(v)),
            _ => {
                self.diags.push(Diagnostic {
                    code: codes::LEXICAL,
                    message: format!("invalid number `{text}`"),
                    span: SourceSpan { end: self.pos, ..span },
                });
                None
            }
        }
    }

    fn string(&mut self) -> Option<Tok> {
        let span = self.here();
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => {
                    self.diags.push(Diagnostic {
                        code: codes::LEXICAL,
                        message: "unterminated string".into(),
                        span: SourceSpan { end: self.pos, ..span },
                    });
                    return None;
                }
                Some('"') => return Some(Tok::Str(out)),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => {}
                },
                Some(c) => out.push(c),
            }
        }
    }
}

type PResult<T> = Result<T, Diagnostic>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    anon: usize,
}

fn is_agg_name(s: &str) -> bool {
    AggOp::from_name(s).is_some()
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser { toks, pos: 0, anon: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.toks[self.pos - 1].span.end
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic {
            code: codes::SYNTAX,
            message: msg.into(),
            span: self.span(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", self.peek()))
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == want {
            self.bump();
            true
        } else {
            false
        }
    }

    /// Skips past the next `.` so parsing can resume at the following rule.
    fn recover(&mut self) {
        while !self.at_eof() {
            if self.bump() == Tok::Dot {
                return;
            }
        }
    }

    fn weight_prefix(&self) -> bool {
        let (k, tok) = match self.peek() {
            Tok::Minus => (1, self.peek_at(1)),
            t => (0, t),
        };
        let is_num = matches!(tok, Tok::Num(_)) || matches!(tok, Tok::Ident(s) if s == "inf");
        is_num && *self.peek_at(k + 1) == Tok::DColon
    }

    fn weight(&mut self) -> PResult<Weight> {
        let neg = self.eat(&Tok::Minus);
        let v = match self.bump() {
            Tok::Num(v) => v,
            Tok::Ident(s) if s == "inf" => f64::INFINITY,
            _ => unreachable!("checked by weight_prefix"),
        };
        self.expect(Tok::DColon, "`::`")?;
        Ok(Weight::new(if neg { -v } else { v }).expect("finite or infinite"))
    }

    fn rule(&mut self) -> PResult<Rule> {
        let start = self.span();
        let weight = if self.weight_prefix() {
            self.weight()?
        } else {
            Weight::HARD
        };
        let (body, head, declared) = if matches!(self.peek(), Tok::Ident(s) if s == "exists") {
            let (head, declared) = self.head()?;
            (Vec::new(), head, declared)
        } else {
            let lits = self.literals()?;
            if self.eat(&Tok::Arrow) {
                let (head, declared) = self.head()?;
                (lits, head, declared)
            } else if *self.peek() == Tok::Dot {
                let mut head = Vec::new();
                for l in lits {
                    match l {
                        Literal::Pos(a) => head.push(a),
                        _ => {
                            return Err(Diagnostic {
                                code: codes::SYNTAX,
                                message: "a rule without `->` may contain only atoms".into(),
                                span: start,
                            })
                        }
                    }
                }
                (Vec::new(), head, BTreeSet::new())
            } else {
                return self.error(format!("expected `->` or `.`, found {}", self.peek()));
            }
        };
        self.expect(Tok::Dot, "`.` at the end of the rule")?;
        let span = SourceSpan {
            end: self.prev_end(),
            ..start
        };
        let mut rule = Rule::new(body, head, weight);
        rule.span = span;
        let bound = rule.bound_vars();
        if let Some(v) = declared.iter().find(|v| bound.contains(*v)) {
            return Err(Diagnostic {
                code: codes::EXISTENTIAL_IN_BODY,
                message: format!("existential variable {v} also occurs in the body"),
                span,
            });
        }
        let aggs: Vec<&Aggregate> = rule
            .body
            .iter()
            .filter_map(|l| match l {
                Literal::Agg(a) => Some(a),
                _ => None,
            })
            .collect();
        if aggs.len() > 1 {
            return Err(Diagnostic {
                code: codes::AGGREGATE,
                message: "at most one aggregate per rule is supported".into(),
                span,
            });
        }
        if let Some(agg) = aggs.first() {
            if rule.positive_vars().contains(&agg.result) {
                return Err(Diagnostic {
                    code: codes::AGGREGATE,
                    message: format!("aggregate result {} is already bound by a body atom", agg.result),
                    span,
                });
            }
        }
        Ok(rule)
    }

    fn head(&mut self) -> PResult<(Vec<Atom>, BTreeSet<Var>)> {
        let mut declared = BTreeSet::new();
        if matches!(self.peek(), Tok::Ident(s) if s == "exists") {
            self.bump();
            loop {
                match self.bump() {
                    Tok::Var(v) => {
                        declared.insert(Var::new(&v));
                    }
                    t => {
                        self.pos -= 1;
                        return self.error(format!("expected a variable after `exists`, found {t}"));
                    }
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::Colon, "`:` after the existential variables")?;
        }
        let mut atoms = vec![self.atom()?];
        while self.eat(&Tok::Comma) {
            atoms.push(self.atom()?);
        }
        Ok((atoms, declared))
    }

    fn literals(&mut self) -> PResult<Vec<Literal>> {
        let mut out = vec![self.literal()?];
        while self.eat(&Tok::Comma) {
            out.push(self.literal()?);
        }
        Ok(out)
    }

    fn starts_atom(&self) -> bool {
        matches!(
            (self.peek(), self.peek_at(1)),
            (Tok::Ident(_) | Tok::Var(_), Tok::LParen)
                | (
                    Tok::Ident(_),
                    Tok::Comma | Tok::Arrow | Tok::Dot | Tok::RParen | Tok::Eof
                )
        )
    }

    fn literal(&mut self) -> PResult<Literal> {
        if matches!(self.peek(), Tok::Ident(s) if s == "not") && !matches!(self.peek_at(1), Tok::LParen) {
            self.bump();
            return Ok(Literal::Neg(self.atom()?));
        }
        if let (Tok::Var(v), Tok::Cmp(CmpOp::Eq), Tok::Ident(f), Tok::LParen) =
            (self.peek(), self.peek_at(1), self.peek_at(2), self.peek_at(3))
        {
            if is_agg_name(f) {
                let result = Var::new(v);
                let op = AggOp::from_name(f).expect("checked");
                self.pos += 4;
                let operand = match self.bump() {
                    Tok::Var(v) => Var::new(&v),
                    t => {
                        self.pos -= 1;
                        return self.error(format!("expected a variable as aggregate operand, found {t}"));
                    }
                };
                self.expect(Tok::RParen, "`)`")?;
                return Ok(Literal::Agg(Aggregate { result, op, operand }));
            }
        }
        if self.starts_atom() {
            return Ok(Literal::Pos(self.atom()?));
        }
        Ok(Literal::Filter(self.condition_item()?))
    }

    /// A parenthesised disjunction or a comparison chain.
    fn condition_item(&mut self) -> PResult<Condition> {
        if *self.peek() == Tok::LParen {
            let save = self.pos;
            let save_anon = self.anon;
            match self.group() {
                Ok(c) => return Ok(c),
                Err(_) => {
                    self.pos = save;
                    self.anon = save_anon;
                }
            }
        }
        self.chain()
    }

    fn group(&mut self) -> PResult<Condition> {
        self.expect(Tok::LParen, "`(`")?;
        let mut alts = vec![self.conjunction()?];
        while matches!(self.peek(), Tok::Ident(s) if s == "or") {
            self.bump();
            alts.push(self.conjunction()?);
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(if alts.len() == 1 {
            alts.pop().expect("one alternative")
        } else {
            Condition::Or(alts)
        })
    }

    fn conjunction(&mut self) -> PResult<Condition> {
        let mut items = vec![self.condition_item()?];
        loop {
            let and_kw = matches!(self.peek(), Tok::Ident(s) if s == "and");
            if and_kw || *self.peek() == Tok::Comma {
                self.bump();
                items.push(self.condition_item()?);
            } else {
                break;
            }
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Condition::And(items)
        })
    }

    fn chain(&mut self) -> PResult<Condition> {
        let first = self.expr()?;
        let mut pairs = Vec::new();
        let mut lhs = first;
        while let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.expr()?;
            pairs.push(Condition::Cmp {
                lhs: lhs.clone(),
                op,
                rhs: rhs.clone(),
            });
            lhs = rhs;
        }
        match pairs.len() {
            0 => self.error(format!("expected a comparison operator, found {}", self.peek())),
            1 => Ok(pairs.pop().expect("one comparison")),
            _ => Ok(Condition::And(pairs)),
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Val(Value::num(-v)));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        match self.bump() {
            Tok::Var(v) => Ok(Expr::Var(self.var(&v))),
            Tok::Num(v) => Ok(Expr::Val(Value::num(v))),
            Tok::Str(s) => Ok(Expr::Val(Value::Str(s.into()))),
            Tok::Ident(s) => Ok(Expr::Val(Value::sym(&s))),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Pipe => {
                let e = self.expr()?;
                self.expect(Tok::Pipe, "closing `|`")?;
                Ok(Expr::Abs(Box::new(e)))
            }
            t => {
                self.pos -= 1;
                self.error(format!("expected an expression, found {t}"))
            }
        }
    }

    fn var(&mut self, name: &str) -> Var {
        if name == "_" {
            let v = Var::new(&format!("_{}", self.anon));
            self.anon += 1;
            v
        } else {
            Var::new(name)
        }
    }

    fn atom(&mut self) -> PResult<Atom> {
        let name = match self.bump() {
            Tok::Ident(s) | Tok::Var(s) => s,
            t => {
                self.pos -= 1;
                return self.error(format!("expected a predicate, found {t}"));
            }
        };
        let mut terms = Vec::new();
        if self.eat(&Tok::LParen) && !self.eat(&Tok::RParen) {
            loop {
                terms.push(self.term()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
            }
        }
        Ok(Atom::new(&name, terms))
    }

    fn term(&mut self) -> PResult<Term> {
        let neg = self.eat(&Tok::Minus);
        match self.bump() {
            Tok::Num(v) => Ok(Term::Val(Value::num(if neg { -v } else { v }))),
            _ if neg => {
                self.pos -= 1;
                self.error("expected a number after `-`")
            }
            Tok::Var(v) => Ok(Term::Var(self.var(&v))),
            Tok::Ident(s) => Ok(Term::Val(Value::sym(&s))),
            Tok::Str(s) => Ok(Term::Val(Value::Str(s.into()))),
            t => {
                self.pos -= 1;
                self.error(format!("expected a term, found {t}"))
            }
        }
    }
}

fn lex(text: &str) -> (Parser, Vec<Diagnostic>) {
    let (toks, diags) = Lexer::new(text).tokenize();
    (Parser::new(toks), diags)
}

/// Parses a weighted program. Rules without a `w ::` prefix are hard.
pub fn parse_program(text: &str) -> Result<Program, ParseErrors> {
    let (mut p, mut diags) = lex(text);
    let mut program = Program::default();
    while !p.at_eof() {
        match p.rule() {
            Ok(rule) => {
                let span = rule.span;
                if let Err(e) = program.push(rule) {
                    diags.push(model_diag(e, span));
                }
            }
            Err(d) => {
                diags.push(d);
                p.recover();
            }
        }
    }
    if diags.is_empty() {
        Ok(program)
    } else {
        diags.sort_by_key(|d| d.span.start);
        Err(ParseErrors(diags))
    }
}

fn model_diag(e: ModelError, span: SourceSpan) -> Diagnostic {
    let code = match e {
        ModelError::ArityMismatch { .. } => codes::ARITY,
        _ => codes::SYNTAX,
    };
    Diagnostic {
        code,
        message: e.to_string(),
        span,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactFormat {
    Datalog,
    Csv,
}

impl FactFormat {
    /// Picks the format from a file name: `.csv` is CSV, anything else Datalog.
    pub fn from_path(path: &str) -> FactFormat {
        if path.to_ascii_lowercase().ends_with(".csv") {
            FactFormat::Csv
        } else {
            FactFormat::Datalog
        }
    }
}

/// Reads ground facts. CSV input holds one predicate per file, named by a
/// `pred:arity` header line.
pub fn parse_facts(text: &str, format: FactFormat) -> Result<Instance, ParseErrors> {
    match format {
        FactFormat::Datalog => parse_datalog_facts(text),
        FactFormat::Csv => parse_csv_facts(text),
    }
}

fn parse_datalog_facts(text: &str) -> Result<Instance, ParseErrors> {
    let (mut p, mut diags) = lex(text);
    let mut inst = Instance::new();
    let mut arities: HashMap<crate::model::Pred, usize> = HashMap::new();
    while !p.at_eof() {
        let span = p.span();
        let parsed = p
            .atom()
            .and_then(|a| p.expect(Tok::Dot, "`.` after the fact").map(|_| a));
        match parsed {
            Ok(atom) => {
                let span = SourceSpan {
                    end: p.prev_end(),
                    ..span
                };
                if !atom.is_ground() {
                    diags.push(Diagnostic {
                        code: codes::NON_GROUND_FACT,
                        message: format!("fact {atom} contains variables"),
                        span,
                    });
                    continue;
                }
                if let Some(&a) = arities.get(&atom.pred) {
                    if a != atom.arity() {
                        diags.push(Diagnostic {
                            code: codes::ARITY,
                            message: format!(
                                "predicate {} used with arity {}, earlier with arity {a}",
                                atom.pred,
                                atom.arity()
                            ),
                            span,
                        });
                        continue;
                    }
                }
                arities.insert(atom.pred.clone(), atom.arity());
                let fact = crate::model::Substitution::new().apply(&atom).expect("ground atom");
                inst.insert(fact);
            }
            Err(d) => {
                diags.push(d);
                p.recover();
            }
        }
    }
    if diags.is_empty() {
        Ok(inst)
    } else {
        Err(ParseErrors(diags))
    }
}

/// Interprets a CSV field: numbers stay numeric, lower-case identifiers are
/// symbols, everything else a string constant.
pub fn csv_value(field: &str) -> Value {
    let field = field.trim();
    if let Ok(v) = field.parse::<f64>() {
        if v.is_finite() {
            return Value::num(v);
        }
    }
    if is_symbol(field) {
        Value::sym(field)
    } else {
        Value::Str(field.into())
    }
}

fn is_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_lowercase())
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
        && !matches!(s, "not" | "exists" | "or" | "and" | "inf")
}

fn parse_csv_facts(text: &str) -> Result<Instance, ParseErrors> {
    let err = |code, message: String, line: usize| {
        ParseErrors(vec![Diagnostic {
            code,
            message,
            span: SourceSpan {
                line,
                column: 1,
                start: 0,
                end: 0,
            },
        }])
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(r)) => r,
        Some(Err(e)) => return Err(err(codes::CSV_HEADER, e.to_string(), 1)),
        None => return Ok(Instance::new()),
    };
    let spec = header.get(0).unwrap_or("");
    let (pred, arity) = spec
        .split_once(':')
        .and_then(|(p, a)| Some((p.trim(), a.trim().parse::<usize>().ok()?)))
        .filter(|(p, _)| !p.is_empty())
        .ok_or_else(|| {
            err(
                codes::CSV_HEADER,
                format!("expected a `predicate:arity` header, found `{spec}`"),
                1,
            )
        })?;
    let mut inst = Instance::new();
    for rec in records {
        let rec = rec.map_err(|e| err(codes::MALFORMED_ROW, e.to_string(), 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != arity {
            return Err(err(
                codes::MALFORMED_ROW,
                format!("row has {} fields, {pred} has arity {arity}", rec.len()),
                line,
            ));
        }
        inst.insert(Fact::new(pred, rec.iter().map(csv_value).collect()));
    }
    Ok(inst)
}

/// Writes facts as one CSV file per predicate-compatible block.
pub fn facts_to_csv(pred: &str, facts: &[Fact]) -> String {
    let arity = facts.first().map_or(0, |f| f.args.len());
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record([format!("{pred}:{arity}")]).expect("in-memory write");
    for f in facts {
        w.write_record(f.args.iter().map(|v| match v {
            Value::Str(s) => s.to_string(),
            other => other.to_string(),
        }))
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Renames nulls to `_:n0`, `_:n1`, ... in order of first appearance.
#[derive(Default)]
pub struct NullNamer {
    names: HashMap<NullId, usize>,
}

impl NullNamer {
    pub fn new() -> NullNamer {
        NullNamer::default()
    }

    pub fn write_fact(&mut self, out: &mut String, fact: &Fact) {
        use std::fmt::Write;
        write!(out, "{}(", fact.pred).expect("string write");
        for (i, v) in fact.args.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            match v {
                Value::Null(id) => {
                    let n = self.index(*id);
                    write!(out, "_:n{n}").expect("string write");
                }
                other => write!(out, "{other}").expect("string write"),
            }
        }
        out.push(')');
    }

    fn index(&mut self, id: NullId) -> usize {
        let next = self.names.len();
        *self.names.entry(id).or_insert(next)
    }

    /// A value as a bare CSV field: strings unquoted, nulls renamed.
    pub fn field(&mut self, v: &Value) -> String {
        match v {
            Value::Null(id) => format!("_:n{}", self.index(*id)),
            Value::Str(s) => s.to_string(),
            other => other.to_string(),
        }
    }
}

/// Sorts facts by predicate, then terms.
pub fn sort_facts<T>(items: &mut [(Fact, T)]) {
    items.sort_by(|a, b| a.0.cmp(&b.0));
}

/// One `fact\tprobability` line per answer, probabilities with six decimals.
pub fn serialize_answer(answer: &[(Fact, f64)]) -> String {
    let mut sorted: Vec<(Fact, f64)> = answer.to_vec();
    sort_facts(&mut sorted);
    let mut namer = NullNamer::new();
    let mut out = String::new();
    for (fact, p) in &sorted {
        namer.write_fact(&mut out, fact);
        out.push_str(&format!("\t{p:.6}\n"));
    }
    out
}

/// One `fact.` line per fact in canonical order.
pub fn serialize_facts<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> String {
    let mut sorted: Vec<&Fact> = facts.into_iter().collect();
    sorted.sort();
    let mut namer = NullNamer::new();
    let mut out = String::new();
    for fact in sorted {
        namer.write_fact(&mut out, fact);
        out.push_str(".\n");
    }
    out
}

/// A query: either a predicate name or a conjunctive query `ans(X) <- body.`
#[derive(Clone, Debug, PartialEq)]
pub enum Query {
    Atomic(crate::model::Pred),
    Conjunctive { head: Atom, body: Vec<Literal> },
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Atomic(p) => write!(f, "{p}"),
            Query::Conjunctive { head, body } => {
                write!(f, "{head} <- ")?;
                for (i, l) in body.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{l}")?;
                }
                f.write_str(".")
            }
        }
    }
}

/// Parses `pred`, `pred(X,Y)` or `head <- body` (also `head :- body`).
/// An atom with constants or repeated variables becomes a conjunctive query
/// whose head lists its distinct variables.
pub fn parse_query(text: &str) -> Result<Query, ParseErrors> {
    let (mut p, diags) = lex(text);
    if !diags.is_empty() {
        return Err(ParseErrors(diags));
    }
    let q = (|| -> PResult<Query> {
        let head = p.atom()?;
        if p.eat(&Tok::LArrow) {
            let body = p.literals()?;
            p.eat(&Tok::Dot);
            if !p.at_eof() {
                return p.error(format!("unexpected {} after the query", p.peek()));
            }
            return Ok(Query::Conjunctive { head, body });
        }
        p.eat(&Tok::Dot);
        if !p.at_eof() {
            return p.error(format!("unexpected {} after the query", p.peek()));
        }
        let mut seen = BTreeSet::new();
        let plain = head.terms.iter().all(|t| match t {
            Term::Var(v) => seen.insert(v.clone()),
            Term::Val(_) => false,
        });
        if plain {
            return Ok(Query::Atomic(head.pred));
        }
        let mut vars: Vec<Term> = Vec::new();
        for v in head.vars() {
            let t = Term::Var(v.clone());
            if !vars.contains(&t) {
                vars.push(t);
            }
        }
        Ok(Query::Conjunctive {
            head: Atom::new("q", vars),
            body: vec![Literal::Pos(head)],
        })
    })();
    q.map_err(|d| ParseErrors(vec![d]))
}

impl fmt::Display for Diagnostics<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Display adapter for a diagnostic list.
pub struct Diagnostics<'a>(pub &'a [Diagnostic]);

/// Writes a string constant with surface-syntax quoting.
pub fn quote(s: &str) -> String {
    struct Q<'a>(&'a str);
    impl fmt::Display for Q<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write_quoted(f, self.0)
        }
    }
    Q(s).to_string()
}
