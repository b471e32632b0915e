//! Formula language for bounded past-time STL in positive normal form.
//!
//! Concrete syntax:
//!
//! ```text
//! formula := or
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "G[" int "," int "]" unary | "F[" int "," int "]" unary | "(" formula ")" | IDENT
//! IDENT   := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! `G[a,b] φ` is the past "always" over lags `a..=b`, `F[a,b] φ` the past
//! "eventually". Temporal operators bind tighter than `&`, which binds tighter
//! than `|`. Binary operators associate to the left.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fragment::AtomicDictionary;
use crate::{Error, Result};

/// Closed window of backward lags `[a, b]`, measured in timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct TimeInterval {
    a: usize,
    b: usize,
}

impl TimeInterval {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a > b {
            return Err(Error::ReversedInterval { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn start(&self) -> usize {
        self.a
    }

    pub fn end(&self) -> usize {
        self.b
    }

    pub fn lags(&self) -> std::ops::RangeInclusive<usize> {
        self.a..=self.b
    }

    pub fn contains_interval(&self, other: &TimeInterval) -> bool {
        self.a <= other.a && other.b <= self.b
    }
}

impl TryFrom<(usize, usize)> for TimeInterval {
    type Error = Error;

    fn try_from((a, b): (usize, usize)) -> Result<Self> {
        Self::new(a, b)
    }
}

impl From<TimeInterval> for (usize, usize) {
    fn from(i: TimeInterval) -> Self {
        (i.a, i.b)
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.a, self.b)
    }
}

/// Abstract syntax tree of a formula. Predicates are referenced by their
/// 0-based index into the predicate suite.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Predicate(usize),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Always(TimeInterval, Box<Formula>),
    Eventually(TimeInterval, Box<Formula>),
}

impl Formula {
    pub fn pred(k: usize) -> Self {
        Formula::Predicate(k)
    }

    pub fn and(lhs: Formula, rhs: Formula) -> Self {
        Formula::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn or(lhs: Formula, rhs: Formula) -> Self {
        Formula::Or(Box::new(lhs), Box::new(rhs))
    }

    pub fn always(interval: TimeInterval, child: Formula) -> Self {
        Formula::Always(interval, Box::new(child))
    }

    pub fn eventually(interval: TimeInterval, child: Formula) -> Self {
        Formula::Eventually(interval, Box::new(child))
    }

    /// Largest backward lag the formula can reach.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::Predicate(_) => 0,
            Formula::And(l, r) | Formula::Or(l, r) => l.horizon().max(r.horizon()),
            Formula::Always(i, c) | Formula::Eventually(i, c) => i.end() + c.horizon(),
        }
    }

    /// Exact set of `(predicate, lag)` pairs the robustness of `self` at time
    /// `t` can depend on.
    pub fn predicate_lag_support(&self) -> BTreeSet<PredicateLag> {
        let mut out = BTreeSet::new();
        self.collect_lags(0, &mut out);
        out
    }

    fn collect_lags(&self, shift: usize, out: &mut BTreeSet<PredicateLag>) {
        match self {
            Formula::Predicate(k) => {
                out.insert(PredicateLag {
                    predicate: *k,
                    lag: shift,
                });
            }
            Formula::And(l, r) | Formula::Or(l, r) => {
                l.collect_lags(shift, out);
                r.collect_lags(shift, out);
            }
            Formula::Always(i, c) | Formula::Eventually(i, c) => {
                for j in i.lags() {
                    c.collect_lags(shift + j, out);
                }
            }
        }
    }

    /// Largest predicate index referenced, if any predicate occurs.
    pub fn max_predicate(&self) -> usize {
        match self {
            Formula::Predicate(k) => *k,
            Formula::And(l, r) | Formula::Or(l, r) => l.max_predicate().max(r.max_predicate()),
            Formula::Always(_, c) | Formula::Eventually(_, c) => c.max_predicate(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Predicate(_) => 0,
            Formula::And(l, r) | Formula::Or(l, r) => 1 + l.depth().max(r.depth()),
            Formula::Always(_, c) | Formula::Eventually(_, c) => 1 + c.depth(),
        }
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self, Formula::Always(..) | Formula::Eventually(..))
    }

    /// Pretty-printer that renders predicate indices with the given names.
    pub fn display<'a, S: AsRef<str>>(&'a self, names: &'a [S]) -> impl fmt::Display + 'a {
        Named {
            formula: self,
            names,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, name: &dyn Fn(usize) -> String) -> fmt::Result {
        match self {
            Formula::Predicate(k) => f.write_str(&name(*k)),
            Formula::Or(l, r) => {
                l.write(f, name)?;
                f.write_str(" | ")?;
                r.write_wrapped(f, name, |c| matches!(c, Formula::Or(..)))
            }
            Formula::And(l, r) => {
                l.write_wrapped(f, name, |c| matches!(c, Formula::Or(..)))?;
                f.write_str(" & ")?;
                r.write_wrapped(f, name, |c| matches!(c, Formula::Or(..) | Formula::And(..)))
            }
            Formula::Always(i, c) | Formula::Eventually(i, c) => {
                let op = if matches!(self, Formula::Always(..)) { 'G' } else { 'F' };
                write!(f, "{op}{i} ")?;
                c.write_wrapped(f, name, |c| matches!(c, Formula::Or(..) | Formula::And(..)))
            }
        }
    }

    fn write_wrapped(
        &self,
        f: &mut fmt::Formatter<'_>,
        name: &dyn Fn(usize) -> String,
        needs_parens: impl Fn(&Formula) -> bool,
    ) -> fmt::Result {
        if needs_parens(self) {
            f.write_str("(")?;
            self.write(f, name)?;
            f.write_str(")")
        } else {
            self.write(f, name)
        }
    }
}

struct Named<'a, S> {
    formula: &'a Formula,
    names: &'a [S],
}

impl<S: AsRef<str>> fmt::Display for Named<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |k: usize| match self.names.get(k) {
            Some(n) => n.as_ref().to_string(),
            None => format!("p{k}"),
        };
        self.formula.write(f, &name)
    }
}

/// Renders predicates as `p0`, `p1`, ...
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, &|k| format!("p{k}"))
    }
}

/// Coordinate `(k, j)` of the predicate-history basis: predicate `k` observed
/// `j` steps in the past.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredicateLag {
    pub predicate: usize,
    pub lag: usize,
}

impl PredicateLag {
    /// Row-major index (predicate outer, lag inner) for a history of depth `k_max`.
    pub fn index(&self, k_max: usize) -> usize {
        self.predicate * (k_max + 1) + self.lag
    }
}

pub fn horizon(f: &Formula) -> usize {
    f.horizon()
}

pub fn predicate_lag_support(f: &Formula) -> BTreeSet<PredicateLag> {
    f.predicate_lag_support()
}

/// And/Or tree whose leaves are dictionary atom indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decomposition {
    Atom(usize),
    And(Box<Decomposition>, Box<Decomposition>),
    Or(Box<Decomposition>, Box<Decomposition>),
}

impl Decomposition {
    pub fn leaves(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut BTreeSet<usize>) {
        match self {
            Decomposition::Atom(q) => {
                out.insert(*q);
            }
            Decomposition::And(l, r) | Decomposition::Or(l, r) => {
                l.collect(out);
                r.collect(out);
            }
        }
    }
}

/// Decomposes `f` into dictionary atoms combined with And/Or. Atoms are
/// matched by syntactic equality.
pub fn check_membership(f: &Formula, dict: &AtomicDictionary) -> Result<Decomposition> {
    if let Some(q) = dict.index_of(f) {
        return Ok(Decomposition::Atom(q));
    }
    match f {
        Formula::And(l, r) => Ok(Decomposition::And(
            Box::new(check_membership(l, dict)?),
            Box::new(check_membership(r, dict)?),
        )),
        Formula::Or(l, r) => Ok(Decomposition::Or(
            Box::new(check_membership(l, dict)?),
            Box::new(check_membership(r, dict)?),
        )),
        _ => Err(Error::NotInFragment(f.display(dict.predicate_names()).to_string())),
    }
}

/// Indices of the dictionary atoms the decoder of `f` depends on.
pub fn atom_support(f: &Formula, dict: &AtomicDictionary) -> Result<BTreeSet<usize>> {
    Ok(check_membership(f, dict)?.leaves())
}

/// Parses `text` against the ordered predicate suite `names`.
pub fn parse_formula<S: AsRef<str>>(text: &str, names: &[S]) -> Result<Formula> {
    let mut parser = Parser {
        lexer: Lexer::new(text),
        names,
        peeked: None,
    };
    let f = parser.formula()?;
    let tok = parser.next()?;
    match tok.kind {
        Tok::Eof => Ok(f),
        _ => Err(tok.error(format!("unexpected {}", tok.kind.describe()))),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    And,
    Or,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: Tok,
    line: usize,
    column: usize,
}

impl Token {
    fn error(&self, message: String) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.column,
            message,
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn next_token(&mut self) -> Result<Token> {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.bump();
        }
        let (line, column) = (self.line, self.column);
        let tok = |kind| Ok(Token { kind, line, column });
        let Some(c) = self.bump() else {
            return tok(Tok::Eof);
        };
        match c {
            '[' => tok(Tok::LBracket),
            ']' => tok(Tok::RBracket),
            '(' => tok(Tok::LParen),
            ')' => tok(Tok::RParen),
            ',' => tok(Tok::Comma),
            '&' => tok(Tok::And),
            '|' => tok(Tok::Or),
            '!' | '~' | '¬' => Err(Error::Negation { line, column }),
            c if c.is_ascii_digit() => {
                let mut s = String::from(c);
                while let Some(&d) = self.chars.peek().filter(|d| d.is_ascii_digit()) {
                    s.push(d);
                    self.bump();
                }
                let n = s.parse().map_err(|_| Error::Syntax {
                    line,
                    column,
                    message: format!("integer `{s}` out of range"),
                })?;
                tok(Tok::Int(n))
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::from(c);
                while let Some(&d) = self
                    .chars
                    .peek()
                    .filter(|d| d.is_ascii_alphanumeric() || **d == '_')
                {
                    s.push(d);
                    self.bump();
                }
                tok(Tok::Ident(s))
            }
            c => Err(Error::Syntax {
                line,
                column,
                message: format!("unexpected character `{c}`"),
            }),
        }
    }
}

struct Parser<'a, S> {
    lexer: Lexer<'a>,
    names: &'a [S],
    peeked: Option<Token>,
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn peek(&mut self) -> Result<&Token> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().expect("peeked token"))
    }

    fn next(&mut self) -> Result<Token> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    fn expect(&mut self, kind: Tok) -> Result<Token> {
        let tok = self.next()?;
        if tok.kind == kind {
            Ok(tok)
        } else {
            Err(tok.error(format!(
                "expected {}, found {}",
                kind.describe(),
                tok.kind.describe()
            )))
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let mut lhs = self.conjunction()?;
        while self.peek()?.kind == Tok::Or {
            self.next()?;
            lhs = Formula::or(lhs, self.conjunction()?);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut lhs = self.unary()?;
        while self.peek()?.kind == Tok::And {
            self.next()?;
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula> {
        let tok = self.next()?;
        match &tok.kind {
            Tok::LParen => {
                let f = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(f)
            }
            Tok::Ident(name) => {
                if (name == "G" || name == "F") && self.peek()?.kind == Tok::LBracket {
                    let interval = self.interval()?;
                    let child = self.unary()?;
                    return Ok(if name == "G" {
                        Formula::always(interval, child)
                    } else {
                        Formula::eventually(interval, child)
                    });
                }
                match self.names.iter().position(|n| n.as_ref() == name) {
                    Some(k) => Ok(Formula::Predicate(k)),
                    None => Err(Error::UnknownPredicate {
                        name: name.clone(),
                        line: tok.line,
                        column: tok.column,
                    }),
                }
            }
            other => Err(tok.error(format!(
                "expected a predicate, temporal operator or `(`, found {}",
                other.describe()
            ))),
        }
    }

    fn interval(&mut self) -> Result<TimeInterval> {
        self.expect(Tok::LBracket)?;
        let a = self.int()?;
        self.expect(Tok::Comma)?;
        let b = self.int()?;
        self.expect(Tok::RBracket)?;
        TimeInterval::new(a, b)
    }

    fn int(&mut self) -> Result<usize> {
        let tok = self.next()?;
        match &tok.kind {
            Tok::Int(n) => Ok(*n),
            other => Err(tok.error(format!("expected an integer, found {}", other.describe()))),
        }
    }
}
