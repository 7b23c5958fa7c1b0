//! Program frontend: a small loop language and its structured counterpart.
//!
//! The input model is a single loop over real-valued variables whose body is a
//! tree of polynomial-guarded conditionals with (parallel) polynomial
//! assignments at the leaves.  Parsing flattens that tree into a *conditioned
//! polynomial discrete system*: an initial region, a loop guard, and a list of
//! guarded update branches, one per root-to-leaf path.  `if` without `else`
//! (and every `else` itself) contributes complement branches built from the
//! negated tests, so the flattened guards cover exactly what the program
//! covers: negating `r <= 0` gives `-r < 0` and vice versa.
//!
//! Sequential assignment sugar: variables not declared in `vars` are
//! per-iteration temporaries and are eliminated by substitution.  Reading a
//! *state* variable after it has been reassigned in the same path is rejected
//! ("assignment not in parallel form") rather than silently reinterpreted, so
//! every accepted body is equivalent to one parallel update per path.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

/// `{ x | strict_i(x) < 0, weak_j(x) <= 0 }`; empty lists mean the whole space.
#[derive(Clone, PartialEq, Debug)]
pub struct ConstraintSet {
    pub strict: Vec<Polynomial>,
    pub weak: Vec<Polynomial>,
}

impl ConstraintSet {
    pub fn whole_space() -> Self {
        ConstraintSet { strict: Vec::new(), weak: Vec::new() }
    }

    pub fn is_whole_space(&self) -> bool {
        self.strict.is_empty() && self.weak.is_empty()
    }

    /// Exact IEEE membership test, inequalities evaluated as written.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.strict.iter().all(|r| r.eval(point) < 0.0)
            && self.weak.iter().all(|r| r.eval(point) <= 0.0)
    }

    /// All constraint polynomials with their strictness flag, weak first.
    pub fn iter_all(&self) -> impl Iterator<Item = (&Polynomial, bool)> {
        self.weak.iter().map(|p| (p, false)).chain(self.strict.iter().map(|p| (p, true)))
    }

    pub fn len(&self) -> usize {
        self.strict.len() + self.weak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_degree(&self) -> u32 {
        self.iter_all().map(|(p, _)| p.degree()).max().unwrap_or(0)
    }
}

/// One guarded update: if the state lies in `guard` (and the loop guard), the
/// next state is `update(x)`.
#[derive(Clone, PartialEq, Debug)]
pub struct Branch {
    pub guard: ConstraintSet,
    pub update: Vec<Polynomial>,
}

impl Branch {
    /// Degree of the update map, at least 1 (affine maps count as degree 1).
    pub fn update_degree(&self) -> u32 {
        self.update.iter().map(Polynomial::degree).max().unwrap_or(0).max(1)
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// The set of allowed initial states.  Boxes are the native compact form; a
/// general semialgebraic description requires the user to attest compactness
/// and to supply a bounding box for samplers.
#[derive(Clone, PartialEq, Debug)]
pub enum InitRegion {
    Box(Vec<Interval>),
    SemiAlgebraic { constraints: ConstraintSet, compact_attested: bool, sample_box: Vec<Interval> },
}

impl InitRegion {
    /// The region as a constraint set (`a <= x_i <= b` becomes two weak rows).
    pub fn constraints(&self, d: usize) -> ConstraintSet {
        match self {
            InitRegion::Box(ivals) => {
                let mut weak = Vec::with_capacity(2 * d);
                for (i, iv) in ivals.iter().enumerate() {
                    let xi = Polynomial::var(d, i);
                    weak.push(xi.sub(&Polynomial::constant(d, iv.hi))); // x_i - hi <= 0
                    weak.push(Polynomial::constant(d, iv.lo).sub(&xi)); // lo - x_i <= 0
                }
                ConstraintSet { strict: Vec::new(), weak }
            }
            InitRegion::SemiAlgebraic { constraints, .. } => constraints.clone(),
        }
    }

    /// A box to draw samples from (the region itself for boxes).
    pub fn sample_box(&self) -> &[Interval] {
        match self {
            InitRegion::Box(ivals) => ivals,
            InitRegion::SemiAlgebraic { sample_box, .. } => sample_box,
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        match self {
            InitRegion::Box(ivals) => ivals
                .iter()
                .zip(point)
                .all(|(iv, &x)| iv.lo <= x && x <= iv.hi),
            InitRegion::SemiAlgebraic { constraints, .. } => constraints.contains(point),
        }
    }
}

/// The flattened loop system: initial region, loop guard, guarded branches.
#[derive(Clone, PartialEq, Debug)]
pub struct Cpds {
    pub dimension: usize,
    pub var_names: Vec<String>,
    pub init: InitRegion,
    pub loop_guard: ConstraintSet,
    pub branches: Vec<Branch>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyMode {
    /// The certified level is whatever bound the synthesis produces.
    Bounded,
    /// The certified level must be negative (unsafe-region avoidance).
    Avoid,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SublevelProperty {
    pub kappa: Polynomial,
    pub mode: PropertyMode,
}

/// Parse result: the system plus the optional property line.
#[derive(Clone, PartialEq, Debug)]
pub struct Program {
    pub cpds: Cpds,
    pub property: Option<SublevelProperty>,
}

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("line {line}, col {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}, col {col}: non-polynomial expression: {what}")]
    NonPolynomial { line: usize, col: usize, what: String },
    #[error("line {line}, col {col}: unknown variable `{name}`")]
    UnknownVariable { line: usize, col: usize, name: String },
    #[error("line {line}, col {col}: assignment not in parallel form: `{name}` is read after being reassigned (use parallel assignment or a temporary)")]
    NotParallel { line: usize, col: usize, name: String },
    #[error("no loop found in program")]
    NoLoop,
    #[error("structured input: {0}")]
    Structured(String),
    #[error("invalid system: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Debug)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Assign,
    Caret,
    Star,
    Plus,
    Minus,
    Slash,
    Le,
    Lt,
    Ge,
    Gt,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(v) => format!("number `{v}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Star => "`*`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, FrontendError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let (tline, tcol) = (line, col);
        let mut push = |tok: Tok| out.push(Spanned { tok, line: tline, col: tcol });
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '{' => push(Tok::LBrace),
            '}' => push(Tok::RBrace),
            '[' => push(Tok::LBracket),
            ']' => push(Tok::RBracket),
            ',' => push(Tok::Comma),
            ';' => push(Tok::Semi),
            '=' => push(Tok::Assign),
            '^' => push(Tok::Caret),
            '*' => push(Tok::Star),
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '/' => push(Tok::Slash),
            '<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push(Tok::Le);
                    i += 1;
                    col += 1;
                } else {
                    push(Tok::Lt);
                }
            }
            '>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push(Tok::Ge);
                    i += 1;
                    col += 1;
                } else {
                    push(Tok::Gt);
                }
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let save = i;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    if i < bytes.len() && bytes[i].is_ascii_digit() {
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = save; // the 'e' belongs to an identifier, not this number
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| FrontendError::Syntax {
                    line: tline,
                    col: tcol,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push(Spanned { tok: Tok::Num(v), line: tline, col: tcol });
                col += i - start;
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(src[start..i].to_string()),
                    line: tline,
                    col: tcol,
                });
                col += i - start;
                continue;
            }
            _ => {
                return Err(FrontendError::Syntax {
                    line: tline,
                    col: tcol,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Var(String, usize, usize), // name, line, col
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// One comparison `lhs (<=|<) rhs`, normalized to `lhs - rhs (<=|<) 0`.
#[derive(Clone, Debug)]
struct Cond {
    tests: Vec<(Expr, bool)>, // (polynomial expression, strict?)
}

#[derive(Clone, Debug)]
enum Stmt {
    Assign { targets: Vec<(String, usize, usize)>, values: Vec<Expr> },
    If { cond: Cond, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct P {
    toks: Vec<Spanned>,
    pos: usize,
}

impl P {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, FrontendError> {
        let t = self.peek();
        Err(FrontendError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<Spanned, FrontendError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            let found = self.peek().tok.describe();
            self.err(format!("expected {}, found {}", tok.describe(), found))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), FrontendError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            other => {
                let found = other.describe();
                self.err(format!("expected `{kw}`, found {found}"))
            }
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<(String, usize, usize), FrontendError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                let t = self.next();
                Ok((s, t.line, t.col))
            }
            other => self.err(format!("expected identifier, found {}", other.describe())),
        }
    }

    fn signed_number(&mut self) -> Result<f64, FrontendError> {
        let mut sign = 1.0;
        loop {
            match self.peek().tok {
                Tok::Minus => {
                    sign = -sign;
                    self.next();
                }
                Tok::Plus => {
                    self.next();
                }
                _ => break,
            }
        }
        match self.peek().tok {
            Tok::Num(v) => {
                self.next();
                Ok(sign * v)
            }
            _ => self.err("expected a number"),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    e = Expr::Add(Box::new(e), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.next();
                    e = Expr::Sub(Box::new(e), Box::new(self.term()?));
                }
                _ => return Ok(e),
            }
        }
    }

    // term := factor ('*' factor | factor)*   (juxtaposition is multiplication)
    fn term(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.factor()?;
        loop {
            match &self.peek().tok {
                Tok::Star => {
                    self.next();
                    e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    let t = self.peek().clone();
                    return Err(FrontendError::NonPolynomial {
                        line: t.line,
                        col: t.col,
                        what: "division".into(),
                    });
                }
                Tok::Num(_) | Tok::LParen => {
                    e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
                }
                Tok::Ident(s) if !is_keyword(s) => {
                    e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
                }
                _ => return Ok(e),
            }
        }
    }

    // factor := primary ('^' uint)?
    fn factor(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.primary()?;
        while self.peek().tok == Tok::Caret {
            self.next();
            match self.peek().tok {
                Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                    self.next();
                    e = Expr::Pow(Box::new(e), v as u32);
                }
                _ => return self.err("exponent must be a nonnegative integer"),
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.next();
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                let t = self.next();
                if self.peek().tok == Tok::LParen {
                    // function application: nothing transcendental is polynomial
                    return Err(FrontendError::NonPolynomial {
                        line: t.line,
                        col: t.col,
                        what: format!("call to `{name}`"),
                    });
                }
                Ok(Expr::Var(name, t.line, t.col))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Minus => {
                self.next();
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Tok::Plus => {
                self.next();
                self.factor()
            }
            other => self.err(format!("expected an expression, found {}", other.describe())),
        }
    }

    // cond := cmp ('and' cmp)*
    fn cond(&mut self) -> Result<Cond, FrontendError> {
        let mut tests = vec![self.comparison()?];
        while self.at_kw("and") {
            self.next();
            tests.push(self.comparison()?);
        }
        Ok(Cond { tests })
    }

    fn comparison(&mut self) -> Result<(Expr, bool), FrontendError> {
        let lhs = self.expr()?;
        let (strict, flip) = match self.peek().tok {
            Tok::Le => (false, false),
            Tok::Lt => (true, false),
            Tok::Ge => (false, true),
            Tok::Gt => (true, true),
            _ => return self.err("expected a comparison (`<=`, `<`, `>=`, `>`)"),
        };
        self.next();
        let rhs = self.expr()?;
        let diff = if flip {
            Expr::Sub(Box::new(rhs), Box::new(lhs))
        } else {
            Expr::Sub(Box::new(lhs), Box::new(rhs))
        };
        Ok((diff, strict))
    }

    fn body(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        let mut stmts = Vec::new();
        while self.peek().tok != Tok::RBrace {
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        if self.at_kw("if") {
            self.next();
            self.expect(Tok::LParen)?;
            let cond = self.cond()?;
            self.expect(Tok::RParen)?;
            self.expect(Tok::LBrace)?;
            let then_body = self.body()?;
            self.expect(Tok::RBrace)?;
            let else_body = if self.at_kw("else") {
                self.next();
                if self.at_kw("if") {
                    vec![self.stmt()?]
                } else {
                    self.expect(Tok::LBrace)?;
                    let b = self.body()?;
                    self.expect(Tok::RBrace)?;
                    b
                }
            } else {
                Vec::new()
            };
            return Ok(Stmt::If { cond, then_body, else_body });
        }
        // assignment: ident (, ident)* = expr (, expr)* ;
        let mut targets = vec![self.ident()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            targets.push(self.ident()?);
        }
        self.expect(Tok::Assign)?;
        let mut values = vec![self.expr()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            values.push(self.expr()?);
        }
        if values.len() != targets.len() {
            return self.err(format!(
                "parallel assignment arity mismatch: {} targets, {} expressions",
                targets.len(),
                values.len()
            ));
        }
        self.expect(Tok::Semi)?;
        Ok(Stmt::Assign { targets, values })
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "vars" | "init" | "property" | "while" | "if" | "else" | "in" | "and" | "avoid")
}

// ---------------------------------------------------------------------------
// Flattening
// ---------------------------------------------------------------------------

struct Flattener<'a> {
    d: usize,
    var_index: &'a HashMap<String, usize>,
}

#[derive(Clone)]
struct PathState {
    state: Vec<Polynomial>,
    memory: HashMap<String, Polynomial>,
    reassigned: Vec<bool>,
}

impl<'a> Flattener<'a> {
    fn lower_expr(&self, e: &Expr, st: &PathState) -> Result<Polynomial, FrontendError> {
        match e {
            Expr::Num(v) => Ok(Polynomial::constant(self.d, *v)),
            Expr::Var(name, line, col) => {
                if let Some(&idx) = self.var_index.get(name) {
                    if st.reassigned[idx] {
                        return Err(FrontendError::NotParallel {
                            line: *line,
                            col: *col,
                            name: name.clone(),
                        });
                    }
                    Ok(st.state[idx].clone())
                } else if let Some(p) = st.memory.get(name) {
                    Ok(p.clone())
                } else {
                    Err(FrontendError::UnknownVariable {
                        line: *line,
                        col: *col,
                        name: name.clone(),
                    })
                }
            }
            Expr::Add(a, b) => Ok(self.lower_expr(a, st)?.add(&self.lower_expr(b, st)?)),
            Expr::Sub(a, b) => Ok(self.lower_expr(a, st)?.sub(&self.lower_expr(b, st)?)),
            Expr::Mul(a, b) => Ok(self.lower_expr(a, st)?.mul(&self.lower_expr(b, st)?)),
            Expr::Neg(a) => Ok(self.lower_expr(a, st)?.neg()),
            Expr::Pow(a, e) => Ok(self.lower_expr(a, st)?.pow(*e)),
        }
    }

    fn lower_cond(&self, c: &Cond, st: &PathState) -> Result<Vec<(Polynomial, bool)>, FrontendError> {
        c.tests.iter().map(|(e, strict)| Ok((self.lower_expr(e, st)?, *strict))).collect()
    }

    fn flatten(
        &self,
        stmts: &[Stmt],
        mut st: PathState,
        conds: Vec<(Polynomial, bool)>,
        out: &mut Vec<Branch>,
    ) -> Result<(), FrontendError> {
        for (idx, stmt) in stmts.iter().enumerate() {
            match stmt {
                Stmt::Assign { targets, values } => {
                    let vals: Vec<Polynomial> = values
                        .iter()
                        .map(|e| self.lower_expr(e, &st))
                        .collect::<Result<_, _>>()?;
                    for ((name, _, _), v) in targets.iter().zip(vals) {
                        if let Some(&vi) = self.var_index.get(name) {
                            st.state[vi] = v;
                            st.reassigned[vi] = true;
                        } else {
                            st.memory.insert(name.clone(), v);
                        }
                    }
                }
                Stmt::If { cond, then_body, else_body } => {
                    let tests = self.lower_cond(cond, &st)?;
                    let rest = &stmts[idx + 1..];
                    // taken path
                    let mut seq = then_body.clone();
                    seq.extend_from_slice(rest);
                    let mut c = conds.clone();
                    c.extend(tests.iter().cloned());
                    self.flatten(&seq, st.clone(), c, out)?;
                    // complement: one disjoint branch per negated test
                    for k in 0..tests.len() {
                        let mut c = conds.clone();
                        c.extend(tests.iter().take(k).cloned());
                        let (r, strict) = &tests[k];
                        c.push((r.neg(), !*strict));
                        let mut seq = else_body.clone();
                        seq.extend_from_slice(rest);
                        self.flatten(&seq, st.clone(), c, out)?;
                    }
                    return Ok(());
                }
            }
        }
        let mut guard = ConstraintSet::whole_space();
        for (r, strict) in conds {
            if strict {
                guard.strict.push(r);
            } else {
                guard.weak.push(r);
            }
        }
        out.push(Branch { guard, update: st.state });
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Top-level parse
// ---------------------------------------------------------------------------

/// Parse program text: the loop DSL, or (when the first significant byte is
/// `{`) the structured JSON form.
pub fn parse_program(source: &str) -> Result<Program, FrontendError> {
    if source.trim_start().starts_with('{') {
        return parse_structured(source);
    }
    parse_ploop(source)
}

pub fn parse_ploop(source: &str) -> Result<Program, FrontendError> {
    let toks = lex(source)?;
    if toks.len() == 1 {
        return Err(FrontendError::NoLoop);
    }
    let mut p = P { toks, pos: 0 };

    p.expect_kw("vars")?;
    let mut var_names = Vec::new();
    loop {
        let (name, line, col) = p.ident()?;
        if is_keyword(&name) {
            return Err(FrontendError::Syntax {
                line,
                col,
                msg: format!("`{name}` is a keyword and cannot be a variable"),
            });
        }
        if var_names.contains(&name) {
            return Err(FrontendError::Syntax {
                line,
                col,
                msg: format!("duplicate variable `{name}`"),
            });
        }
        var_names.push(name);
        match p.peek().tok {
            Tok::Comma => {
                p.next();
            }
            Tok::Semi => break,
            _ => continue, // space-separated list
        }
    }
    p.expect(Tok::Semi)?;
    let d = var_names.len();
    let var_index: HashMap<String, usize> =
        var_names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    p.expect_kw("init")?;
    let mut intervals = vec![None; d];
    loop {
        let (name, line, col) = p.ident()?;
        let idx = *var_index.get(&name).ok_or_else(|| FrontendError::UnknownVariable {
            line,
            col,
            name: name.clone(),
        })?;
        p.expect_kw("in")?;
        p.expect(Tok::LBracket)?;
        let lo = p.signed_number()?;
        p.expect(Tok::Comma)?;
        let hi = p.signed_number()?;
        p.expect(Tok::RBracket)?;
        if !(lo <= hi) {
            return Err(FrontendError::Syntax {
                line,
                col,
                msg: format!("empty interval [{lo}, {hi}] for `{name}`"),
            });
        }
        intervals[idx] = Some(Interval { lo, hi });
        if p.peek().tok == Tok::Comma {
            p.next();
        } else {
            break;
        }
    }
    p.expect(Tok::Semi)?;
    let intervals: Vec<Interval> = intervals
        .into_iter()
        .enumerate()
        .map(|(i, iv)| {
            iv.ok_or_else(|| FrontendError::Invalid(format!(
                "variable `{}` has no initial interval",
                var_names[i]
            )))
        })
        .collect::<Result<_, _>>()?;

    // property kappa = <poly> [avoid];
    let mut property = None;
    if p.at_kw("property") {
        p.next();
        let _name = p.ident()?;
        p.expect(Tok::Assign)?;
        let expr = p.expr()?;
        let mode = if p.at_kw("avoid") {
            p.next();
            PropertyMode::Avoid
        } else {
            PropertyMode::Bounded
        };
        p.expect(Tok::Semi)?;
        let base = PathState {
            state: (0..d).map(|i| Polynomial::var(d, i)).collect(),
            memory: HashMap::new(),
            reassigned: vec![false; d],
        };
        let fl = Flattener { d, var_index: &var_index };
        let kappa = fl.lower_expr(&expr, &base)?;
        property = Some(SublevelProperty { kappa, mode });
    }

    if !p.at_kw("while") {
        return Err(FrontendError::NoLoop);
    }
    p.next();
    p.expect(Tok::LParen)?;
    let guard_cond = p.cond()?;
    p.expect(Tok::RParen)?;
    p.expect(Tok::LBrace)?;
    let body = p.body()?;
    p.expect(Tok::RBrace)?;
    if p.peek().tok != Tok::Eof {
        return p.err(format!("unexpected {} after loop", p.peek().tok.describe()));
    }

    let fl = Flattener { d, var_index: &var_index };
    let base = PathState {
        state: (0..d).map(|i| Polynomial::var(d, i)).collect(),
        memory: HashMap::new(),
        reassigned: vec![false; d],
    };
    let guard_tests = fl.lower_cond(&guard_cond, &base)?;
    let mut loop_guard = ConstraintSet::whole_space();
    for (r, strict) in guard_tests {
        if strict {
            loop_guard.strict.push(r);
        } else {
            loop_guard.weak.push(r);
        }
    }
    let mut branches = Vec::new();
    fl.flatten(&body, base, Vec::new(), &mut branches)?;

    let cpds = Cpds {
        dimension: d,
        var_names,
        init: InitRegion::Box(intervals),
        loop_guard,
        branches,
    };
    cpds.validate().map_err(FrontendError::Invalid)?;
    Ok(Program { cpds, property })
}

impl Cpds {
    pub fn validate(&self) -> Result<(), String> {
        if self.dimension == 0 {
            return Err("dimension must be at least 1".into());
        }
        if self.branches.is_empty() {
            return Err("at least one branch is required".into());
        }
        if self.var_names.len() != self.dimension {
            return Err("variable name list does not match dimension".into());
        }
        let d = self.dimension;
        let check_poly = |p: &Polynomial, what: &str| {
            if p.dimension() != d {
                Err(format!("{what}: dimension {} != {d}", p.dimension()))
            } else {
                Ok(())
            }
        };
        match &self.init {
            InitRegion::Box(iv) => {
                if iv.len() != d {
                    return Err("initial box arity does not match dimension".into());
                }
                for (i, iv) in iv.iter().enumerate() {
                    if !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                        return Err(format!("initial interval {i} is not a bounded interval"));
                    }
                }
            }
            InitRegion::SemiAlgebraic { constraints, compact_attested, sample_box } => {
                if !compact_attested {
                    return Err(
                        "general initial regions require the compactness attestation flag".into()
                    );
                }
                if sample_box.len() != d {
                    return Err("sample box arity does not match dimension".into());
                }
                for (p, _) in constraints.iter_all() {
                    check_poly(p, "initial constraint")?;
                }
            }
        }
        for (p, _) in self.loop_guard.iter_all() {
            check_poly(p, "loop guard")?;
        }
        for (bi, b) in self.branches.iter().enumerate() {
            if b.update.len() != d {
                return Err(format!("branch {bi}: update has {} components, expected {d}", b.update.len()));
            }
            for (p, _) in b.guard.iter_all() {
                check_poly(p, &format!("branch {bi} guard"))?;
            }
            for (ci, p) in b.update.iter().enumerate() {
                check_poly(p, &format!("branch {bi} update component {ci}"))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Structured format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ConstraintSetDoc {
    strict: Vec<String>,
    weak: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BranchDoc {
    guard: ConstraintSetDoc,
    update: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitDoc {
    Box { r#box: Vec<[f64; 2]> },
    General {
        constraints: ConstraintSetDoc,
        compact_attested: bool,
        sample_box: Vec<[f64; 2]>,
    },
}

#[derive(Serialize, Deserialize)]
struct CpdsDoc {
    dimension: usize,
    variables: Vec<String>,
    init: InitDoc,
    loop_guard: ConstraintSetDoc,
    branches: Vec<BranchDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<PropertyMode>,
}

fn cs_to_doc(cs: &ConstraintSet) -> ConstraintSetDoc {
    ConstraintSetDoc {
        strict: cs.strict.iter().map(|p| p.to_string()).collect(),
        weak: cs.weak.iter().map(|p| p.to_string()).collect(),
    }
}

fn cs_from_doc(doc: &ConstraintSetDoc, d: usize) -> Result<ConstraintSet, FrontendError> {
    let parse = |s: &String| {
        Polynomial::parse(s, d)
            .map_err(|e| FrontendError::Structured(format!("polynomial `{s}`: {e}")))
    };
    Ok(ConstraintSet {
        strict: doc.strict.iter().map(parse).collect::<Result<_, _>>()?,
        weak: doc.weak.iter().map(parse).collect::<Result<_, _>>()?,
    })
}

/// Canonical structured rendering; `write ∘ parse ∘ write` is byte-identical.
pub fn write_structured(prog: &Program) -> String {
    let c = &prog.cpds;
    let doc = CpdsDoc {
        dimension: c.dimension,
        variables: c.var_names.clone(),
        init: match &c.init {
            InitRegion::Box(iv) => InitDoc::Box { r#box: iv.iter().map(|i| [i.lo, i.hi]).collect() },
            InitRegion::SemiAlgebraic { constraints, compact_attested, sample_box } => {
                InitDoc::General {
                    constraints: cs_to_doc(constraints),
                    compact_attested: *compact_attested,
                    sample_box: sample_box.iter().map(|i| [i.lo, i.hi]).collect(),
                }
            }
        },
        loop_guard: cs_to_doc(&c.loop_guard),
        branches: c
            .branches
            .iter()
            .map(|b| BranchDoc {
                guard: cs_to_doc(&b.guard),
                update: b.update.iter().map(|p| p.to_string()).collect(),
            })
            .collect(),
        kappa: prog.property.as_ref().map(|p| p.kappa.to_string()),
        mode: prog.property.as_ref().map(|p| p.mode),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("serialization cannot fail");
    s.push('\n');
    s
}

pub fn parse_structured(text: &str) -> Result<Program, FrontendError> {
    let doc: CpdsDoc =
        serde_json::from_str(text).map_err(|e| FrontendError::Structured(e.to_string()))?;
    let d = doc.dimension;
    let init = match &doc.init {
        InitDoc::Box { r#box } => {
            InitRegion::Box(r#box.iter().map(|&[lo, hi]| Interval { lo, hi }).collect())
        }
        InitDoc::General { constraints, compact_attested, sample_box } => InitRegion::SemiAlgebraic {
            constraints: cs_from_doc(constraints, d)?,
            compact_attested: *compact_attested,
            sample_box: sample_box.iter().map(|&[lo, hi]| Interval { lo, hi }).collect(),
        },
    };
    let cpds = Cpds {
        dimension: d,
        var_names: doc.variables.clone(),
        init,
        loop_guard: cs_from_doc(&doc.loop_guard, d)?,
        branches: doc
            .branches
            .iter()
            .map(|b| {
                Ok(Branch {
                    guard: cs_from_doc(&b.guard, d)?,
                    update: b
                        .update
                        .iter()
                        .map(|s| {
                            Polynomial::parse(s, d).map_err(|e| {
                                FrontendError::Structured(format!("update `{s}`: {e}"))
                            })
                        })
                        .collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<_, _>>()?,
    };
    cpds.validate().map_err(FrontendError::Invalid)?;
    let property = match (&doc.kappa, &doc.mode) {
        (Some(k), mode) => Some(SublevelProperty {
            kappa: Polynomial::parse(k, d)
                .map_err(|e| FrontendError::Structured(format!("kappa `{k}`: {e}")))?,
            mode: mode.unwrap_or(PropertyMode::Bounded),
        }),
        (None, Some(_)) => {
            return Err(FrontendError::Structured("mode given without kappa".into()))
        }
        (None, None) => None,
    };
    Ok(Program { cpds, property })
}

// ---------------------------------------------------------------------------
// Partition validation
// ---------------------------------------------------------------------------

/// Outcome of sampling-based partition checking: points covered by no branch
/// or by several (example lists truncated to keep reports small).
#[derive(Clone, Debug, Default)]
pub struct PartitionReport {
    pub samples: usize,
    pub uncovered: Vec<Vec<f64>>,
    pub multiply_covered: Vec<(Vec<f64>, Vec<usize>)>,
    pub uncovered_count: usize,
    pub multiply_covered_count: usize,
}

impl PartitionReport {
    pub fn is_clean(&self) -> bool {
        self.uncovered_count == 0 && self.multiply_covered_count == 0
    }
}

/// Sample `samples` points uniformly from `bbox` and report partition defects
/// among the branch guards (ignoring the loop guard, which gates all branches
/// equally).
pub fn validate_partition(c: &Cpds, samples: usize, bbox: &[Interval], seed: u64) -> PartitionReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = PartitionReport { samples, ..Default::default() };
    const KEEP: usize = 100;
    for _ in 0..samples {
        let point: Vec<f64> = bbox
            .iter()
            .map(|iv| if iv.lo == iv.hi { iv.lo } else { rng.gen_range(iv.lo..iv.hi) })
            .collect();
        let hits: Vec<usize> = c
            .branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.guard.contains(&point))
            .map(|(i, _)| i)
            .collect();
        if hits.is_empty() {
            report.uncovered_count += 1;
            if report.uncovered.len() < KEEP {
                report.uncovered.push(point);
            }
        } else if hits.len() > 1 {
            report.multiply_covered_count += 1;
            if report.multiply_covered.len() < KEEP {
                report.multiply_covered.push((point, hits));
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Pretty-printing back to the loop DSL
// ---------------------------------------------------------------------------

/// Render a program in the loop DSL.  Branches are written as an `if`/`else`
/// chain; this reproduces the original program exactly when the branch guards
/// follow the first-match structure the parser itself produces (each branch
/// repeating the negations of all earlier tests).  Returns `None` when the
/// guards do not have that shape (for instance, hand-written structured files
/// with overlapping branches).
pub fn write_ploop(prog: &Program) -> Option<String> {
    let c = &prog.cpds;
    let mut out = String::new();
    let _ = writeln!(out, "vars {};", c.var_names.join(", "));
    let iv = match &c.init {
        InitRegion::Box(iv) => iv,
        InitRegion::SemiAlgebraic { .. } => return None,
    };
    let inits: Vec<String> = c
        .var_names
        .iter()
        .zip(iv)
        .map(|(n, i)| format!("{n} in [{}, {}]", fmt_num(i.lo), fmt_num(i.hi)))
        .collect();
    let _ = writeln!(out, "init {};", inits.join(", "));
    if let Some(p) = &prog.property {
        let avoid = if p.mode == PropertyMode::Avoid { " avoid" } else { "" };
        let _ = writeln!(out, "property kappa = {}{avoid};", p.kappa);
    }
    let guard = render_conj(&c.loop_guard);
    let _ = writeln!(out, "while ({guard}) {{");

    // recover the nested chain: branch k must start with the negations of the
    // positive tests of branches 0..k
    let mut prefix: Vec<(Polynomial, bool)> = Vec::new();
    let mut chain: Vec<(Vec<(Polynomial, bool)>, &Branch)> = Vec::new();
    for b in &c.branches {
        let all: Vec<(Polynomial, bool)> =
            b.guard.iter_all().map(|(p, s)| (p.clone(), s)).collect();
        // order within a guard is weak-then-strict, which loses interleaving;
        // match the prefix as a multiset instead
        let mut rest = all.clone();
        for pre in &prefix {
            let pos = rest.iter().position(|(p, s)| p == &pre.0 && *s == pre.1)?;
            rest.remove(pos);
        }
        chain.push((rest.clone(), b));
        for (p, s) in &rest {
            prefix.push((p.neg(), !*s));
        }
    }
    let mut depth = 0usize;
    let n = chain.len();
    for (k, (tests, b)) in chain.iter().enumerate() {
        let ind = "    ".repeat(depth + 1);
        let assigns = render_update(c, b);
        let last = k + 1 == n;
        if tests.is_empty() {
            if !last {
                return None; // an unguarded branch would shadow those after it
            }
            if k == 0 {
                let _ = writeln!(out, "{ind}{assigns}");
            } else {
                let _ = writeln!(out, "{ind}else {{");
                let _ = writeln!(out, "{ind}    {assigns}");
                let _ = writeln!(out, "{ind}}}");
            }
            break;
        }
        if tests.len() != 1 || last {
            // a chain step regenerates exactly one negation per test, and the
            // final branch must be the complement; anything else cannot be
            // reprinted as an if/else chain
            return None;
        }
        let cond = render_tests(tests);
        if k == 0 {
            let _ = writeln!(out, "{ind}if ({cond}) {{");
            let _ = writeln!(out, "{ind}    {assigns}");
            let _ = writeln!(out, "{ind}}}");
        } else {
            let _ = writeln!(out, "{ind}else {{ if ({cond}) {{");
            let _ = writeln!(out, "{ind}    {assigns}");
            let _ = writeln!(out, "{ind}}}");
            depth += 1;
        }
    }
    // close any else nesting opened above
    for k in (1..depth + 1).rev() {
        let _ = writeln!(out, "{}}}", "    ".repeat(k));
    }
    let _ = writeln!(out, "}}");
    Some(out)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn render_conj(cs: &ConstraintSet) -> String {
    if cs.is_whole_space() {
        return "-1 <= 0".to_string();
    }
    let parts: Vec<String> = cs
        .iter_all()
        .map(|(p, strict)| format!("{} {} 0", p, if strict { "<" } else { "<=" }))
        .collect();
    parts.join(" and ")
}

fn render_tests(tests: &[(Polynomial, bool)]) -> String {
    tests
        .iter()
        .map(|(p, strict)| format!("{} {} 0", p, if *strict { "<" } else { "<=" }))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn render_update(c: &Cpds, b: &Branch) -> String {
    let targets = c.var_names.join(", ");
    let values: Vec<String> = b.update.iter().map(|p| p.to_string()).collect();
    format!("{targets} = {};", values.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX_RUNNING: &str = r#"
# two-branch cubic system over the unit-circle split
vars x1, x2;
init x1 in [0.9, 1.1], x2 in [0, 0.2];
property kappa = x1^2 + x2^2;
while (-1 <= 0) {
    if (x1^2 + x2^2 <= 1) {
        oldx1 = x1;
        oldx2 = x2;
        x1 = oldx1^2 + oldx2^3;
        x2 = oldx1^3 + oldx2^2;
    } else {
        oldx1 = x1;
        oldx2 = x2;
        x1 = 0.5 * oldx1^3 + 0.4 * oldx2^2;
        x2 = -0.6 * oldx1^2 + 0.3 * oldx2^2;
    }
}
"#;

    #[test]
    fn parses_two_branch_program() {
        let prog = parse_program(EX_RUNNING).unwrap();
        let c = &prog.cpds;
        assert_eq!(c.dimension, 2);
        assert_eq!(c.branches.len(), 2);
        assert_eq!(
            c.init,
            InitRegion::Box(vec![Interval { lo: 0.9, hi: 1.1 }, Interval { lo: 0.0, hi: 0.2 }])
        );
        // loop guard: -1 <= 0 (trivially true everywhere)
        assert_eq!(c.loop_guard.weak.len(), 1);
        assert_eq!(c.loop_guard.weak[0], Polynomial::constant(2, -1.0));
        // first branch: x1^2 + x2^2 - 1 <= 0, cubic update via temporaries
        let b1 = &c.branches[0];
        assert_eq!(b1.guard.weak[0], Polynomial::parse("x1^2 + x2^2 - 1", 2).unwrap());
        assert_eq!(b1.update[0], Polynomial::parse("x1^2 + x2^3", 2).unwrap());
        assert_eq!(b1.update[1], Polynomial::parse("x1^3 + x2^2", 2).unwrap());
        // second branch: the negation -(x1^2 + x2^2 - 1) < 0
        let b2 = &c.branches[1];
        assert_eq!(b2.guard.strict[0], Polynomial::parse("-x1^2 - x2^2 + 1", 2).unwrap());
        assert_eq!(b2.update[0], Polynomial::parse("0.5*x1^3 + 0.4*x2^2", 2).unwrap());
        assert_eq!(b2.update[1], Polynomial::parse("-0.6*x1^2 + 0.3*x2^2", 2).unwrap());
        let prop = prog.property.unwrap();
        assert_eq!(prop.kappa, Polynomial::parse("x1^2 + x2^2", 2).unwrap());
        assert_eq!(prop.mode, PropertyMode::Bounded);
    }

    #[test]
    fn identity_program_single_branch() {
        let src = "vars x1, x2;\ninit x1 in [0,0], x2 in [0,0];\nwhile (-1 <= 0) { x1 = x1; }";
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.cpds.branches.len(), 1);
        let b = &prog.cpds.branches[0];
        assert!(b.guard.is_whole_space());
        assert_eq!(b.update[0], Polynomial::var(2, 0));
        assert_eq!(b.update[1], Polynomial::var(2, 1), "unassigned variables stay identity");
        assert!(prog.property.is_none());
    }

    #[test]
    fn reports_error_locations() {
        let e = parse_program("vars x1;\ninit x1 in [0, 1];\nwhile (-1 <= 0) { x1 = sin(x1); }")
            .unwrap_err();
        match e {
            FrontendError::NonPolynomial { line, what, .. } => {
                assert_eq!(line, 3);
                assert!(what.contains("sin"), "{what}");
            }
            other => panic!("expected non-polynomial error, got {other}"),
        }
        let e = parse_program("vars x1;\ninit x1 in [0, 1];\nwhile (-1 <= 0) { x1 = x2; }")
            .unwrap_err();
        assert!(matches!(e, FrontendError::UnknownVariable { ref name, .. } if name == "x2"), "{e}");
        let e = parse_program("").unwrap_err();
        assert!(matches!(e, FrontendError::NoLoop));
        let e = parse_program("vars x1;\ninit x1 in [0, 1];\nwhile (-1 <= 0) { x1 = x1/x1; }")
            .unwrap_err();
        assert!(matches!(e, FrontendError::NonPolynomial { .. }));
    }

    #[test]
    fn rejects_sequential_state_reads() {
        let src = "vars x1, x2;\ninit x1 in [0,1], x2 in [0,1];\nwhile (-1 <= 0) { x1 = x1 + 1; x2 = x1; }";
        let e = parse_program(src).unwrap_err();
        assert!(matches!(e, FrontendError::NotParallel { ref name, .. } if name == "x1"), "{e}");
        // the parallel form of the same intent is fine
        let src = "vars x1, x2;\ninit x1 in [0,1], x2 in [0,1];\nwhile (-1 <= 0) { x1, x2 = x1 + 1, x1; }";
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.cpds.branches[0].update[1], Polynomial::var(2, 0));
    }

    #[test]
    fn if_without_else_gets_complement_branch() {
        let src = "vars x1;\ninit x1 in [0,1];\nwhile (-1 <= 0) { if (x1 <= 0) { x1 = 0; } }";
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.cpds.branches.len(), 2);
        let b2 = &prog.cpds.branches[1];
        assert_eq!(b2.guard.strict[0], Polynomial::parse("-x1", 1).unwrap());
        assert_eq!(b2.update[0], Polynomial::var(1, 0), "implicit else is the identity");
    }

    #[test]
    fn multi_test_else_splits_into_disjoint_branches() {
        let src = "vars x1, x2;\ninit x1 in [0,1], x2 in [0,1];\nwhile (-1 <= 0) {\n  if (x1 <= 0 and x2 < 0) { x1 = 0; } else { x1 = 1; }\n}";
        let prog = parse_program(src).unwrap();
        // then-branch + one branch per negated test
        assert_eq!(prog.cpds.branches.len(), 3);
        let b2 = &prog.cpds.branches[1]; // ¬(x1 <= 0)
        assert_eq!(b2.guard.strict[0], Polynomial::parse("-x1", 2).unwrap());
        let b3 = &prog.cpds.branches[2]; // x1 <= 0 ∧ ¬(x2 < 0)
        assert_eq!(b3.guard.weak.len(), 2);
        // disjointness on a sample of points
        for p in [[-0.5, -0.5], [0.5, 0.2], [-0.1, 0.3]] {
            let hits = prog.cpds.branches.iter().filter(|b| b.guard.contains(&p)).count();
            assert_eq!(hits, 1, "point {p:?} must lie in exactly one branch");
        }
    }

    #[test]
    fn structured_round_trip_is_byte_identical() {
        let prog = parse_program(EX_RUNNING).unwrap();
        let json = write_structured(&prog);
        let back = parse_structured(&json).unwrap();
        assert_eq!(back, prog);
        assert_eq!(write_structured(&back), json);
    }

    #[test]
    fn ploop_round_trip_on_chain_programs() {
        for src in [
            EX_RUNNING,
            "vars x1, x2;\ninit x1 in [0,0], x2 in [0,0];\nwhile (-1 <= 0) { x1 = x1; }",
        ] {
            let prog = parse_program(src).unwrap();
            let pp = write_ploop(&prog).expect("chain-form program prints");
            let back = parse_program(&pp).unwrap_or_else(|e| panic!("reparse failed: {e}\n{pp}"));
            assert_eq!(back, prog, "round trip changed the system:\n{pp}");
        }
    }

    #[test]
    fn partition_validator_flags_gaps_and_overlaps() {
        let bbox = vec![Interval { lo: -2.0, hi: 2.0 }, Interval { lo: -2.0, hi: 2.0 }];
        let prog = parse_program(EX_RUNNING).unwrap();
        let rep = validate_partition(&prog.cpds, 10_000, &bbox, 42);
        assert!(rep.is_clean(), "complement split must partition the plane: {rep:?}");

        // everything doubly covered
        let mut c2 = prog.cpds.clone();
        c2.branches = vec![
            Branch { guard: ConstraintSet::whole_space(), update: c2.branches[0].update.clone() },
            Branch { guard: ConstraintSet::whole_space(), update: c2.branches[1].update.clone() },
        ];
        let rep = validate_partition(&c2, 100, &bbox, 42);
        assert_eq!(rep.multiply_covered_count, 100);

        // gap: single branch covering only x1 <= 0
        let mut c3 = prog.cpds.clone();
        c3.branches = vec![Branch {
            guard: ConstraintSet {
                strict: vec![],
                weak: vec![Polynomial::var(2, 0)],
            },
            update: c3.branches[0].update.clone(),
        }];
        let rep = validate_partition(&c3, 1000, &bbox, 42);
        assert!(rep.uncovered_count > 0);
    }

    #[test]
    fn four_dimensional_quadratic_updates_parse() {
        let src = r#"
vars x1, x2, x3, x4;
init x1 in [0.9, 1.1], x2 in [0, 0.2], x3 in [0, 0.2], x4 in [0, 0.2];
property kappa = x1^2 + x2^2 + x3^2 + x4^2;
while (-1 <= 0) {
  if (x1^2 + x2^2 + x3^2 + x4^2 <= 1) {
    x1, x2, x3, x4 = 0.25 * (0.8*x1^2 + 1.4*x2 - 0.5*x3^2),
                     0.25 * (1.3*x1 + 0.5*x2^2 - 0.8*x4^2),
                     0.25 * (0.8*x3^2 + 1.4*x4),
                     0.25 * (1.3*x3 + 0.5*x4^2);
  } else {
    x1, x2, x3, x4 = 0.25 * (0.5*x1 + 0.4*x2^2),
                     0.25 * (-0.6*x1^2 + 0.3*x2^2),
                     0.25 * (0.5*x3 + 0.4*x4^2),
                     0.25 * (-0.6*x3 + 0.3*x4^2);
  }
}
"#;
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.cpds.dimension, 4);
        assert_eq!(prog.cpds.branches.len(), 2);
        for b in &prog.cpds.branches {
            assert_eq!(b.update_degree(), 2);
        }
    }
}
