//! Sparse multivariate polynomial arithmetic.
//!
//! A polynomial over `x1..xd` is stored as a map from exponent vectors to
//! `f64` coefficients.  The monomial order is graded lexicographic: lower
//! total degree first, and within a degree block the variable with the
//! smallest index dominates (so the ascending order for `d = 2` is
//! `1, x1, x2, x1^2, x1*x2, x2^2, ...`).  This single order drives basis
//! enumeration, coefficient matching, display, and serialization, which keeps
//! every downstream consumer deterministic.
//!
//! Coefficients are plain doubles.  Canonical form means: no stored term has
//! coefficient exactly `0.0`.  Numerical tolerance questions are deliberately
//! left to callers (the certificate checker applies explicit tolerances);
//! arithmetic here only prunes exact zeros.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent vector of one monomial; `exponents[i]` is the power of `x_{i+1}`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial { exponents }
    }

    /// The constant monomial `1` in dimension `d`.
    pub fn one(d: usize) -> Self {
        Monomial { exponents: vec![0; d] }
    }

    /// The monomial `x_{i+1}` (0-based variable index) in dimension `d`.
    pub fn var(d: usize, i: usize) -> Self {
        assert!(i < d, "variable index {i} out of range for dimension {d}");
        let mut e = vec![0; d];
        e[i] = 1;
        Monomial { exponents: e }
    }

    pub fn dimension(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Product of two monomials (exponent-wise sum).
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.dimension(), other.dimension());
        Monomial {
            exponents: self
                .exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(self.dimension(), point.len());
        self.exponents
            .iter()
            .zip(point)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            // within a degree block, x1-heavy monomials come first
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    /// `x1^2*x2` style; the constant monomial prints as `1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.degree() == 0 {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials in `d` variables of total degree at most `max_degree`, in
/// ascending graded-lex order.  Length is `C(d + max_degree, d)`.
pub fn monomial_basis(d: usize, max_degree: u32) -> Vec<Monomial> {
    assert!(d >= 1, "dimension must be positive");
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    gen_exponents(&mut out, &mut current, 0, max_degree);
    out.sort();
    out
}

fn gen_exponents(out: &mut Vec<Monomial>, current: &mut Vec<u32>, var: usize, budget: u32) {
    if var == current.len() {
        out.push(Monomial::new(current.clone()));
        return;
    }
    for e in 0..=budget {
        current[var] = e;
        gen_exponents(out, current, var + 1, budget - e);
    }
    current[var] = 0;
}

/// Number of monomials in `d` variables of degree ≤ `n`, i.e. `C(d + n, d)`.
pub fn basis_size(d: usize, n: u32) -> usize {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for k in 1..=d as u128 {
        num *= n as u128 + k;
        den *= k;
    }
    (num / den) as usize
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("empty polynomial expression")]
    Empty,
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("variable {0} exceeds dimension {1}")]
    VarOutOfRange(String, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected exponent after '^'")]
    MissingExponent,
}

/// Sparse multivariate polynomial in a fixed ambient dimension.
///
/// Immutable by convention: every operation returns a fresh value.  The zero
/// polynomial stores no terms and reports degree 0, which is the right
/// convention for degree-budget bookkeeping.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(d: usize) -> Self {
        Polynomial { dim: d, terms: BTreeMap::new() }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(d);
        if c != 0.0 {
            p.terms.insert(Monomial::one(d), c);
        }
        p
    }

    pub fn one(d: usize) -> Self {
        Polynomial::constant(d, 1.0)
    }

    /// The variable `x_{i+1}` (0-based index `i`).
    pub fn var(d: usize, i: usize) -> Self {
        let mut p = Polynomial::zero(d);
        p.terms.insert(Monomial::var(d, i), 1.0);
        p
    }

    pub fn monomial(d: usize, m: Monomial, c: f64) -> Self {
        assert_eq!(m.dimension(), d, "monomial dimension mismatch");
        let mut p = Polynomial::zero(d);
        if c != 0.0 {
            p.terms.insert(m, c);
        }
        p
    }

    pub fn from_terms(d: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Polynomial::zero(d);
        for (m, c) in terms {
            assert_eq!(m.dimension(), d, "monomial dimension mismatch");
            p.add_term(m, c);
        }
        p
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Max total degree over stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let s = *e.get() + c;
                if s == 0.0 {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch in add");
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.dim);
        }
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch in mul");
        let mut out = Polynomial::zero(self.dim);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    /// Multiply by a single monomial times a scalar (cheap shift).
    pub fn mul_monomial(&self, m: &Monomial, c: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (ma, &ca) in &self.terms {
            out.add_term(ma.mul(m), ca * c);
        }
        out
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::one(self.dim);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Substitute `subs[l]` for variable `x_{l+1}`: returns `self ∘ subs`.
    pub fn compose(&self, subs: &[Polynomial]) -> Polynomial {
        assert_eq!(self.dim, subs.len(), "substitution arity mismatch in compose");
        let sub_dim = subs.first().map(|p| p.dim).unwrap_or(0);
        for s in subs {
            assert_eq!(s.dim, sub_dim, "substitution dimension mismatch in compose");
        }
        // cache powers of each substituted component up to its needed exponent
        let mut max_exp = vec![0u32; self.dim];
        for m in self.terms.keys() {
            for (l, &e) in m.exponents.iter().enumerate() {
                max_exp[l] = max_exp[l].max(e);
            }
        }
        let powers: Vec<Vec<Polynomial>> = subs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let mut ps = Vec::with_capacity(max_exp[l] as usize + 1);
                ps.push(Polynomial::one(sub_dim));
                for e in 1..=max_exp[l] {
                    let prev = &ps[e as usize - 1];
                    ps.push(prev.mul(s));
                }
                ps
            })
            .collect();
        let mut out = Polynomial::zero(sub_dim);
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(sub_dim, c);
            for (l, &e) in m.exponents.iter().enumerate() {
                if e > 0 {
                    term = term.mul(&powers[l][e as usize]);
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        assert_eq!(self.dim, point.len(), "point dimension mismatch in eval");
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    /// Parse the canonical textual syntax: terms like `-0.6*x1^2*x2 + 0.3`,
    /// variables `x1..xd`, `^` for powers, `*` optional after a coefficient.
    pub fn parse(src: &str, d: usize) -> Result<Polynomial, ParseError> {
        Parser::new(src, d).parse()
    }
}

impl fmt::Display for Polynomial {
    /// Canonical form: terms in descending graded-lex order, `+`/`-` joins
    /// with the sign absorbed, unit coefficients omitted on non-constant
    /// terms.  Coefficients print in shortest round-trip decimal, switching
    /// to scientific notation for extreme magnitudes, so `parse ∘ to_string`
    /// is the identity bit-for-bit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, &c)) in self.terms.iter().rev().enumerate() {
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let a = c.abs();
            let is_const = m.degree() == 0;
            if is_const || a != 1.0 {
                write!(f, "{}", fmt_coeff(a))?;
            }
            let mut first_var = is_const || a != 1.0;
            for (i, &e) in m.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if first_var {
                    write!(f, "*")?;
                }
                first_var = true;
                write!(f, "x{}", i + 1)?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

fn fmt_coeff(a: f64) -> String {
    if a != 0.0 && (a >= 1e16 || a < 1e-4) {
        format!("{a:e}")
    } else {
        format!("{a}")
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim: usize) -> Self {
        Parser { src: src.as_bytes(), pos: 0, dim }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial, ParseError> {
        let mut out = Polynomial::zero(self.dim);
        self.skip_ws();
        if self.peek().is_none() {
            return Err(ParseError::Empty);
        }
        let mut first = true;
        loop {
            let mut sign = 1.0;
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                }
                Some(b'-') => {
                    sign = -1.0;
                    self.pos += 1;
                }
                Some(_) if first => {}
                None if !first => break,
                Some(c) => return Err(ParseError::UnexpectedChar(c as char, self.pos)),
                None => return Err(ParseError::UnexpectedEnd),
            }
            first = false;
            let (m, c) = self.parse_term()?;
            out.add_term(m, sign * c);
            self.skip_ws();
            if self.peek().is_none() {
                break;
            }
        }
        Ok(out)
    }

    fn parse_term(&mut self) -> Result<(Monomial, f64), ParseError> {
        self.skip_ws();
        let mut coeff = 1.0;
        let mut exps = vec![0u32; self.dim];
        let mut saw_factor = false;
        if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            coeff = self.parse_number()?;
            saw_factor = true;
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.pos += 1;
            }
            self.skip_ws();
        }
        loop {
            match self.peek() {
                Some(b'x') => {
                    let (idx, e) = self.parse_varpow()?;
                    exps[idx] += e;
                    saw_factor = true;
                    self.skip_ws();
                    if self.peek() == Some(b'*') {
                        self.pos += 1;
                        self.skip_ws();
                        continue;
                    }
                    // implicit product only continues on an explicit '*'
                    break;
                }
                _ => break,
            }
        }
        if !saw_factor {
            return match self.peek() {
                Some(c) => Err(ParseError::UnexpectedChar(c as char, self.pos)),
                None => Err(ParseError::UnexpectedEnd),
            };
        }
        Ok((Monomial::new(exps), coeff))
    }

    fn parse_number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|_| ParseError::BadNumber(text.to_string()))
    }

    fn parse_varpow(&mut self) -> Result<(usize, u32), ParseError> {
        debug_assert_eq!(self.peek(), Some(b'x'));
        self.pos += 1;
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let idx: usize = text
            .parse()
            .map_err(|_| ParseError::VarOutOfRange(format!("x{text}"), self.dim))?;
        if idx == 0 || idx > self.dim {
            return Err(ParseError::VarOutOfRange(format!("x{text}"), self.dim));
        }
        let mut e = 1u32;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(ParseError::MissingExponent);
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            e = text.parse().map_err(|_| ParseError::MissingExponent)?;
        }
        Ok((idx - 1, e))
    }
}
