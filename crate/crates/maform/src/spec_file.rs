//! Text inputs: domain specs (`key = value` lines) and synthetic tensor specs
//! (`k a b = expression` lines with complex expressions in `v1, v2, …`).
//!
//! Both formats allow blank lines and `#` comments. Errors carry 1-based
//! line and column numbers.

use std::fmt;
use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::deformation::{BasePoint, DeformationError, ModeSet, TensorField};
use crate::domain_model::{ExhaustionField, MinkowskiField};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

fn err<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, col, msg: msg.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Conj,
    Re,
    Im,
    Abs,
    Exp,
    Sqrt,
}

/// Complex expression in the chart coordinates `v1, v2, …`.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(C64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, v: &[C64]) -> C64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(k) => v[*k],
            Expr::Neg(a) => -a.eval(v),
            Expr::Add(a, b) => a.eval(v) + b.eval(v),
            Expr::Sub(a, b) => a.eval(v) - b.eval(v),
            Expr::Mul(a, b) => a.eval(v) * b.eval(v),
            Expr::Div(a, b) => a.eval(v) / b.eval(v),
            Expr::Pow(a, k) => a.eval(v).powi(*k),
            Expr::Call(f, a) => {
                let x = a.eval(v);
                match f {
                    Func::Conj => x.conj(),
                    Func::Re => C64::new(x.re, 0.0),
                    Func::Im => C64::new(x.im, 0.0),
                    Func::Abs => C64::new(x.norm(), 0.0),
                    Func::Exp => x.exp(),
                    Func::Sqrt => x.sqrt(),
                }
            }
        }
    }

    /// Largest variable index used, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(k) => k + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.arity().max(b.arity()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl Lexer {
    fn new(src: &str, line: usize, col0: usize) -> Result<Self, ParseError> {
        let chars: Vec<char> = src.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = col0 + i;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                match text.parse() {
                    Ok(x) => toks.push((Tok::Num(x), col)),
                    Err(_) => return err(line, col, format!("bad number `{text}`")),
                }
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            } else if "+-*/^()".contains(c) {
                toks.push((Tok::Op(c), col));
                i += 1;
            } else {
                return err(line, col, format!("unexpected character `{c}`"));
            }
        }
        Ok(Lexer { toks, pos: 0, line, end_col: col0 + chars.len() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.end_col)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            let col = self.col();
            let neg = self.eat('-');
            match self.peek() {
                Some(Tok::Num(x)) if x.fract() == 0.0 && x.abs() < 64.0 => {
                    let k = *x as i32;
                    self.pos += 1;
                    return Ok(Expr::Pow(Box::new(base), if neg { -k } else { k }));
                }
                _ => return err(self.line, col, "exponent must be an integer literal"),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        let line = self.line;
        match self.toks.get(self.pos).map(|t| t.0.clone()) {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Expr::Num(C64::new(x, 0.0)))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return err(line, self.col(), "expected `)`");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let func = match name.as_str() {
                    "i" => return Ok(Expr::Num(C64::new(0.0, 1.0))),
                    "pi" => return Ok(Expr::Num(C64::new(std::f64::consts::PI, 0.0))),
                    "conj" => Func::Conj,
                    "re" => Func::Re,
                    "im" => Func::Im,
                    "abs" => Func::Abs,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    other => {
                        if let Some(k) = other.strip_prefix('v').and_then(|s| s.parse::<usize>().ok()).filter(|&k| k >= 1) {
                            return Ok(Expr::Var(k - 1));
                        }
                        return err(line, col, format!("unknown name `{other}`"));
                    }
                };
                if !self.eat('(') {
                    return err(line, self.col(), format!("expected `(` after `{name}`"));
                }
                let e = self.expr()?;
                if !self.eat(')') {
                    return err(line, self.col(), "expected `)`");
                }
                Ok(Expr::Call(func, Box::new(e)))
            }
            Some(Tok::Op(c)) => err(line, col, format!("unexpected `{c}`")),
            None => err(line, col, "unexpected end of expression"),
        }
    }
}

/// Parses one expression; `line` and `col0` locate it for diagnostics.
pub fn parse_expr(src: &str, line: usize, col0: usize) -> Result<Expr, ParseError> {
    let mut lx = Lexer::new(src, line, col0)?;
    let e = lx.expr()?;
    if lx.pos < lx.toks.len() {
        return err(line, lx.col(), "trailing input");
    }
    Ok(e)
}

/// Non-comment lines as `(line number, text)`.
fn content_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines().enumerate().filter_map(|(i, l)| {
        let body = l.split('#').next().unwrap_or("");
        (!body.trim().is_empty()).then_some((i + 1, body))
    })
}

/// Splits `key = value`, returning key, value and the value's column.
fn key_value(line: usize, text: &str) -> Result<(&str, &str, usize, usize), ParseError> {
    let Some(eq) = text.find('=') else {
        let col = text.len() - text.trim_start().len() + 1;
        return err(line, col, "expected `key = value`");
    };
    let key = text[..eq].trim();
    let key_col = text.len() - text.trim_start().len() + 1;
    let rest = &text[eq + 1..];
    let value = rest.trim();
    let val_col = eq + 2 + (rest.len() - rest.trim_start().len());
    if key.is_empty() {
        return err(line, key_col, "missing key");
    }
    if value.is_empty() {
        return err(line, val_col, format!("missing value for `{key}`"));
    }
    Ok((key, value, key_col, val_col))
}

/// One term `expr(v)·ζᵏ` in component `φᵃ_b` (indices 1-based in files).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub k: usize,
    pub a: usize,
    pub b: usize,
    pub coef: Expr,
}

/// Band-limited tensor `φᵃ_b(v, ζ) = Σ coefᵏ_{ab}(v) ζᵏ`, the same
/// expressions being used in every chart.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTensor {
    pub n: usize,
    pub entries: Vec<TensorEntry>,
}

impl SyntheticTensor {
    pub fn k_max(&self) -> usize {
        self.entries.iter().map(|e| e.k).max().unwrap_or(0)
    }

    /// Exact mode coefficients at the given base points.
    pub fn mode_set(&self, bases: Vec<BasePoint>, k_max: usize) -> ModeSet {
        let d = self.n - 1;
        let modes = (0..=k_max)
            .map(|k| {
                bases
                    .iter()
                    .map(|base| {
                        let mut m = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
                        for e in self.entries.iter().filter(|e| e.k == k) {
                            m[(e.a, e.b)] += e.coef.eval(&base.v);
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        ModeSet::from_modes(self.n, bases, modes)
    }
}

impl TensorField for SyntheticTensor {
    fn n(&self) -> usize {
        self.n
    }
    fn phi(&self, _chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        let d = self.n - 1;
        let mut m = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
        for e in &self.entries {
            m[(e.a, e.b)] += e.coef.eval(v) * zeta.powi(e.k as i32);
        }
        Ok(m)
    }
}

/// Parses a tensor spec: a header `n = <int>` followed by entries
/// `k a b = expression`.
pub fn parse_tensor_spec(src: &str) -> Result<SyntheticTensor, ParseError> {
    let mut n = None;
    let mut entries = Vec::new();
    let mut last_line = 0;
    for (ln, text) in content_lines(src) {
        last_line = ln;
        let (key, value, key_col, val_col) = key_value(ln, text)?;
        if key == "n" {
            if n.is_some() {
                return err(ln, key_col, "duplicate `n`");
            }
            match value.parse::<usize>() {
                Ok(k) if k >= 2 => n = Some(k),
                _ => return err(ln, val_col, "`n` must be an integer ≥ 2"),
            }
            continue;
        }
        let Some(n) = n else {
            return err(ln, key_col, "`n = …` must come first");
        };
        let mut idx = [0usize; 3];
        let mut col = key_col;
        let parts: Vec<&str> = key.split_whitespace().collect();
        if parts.len() != 3 {
            return err(ln, key_col, "expected `k a b = expression`");
        }
        for (slot, part) in idx.iter_mut().zip(&parts) {
            let offset = text[col - 1..].find(part).unwrap_or(0);
            col += offset;
            *slot = match part.parse() {
                Ok(x) => x,
                Err(_) => return err(ln, col, format!("expected an integer, found `{part}`")),
            };
            col += part.len();
        }
        let [k, a, b] = idx;
        for (x, name) in [(a, "a"), (b, "b")] {
            if x < 1 || x > n - 1 {
                return err(ln, key_col, format!("index {name} = {x} outside 1..={}", n - 1));
            }
        }
        let coef = parse_expr(value, ln, val_col)?;
        if coef.arity() > n - 1 {
            return err(ln, val_col, format!("expression uses v{} but n = {n}", coef.arity()));
        }
        entries.push(TensorEntry { k, a: a - 1, b: b - 1, coef });
    }
    match n {
        Some(n) => Ok(SyntheticTensor { n, entries }),
        None => err(last_line.max(1), 1, "missing `n = …`"),
    }
}

/// Minkowski function choices of a domain spec.
#[derive(Clone, Debug, PartialEq)]
pub enum MuSpec {
    Ball,
    Ellipsoid(Vec<f64>),
    PerturbedBall { eps: f64, q: [f64; 3] },
    /// Grid dump of `m` on both charts, relative to the spec file.
    Grid(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauSpec {
    Minkowski,
    NonMongeAmpere,
}

/// Parsed domain spec with resolution and tolerance settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub n: usize,
    pub mu: MuSpec,
    pub tau: TauSpec,
    pub n_v: usize,
    pub n_r: usize,
    pub n_theta: usize,
    pub rk4_steps: usize,
    pub k_max: usize,
    /// Base points per real axis of the tensor sampling grid.
    pub n_b: usize,
    pub identity_tol: f64,
    pub moser_tol: f64,
    pub mode_tol: f64,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            n: 2,
            mu: MuSpec::Ball,
            tau: TauSpec::Minkowski,
            n_v: 64,
            n_r: 8,
            n_theta: 16,
            rk4_steps: 200,
            k_max: 4,
            n_b: 5,
            identity_tol: 1e-8,
            moser_tol: 1e-6,
            mode_tol: 1e-5,
            seed: 1,
        }
    }
}

impl DomainSpec {
    /// The Minkowski function, reading grid input through `load`.
    pub fn minkowski(&self, load: impl FnOnce(&PathBuf) -> Result<MinkowskiField, String>) -> Result<MinkowskiField, String> {
        match &self.mu {
            MuSpec::Ball => Ok(MinkowskiField::ball(self.n)),
            MuSpec::Ellipsoid(a) => Ok(MinkowskiField::ellipsoid(a.clone())),
            MuSpec::PerturbedBall { eps, q } => Ok(MinkowskiField::perturbed_ball(self.n, *eps, *q)),
            MuSpec::Grid(p) => load(p),
        }
    }

    pub fn exhaustion(&self, mu: &MinkowskiField) -> ExhaustionField {
        match self.tau {
            TauSpec::Minkowski => ExhaustionField::circular(mu.clone()),
            TauSpec::NonMongeAmpere => ExhaustionField::non_monge_ampere(),
        }
    }
}

impl fmt::Display for DomainSpec {
    /// Canonical `key = value` echo, itself a valid spec.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        match &self.mu {
            MuSpec::Ball => writeln!(f, "mu.kind = ball")?,
            MuSpec::Ellipsoid(a) => {
                let a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                writeln!(f, "mu.kind = ellipsoid\nmu.a = {}", a.join(" "))?
            }
            MuSpec::PerturbedBall { eps, q } => {
                writeln!(f, "mu.kind = perturbed_ball\nmu.eps = {eps}\nmu.q = {} {} {}", q[0], q[1], q[2])?
            }
            MuSpec::Grid(p) => writeln!(f, "mu.kind = grid\nmu.file = {}", p.display())?,
        }
        let tau = match self.tau {
            TauSpec::Minkowski => "minkowski",
            TauSpec::NonMongeAmpere => "non_ma",
        };
        writeln!(f, "tau.kind = {tau}")?;
        writeln!(f, "N_v = {}\nN_r = {}\nN_theta = {}", self.n_v, self.n_r, self.n_theta)?;
        writeln!(f, "rk4_steps = {}\nk_max = {}\nN_b = {}", self.rk4_steps, self.k_max, self.n_b)?;
        writeln!(f, "identity_tol = {:e}\nmoser_tol = {:e}\nmode_tol = {:e}", self.identity_tol, self.moser_tol, self.mode_tol)?;
        write!(f, "seed = {}", self.seed)
    }
}

pub fn parse_domain_spec(src: &str) -> Result<DomainSpec, ParseError> {
    let mut spec = DomainSpec::default();
    let mut kind: Option<(String, usize, usize)> = None;
    let (mut a, mut eps, mut q, mut file) = (None, None, None, None);
    let mut seen = std::collections::HashSet::new();
    for (ln, text) in content_lines(src) {
        let (key, value, key_col, col) = key_value(ln, text)?;
        if !seen.insert(key.to_string()) {
            return err(ln, key_col, format!("duplicate key `{key}`"));
        }
        let int = |lo: usize| -> Result<usize, ParseError> {
            match value.parse::<usize>() {
                Ok(x) if x >= lo => Ok(x),
                _ => err(ln, col, format!("`{key}` must be an integer ≥ {lo}")),
            }
        };
        let tol = || -> Result<f64, ParseError> {
            match value.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => err(ln, col, format!("`{key}` must be a positive number")),
            }
        };
        let floats = || -> Result<Vec<f64>, ParseError> {
            let mut out = Vec::new();
            let mut offset = 0;
            for tok in value.split_whitespace() {
                let at = value[offset..].find(tok).unwrap_or(0) + offset;
                offset = at + tok.len();
                match tok.parse::<f64>() {
                    Ok(x) if x.is_finite() => out.push(x),
                    _ => return err(ln, col + at, format!("expected a number, found `{tok}`")),
                }
            }
            Ok(out)
        };
        match key {
            "n" => spec.n = int(2)?,
            "mu.kind" => kind = Some((value.to_string(), ln, col)),
            "mu.a" => a = Some((floats()?, ln, col)),
            "mu.eps" => eps = Some(floats()?.first().copied().unwrap_or(0.0)),
            "mu.q" => q = Some((floats()?, ln, col)),
            "mu.file" => file = Some(PathBuf::from(value)),
            "tau.kind" => {
                spec.tau = match value {
                    "minkowski" => TauSpec::Minkowski,
                    "non_ma" => TauSpec::NonMongeAmpere,
                    _ => return err(ln, col, format!("unknown tau.kind `{value}` (minkowski, non_ma)")),
                }
            }
            "N_v" => spec.n_v = int(3)?,
            "N_r" => spec.n_r = int(1)?,
            "N_theta" => {
                spec.n_theta = int(2)?;
                if !spec.n_theta.is_power_of_two() {
                    return err(ln, col, "`N_theta` must be a power of two");
                }
            }
            "rk4_steps" => spec.rk4_steps = int(1)?,
            "k_max" => spec.k_max = int(0)?,
            "N_b" => spec.n_b = int(2)?,
            "identity_tol" => spec.identity_tol = tol()?,
            "moser_tol" => spec.moser_tol = tol()?,
            "mode_tol" => spec.mode_tol = tol()?,
            "seed" => {
                spec.seed = value.parse().or_else(|_| err(ln, col, "`seed` must be a non-negative integer"))?
            }
            _ => return err(ln, key_col, format!("unknown key `{key}`")),
        }
    }
    if let Some((kind, ln, col)) = kind {
        spec.mu = match kind.as_str() {
            "ball" => MuSpec::Ball,
            "ellipsoid" => {
                let Some((a, aln, acol)) = a else {
                    return err(ln, col, "ellipsoid needs `mu.a`");
                };
                if a.len() != spec.n || a.iter().any(|&x| x <= 0.0) {
                    return err(aln, acol, format!("`mu.a` needs {} positive coefficients", spec.n));
                }
                MuSpec::Ellipsoid(a)
            }
            "perturbed_ball" => {
                let q = match q {
                    Some((q, _, _)) if q.len() == 3 => [q[0], q[1], q[2]],
                    Some((_, qln, qcol)) => return err(qln, qcol, "`mu.q` needs 3 numbers"),
                    None => [1.0, 0.5, 0.0],
                };
                MuSpec::PerturbedBall { eps: eps.unwrap_or(0.05), q }
            }
            "grid" => match file {
                Some(p) => MuSpec::Grid(p),
                None => return err(ln, col, "grid needs `mu.file`"),
            },
            other => return err(ln, col, format!("unknown mu.kind `{other}` (ball, ellipsoid, perturbed_ball, grid)")),
        };
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions_evaluate() {
        let v = [C64::new(0.5, -0.25), C64::new(0.1, 0.2)];
        let e = parse_expr("2*conj(v1) - i*v2^2 + exp(0)/4", 1, 1).unwrap();
        let expect = 2.0 * v[0].conj() - C64::i() * v[1] * v[1] + 0.25;
        assert!((e.eval(&v) - expect).norm() < 1e-15);
        assert_eq!(parse_expr("-v1^-1", 1, 1).unwrap().eval(&v), -v[0].inv());
        assert_eq!(parse_expr("1.5e-1*v2", 1, 1).unwrap().arity(), 2);
    }

    #[test]
    fn expression_errors_locate_the_token() {
        let e = parse_expr("1 + foo(v1)", 3, 10).unwrap_err();
        assert_eq!((e.line, e.col), (3, 14));
        let e = parse_expr("(v1 + 2", 1, 1).unwrap_err();
        assert_eq!(e.col, 8);
        let e = parse_expr("v1 ^ v2", 1, 1).unwrap_err();
        assert_eq!(e.col, 6);
    }

    #[test]
    fn tensor_spec_round() {
        let src = "# twisted\nn = 3\n0 1 2 = 0.1*conj(v2)\n2 2 2 = 0.05  # quadratic\n";
        let t = parse_tensor_spec(src).unwrap();
        assert_eq!(t.n, 3);
        assert_eq!(t.entries.len(), 2);
        let v = [C64::new(0.2, 0.0), C64::new(0.0, 0.4)];
        let phi = t.phi(0, &v, C64::new(0.0, 2.0)).unwrap();
        assert!((phi[(0, 1)] - C64::new(0.0, -0.04)).norm() < 1e-15);
        assert!((phi[(1, 1)] - C64::new(-0.2, 0.0)).norm() < 1e-15);
        let e = parse_tensor_spec("n = 2\n0 2 1 = 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_tensor_spec("n = 2\n0 1 1 = v2\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 9));
        let e = parse_tensor_spec("0 1 1 = 1\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn domain_spec_parses_and_echoes() {
        let src = "n = 2\nmu.kind = ellipsoid\nmu.a = 1 4\nN_v = 32\nseed = 7\n";
        let s = parse_domain_spec(src).unwrap();
        assert_eq!(s.mu, MuSpec::Ellipsoid(vec![1.0, 4.0]));
        assert_eq!((s.n_v, s.seed), (32, 7));
        assert_eq!(parse_domain_spec(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn domain_spec_errors() {
        let e = parse_domain_spec("n = 2\nmu.kind = ellipsoid\nmu.a = 1 x\n").unwrap_err();
        assert_eq!((e.line, e.col), (3, 10));
        let e = parse_domain_spec("n = 2\n  N_theta = 12\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 13));
        let e = parse_domain_spec("bogus = 1").unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        let e = parse_domain_spec("n = 2\nmu.kind = ellipsoid\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 11));
        let e = parse_domain_spec("moser_tol = 0\n").unwrap_err();
        assert_eq!(e.col, 13);
    }
}
