//! Tiny scalar expression language for user-defined coefficient models.
//!
//! Grammar (precedence climbing): `+ -` < `* /` < unary `-` < `^`
//! (right-associative) < atoms. Atoms are numbers, named variables,
//! the constants `pi` and `e`, parenthesized expressions, and single-argument
//! function calls from a fixed vocabulary: sin, cos, tan, sinh, cosh, tanh,
//! exp, ln (alias log), log10, sqrt, abs, atan.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::CoefficientModel;
use crate::segments::SegmentView;

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryFn {
    Neg,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Ln,
    Log10,
    Sqrt,
    Abs,
    Atan,
}

impl UnaryFn {
    fn by_name(name: &str) -> Option<UnaryFn> {
        Some(match name {
            "sin" => UnaryFn::Sin,
            "cos" => UnaryFn::Cos,
            "tan" => UnaryFn::Tan,
            "sinh" => UnaryFn::Sinh,
            "cosh" => UnaryFn::Cosh,
            "tanh" => UnaryFn::Tanh,
            "exp" => UnaryFn::Exp,
            "ln" | "log" => UnaryFn::Ln,
            "log10" => UnaryFn::Log10,
            "sqrt" => UnaryFn::Sqrt,
            "abs" => UnaryFn::Abs,
            "atan" => UnaryFn::Atan,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            UnaryFn::Neg => -v,
            UnaryFn::Sin => v.sin(),
            UnaryFn::Cos => v.cos(),
            UnaryFn::Tan => v.tan(),
            UnaryFn::Sinh => v.sinh(),
            UnaryFn::Cosh => v.cosh(),
            UnaryFn::Tanh => v.tanh(),
            UnaryFn::Exp => v.exp(),
            UnaryFn::Ln => v.ln(),
            UnaryFn::Log10 => v.log10(),
            UnaryFn::Sqrt => v.sqrt(),
            UnaryFn::Abs => v.abs(),
            UnaryFn::Atan => v.atan(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn apply(self, l: f64, r: f64) -> f64 {
        match self {
            BinOp::Add => l + r,
            BinOp::Sub => l - r,
            BinOp::Mul => l * r,
            BinOp::Div => l / r,
            BinOp::Pow => l.powf(r),
        }
    }
}

/// Parsed scalar expression over a fixed list of named variables.
#[derive(Clone, Debug)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryFnPub, Box<Expr>),
    Binary(BinOpPub, Box<Expr>, Box<Expr>),
}

// The op enums stay private; re-export opaque wrappers so Expr can be public
// without freezing the op sets into the API.
#[derive(Clone, Copy, Debug)]
pub struct UnaryFnPub(UnaryFn);
#[derive(Clone, Copy, Debug)]
pub struct BinOpPub(BinOp);

impl Expr {
    /// Parse `src` over the variable names `vars` (index in `vars` becomes
    /// the variable's slot for [`Expr::eval`]).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0, vars, src };
        let e = p.parse_expr(0)?;
        if p.pos != p.tokens.len() {
            return Err(p.error_at(p.tokens[p.pos].at, "unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Unary(f, a) => f.0.apply(a.eval(vars)),
            Expr::Binary(op, l, r) => op.0.apply(l.eval(vars), r.eval(vars)),
        }
    }

    /// True when some variable slot is actually read.
    pub fn uses_var(&self, slot: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == slot,
            Expr::Unary(_, a) => a.uses_var(slot),
            Expr::Binary(_, l, r) => l.uses_var(slot) || r.uses_var(slot),
        }
    }
}

#[derive(Clone, Debug)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    at: usize,
}

fn tokenize(src: &str) -> Result<Vec<Spanned>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Spanned { tok: Tok::Plus, at: i });
                i += 1;
            }
            '-' => {
                out.push(Spanned { tok: Tok::Minus, at: i });
                i += 1;
            }
            '*' => {
                out.push(Spanned { tok: Tok::Star, at: i });
                i += 1;
            }
            '/' => {
                out.push(Spanned { tok: Tok::Slash, at: i });
                i += 1;
            }
            '^' => {
                out.push(Spanned { tok: Tok::Caret, at: i });
                i += 1;
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, at: i });
                i += 1;
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, at: i });
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| {
                    Error::Expression(format!("bad number '{text}' at position {start}"))
                })?;
                out.push(Spanned { tok: Tok::Num(v), at: start });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push(Spanned { tok: Tok::Ident(src[start..i].to_string()), at: start });
            }
            _ => {
                return Err(Error::Expression(format!(
                    "unexpected character '{c}' at position {i}"
                )));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Spanned],
    pos: usize,
    vars: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn error_at(&self, at: usize, msg: &str) -> Error {
        Error::Expression(format!("{msg} at position {at} in '{}'", self.src))
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|s| &s.tok)
    }

    fn next(&mut self) -> Option<&'a Spanned> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    // precedence climbing: min_bp 0 entry point
    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let (op, lbp, rbp) = match self.peek() {
                Some(Tok::Plus) => (BinOp::Add, 10, 11),
                Some(Tok::Minus) => (BinOp::Sub, 10, 11),
                Some(Tok::Star) => (BinOp::Mul, 20, 21),
                Some(Tok::Slash) => (BinOp::Div, 20, 21),
                // right-associative: rbp == lbp
                Some(Tok::Caret) => (BinOp::Pow, 40, 40),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.next();
            let rhs = self.parse_expr(rbp)?;
            lhs = Expr::Binary(BinOpPub(op), Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Expr> {
        let Some(sp) = self.next() else {
            return Err(Error::Expression(format!("unexpected end of '{}'", self.src)));
        };
        match &sp.tok {
            Tok::Num(v) => Ok(Expr::Const(*v)),
            // unary minus binds tighter than * but looser than ^ so that
            // -x^2 reads as -(x^2)
            Tok::Minus => {
                let inner = self.parse_expr(30)?;
                Ok(Expr::Unary(UnaryFnPub(UnaryFn::Neg), Box::new(inner)))
            }
            Tok::Plus => self.parse_prefix(),
            Tok::LParen => {
                let inner = self.parse_expr(0)?;
                match self.next().map(|s| &s.tok) {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(self.error_at(sp.at, "unclosed parenthesis")),
                }
            }
            Tok::Ident(name) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    let Some(f) = UnaryFn::by_name(name) else {
                        return Err(self.error_at(sp.at, &format!("unknown function '{name}'")));
                    };
                    self.next(); // consume '('
                    let arg = self.parse_expr(0)?;
                    match self.next().map(|s| &s.tok) {
                        Some(Tok::RParen) => {}
                        _ => return Err(self.error_at(sp.at, "unclosed function call")),
                    }
                    Ok(Expr::Unary(UnaryFnPub(f), Box::new(arg)))
                } else {
                    match name.as_str() {
                        "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                        "e" => Ok(Expr::Const(std::f64::consts::E)),
                        _ => {
                            if let Some(slot) = self.vars.iter().position(|v| v == name) {
                                Ok(Expr::Var(slot))
                            } else {
                                Err(self.error_at(
                                    sp.at,
                                    &format!(
                                        "unknown variable '{name}' (expected one of {:?})",
                                        self.vars
                                    ),
                                ))
                            }
                        }
                    }
                }
            }
            t => Err(self.error_at(sp.at, &format!("unexpected token {t:?}"))),
        }
    }
}

/// Declaration of a scalar expression model. The drift and diffusion strings
/// may reference `x` for the current value, `x_tau` for the value one delay
/// back, and `x_lag1`, `x_lag2`, ... for the `extra_lags` entries in order.
/// The contract constants cannot be derived from the text, so the caller
/// declares them; [`crate::models::validate_model`] can spot-check the claim.
#[derive(Clone, Debug)]
pub struct ExpressionModelSpec {
    pub tau: f64,
    pub drift: String,
    pub diffusion: String,
    pub extra_lags: Vec<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub ellipticity_c: Option<f64>,
}

/// Build a scalar (d = m = 1) model from expression text. No analytic
/// derivatives are attached; gradient-based consumers fall back to finite
/// differences.
pub fn build_expression_model(spec: &ExpressionModelSpec) -> Result<CoefficientModel> {
    if !(spec.tau > 0.0) {
        return Err(Error::Argument(format!("need tau > 0, got {}", spec.tau)));
    }
    for (i, &lag) in spec.extra_lags.iter().enumerate() {
        if !(lag.is_finite() && lag >= 0.0 && lag <= spec.tau) {
            return Err(Error::Argument(format!(
                "extra lag x_lag{} = {lag} must lie in [0, tau]",
                i + 1
            )));
        }
    }
    let mut var_names: Vec<String> = vec!["x".into(), "x_tau".into()];
    for i in 0..spec.extra_lags.len() {
        var_names.push(format!("x_lag{}", i + 1));
    }
    let name_refs: Vec<&str> = var_names.iter().map(|s| s.as_str()).collect();
    let drift_expr = Expr::parse(&spec.drift, &name_refs)?;
    let diffusion_expr = Expr::parse(&spec.diffusion, &name_refs)?;

    let mut lags = vec![0.0, spec.tau];
    lags.extend_from_slice(&spec.extra_lags);
    let lags_for_eval = Arc::new(lags.clone());

    let gather = {
        let lags = lags_for_eval.clone();
        move |seg: &SegmentView<'_>, vals: &mut Vec<f64>| {
            vals.clear();
            for &lag in lags.iter() {
                vals.push(seg.at_lag(lag).expect("lag checked against grid")[0]);
            }
        }
    };
    let gather = Arc::new(gather);

    let drift_gather = gather.clone();
    let drift = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        let mut vals = Vec::with_capacity(4);
        drift_gather(seg, &mut vals);
        out[0] = drift_expr.eval(&vals);
    });
    let diffusion_gather = gather;
    let diffusion = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        let mut vals = Vec::with_capacity(4);
        diffusion_gather(seg, &mut vals);
        out[0] = diffusion_expr.eval(&vals);
    });

    CoefficientModel::from_parts(
        format!("expression model (tau={}, drift = {}, diffusion = {})", spec.tau, spec.drift, spec.diffusion),
        1,
        1,
        spec.kappa1,
        spec.kappa2,
        spec.ellipticity_c,
        lags,
        drift,
        diffusion,
        None,
    )
}
