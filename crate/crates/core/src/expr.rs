//! Expressions in the two variables `t` and `x`: parsing, printing,
//! evaluation, and symbolic differentiation.
//!
//! Grammar (EBNF, whitespace insignificant between tokens):
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = factor { ("*" | "/") factor } ;
//! factor   = "-" factor | power ;
//! power    = atom [ "^" factor ] ;
//! atom     = number | "t" | "x" | function "(" expr ")" | "(" expr ")" ;
//! function = "exp" | "log" | "sqrt" | "sin" | "cos" | "tanh" ;
//! number   = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! parses as `-(x^2)` and `2^3^2` as `2^(3^2)`.
//!
//! Every node carries a byte span into the source it was parsed from;
//! nodes synthesized by differentiation or folding inherit the span of the
//! subexpression they came from, so evaluation errors still point at a
//! sensible location.
//!
//! `x^2` is evaluated as `x*x` (both in tree evaluation and in compiled
//! programs); all other exponents go through `powf`. This keeps the two
//! evaluation paths bit-identical.

use std::fmt;

/// Byte range `[start, end)` into the source string; `0..0` for synthesized
/// nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const SYNTHESIZED: Span = Span { start: 0, end: 0 };

    fn join(self, other: Span) -> Span {
        Span { start: self.start.min(other.start), end: self.end.max(other.end) }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Var::T => "t",
            Var::X => "x",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

/// Structural equality ignores spans, so trees parsed from differently
/// spaced sources compare equal.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("cannot evaluate `{node}` (bytes {span}): {message}")]
pub struct EvalError {
    pub span: Span,
    pub node: String,
    pub message: String,
}

/// Shared power semantics for tree and compiled evaluation.
#[inline]
fn pow_semantics(base: f64, exponent: f64) -> f64 {
    if exponent == 2.0 {
        base * base
    } else {
        base.powf(exponent)
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr { kind: ExprKind::Const(c), span: Span::SYNTHESIZED }
    }

    pub fn variable(v: Var) -> Expr {
        Expr { kind: ExprKind::Var(v), span: Span::SYNTHESIZED }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        let span = lhs.span.join(rhs.span);
        Expr { kind: ExprKind::Bin(op, Box::new(lhs), Box::new(rhs)), span }
    }

    pub fn negate(inner: Expr) -> Expr {
        let span = inner.span;
        Expr { kind: ExprKind::Neg(Box::new(inner)), span }
    }

    pub fn call(func: Func, arg: Expr) -> Expr {
        let span = arg.span;
        Expr { kind: ExprKind::Call(func, Box::new(arg)), span }
    }

    fn is_const(&self, c: f64) -> bool {
        matches!(self.kind, ExprKind::Const(v) if v == c)
    }

    /// Evaluates with domain checking. Division by zero, `log` of a
    /// non-positive value, `sqrt` of a negative value, and any non-finite
    /// result produced from finite operands are reported as errors carrying
    /// the offending node and its span.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64, EvalError> {
        let fail = |message: String| EvalError { span: self.span, node: self.to_string(), message };
        let checked = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(format!("{what} produced a non-finite value")))
            }
        };
        match &self.kind {
            ExprKind::Const(c) => Ok(*c),
            ExprKind::Var(Var::T) => Ok(t),
            ExprKind::Var(Var::X) => Ok(x),
            ExprKind::Neg(inner) => Ok(-inner.eval(t, x)?),
            ExprKind::Bin(op, lhs, rhs) => {
                let a = lhs.eval(t, x)?;
                let b = rhs.eval(t, x)?;
                match op {
                    BinOp::Add => checked(a + b, "addition"),
                    BinOp::Sub => checked(a - b, "subtraction"),
                    BinOp::Mul => checked(a * b, "multiplication"),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(fail("division by zero".into()))
                        } else {
                            checked(a / b, "division")
                        }
                    }
                    BinOp::Pow => {
                        let v = pow_semantics(a, b);
                        if v.is_nan() {
                            Err(fail(format!("{a}^{b} is undefined")))
                        } else {
                            checked(v, "power")
                        }
                    }
                }
            }
            ExprKind::Call(func, arg) => {
                let a = arg.eval(t, x)?;
                match func {
                    Func::Log if a <= 0.0 => Err(fail(format!("log of non-positive value {a}"))),
                    Func::Sqrt if a < 0.0 => Err(fail(format!("sqrt of negative value {a}"))),
                    _ => checked(func.apply(a), func.name()),
                }
            }
        }
    }
}

/// Precedence for printing. Negative constants print with a leading minus,
/// so they bind like a unary minus.
fn print_precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Const(c) if *c < 0.0 => 3,
        ExprKind::Const(_) | ExprKind::Var(_) | ExprKind::Call(..) => 5,
        ExprKind::Neg(_) => 3,
        ExprKind::Bin(op, ..) => op.precedence(),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn paren(f: &mut fmt::Formatter<'_>, e: &Expr, needed: bool) -> fmt::Result {
            if needed {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match &self.kind {
            ExprKind::Const(c) => write!(f, "{c}"),
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Neg(inner) => {
                f.write_str("-")?;
                paren(f, inner, print_precedence(inner) <= 3)
            }
            ExprKind::Bin(op, lhs, rhs) => {
                let p = op.precedence();
                match op {
                    // Left-associative: parenthesize a right child that binds
                    // no tighter, so the printed form reparses to this tree.
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                        paren(f, lhs, print_precedence(lhs) < p)?;
                        f.write_str(op.symbol())?;
                        paren(f, rhs, print_precedence(rhs) <= p)
                    }
                    // Right-associative; its right operand is a factor, so
                    // unary minus and powers stand unparenthesized.
                    BinOp::Pow => {
                        paren(f, lhs, print_precedence(lhs) <= p)?;
                        f.write_str(op.symbol())?;
                        paren(f, rhs, print_precedence(rhs) < 3)
                    }
                }
            }
            ExprKind::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

struct Parser<'s> {
    src: &'s [u8],
    pos: usize,
}

impl<'s> Parser<'s> {
    fn error<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            let start = self.pos;
            self.pos += 1;
            let inner = self.factor()?;
            let span = Span { start, end: inner.span.end };
            return Ok(Expr { kind: ExprKind::Neg(Box::new(inner)), span });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.factor()?;
            let span = base.span.join(exponent.span);
            return Ok(Expr {
                kind: ExprKind::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)),
                span,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => self.error(self.pos, "expected a value, found end of input"),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return self
                        .error(self.pos, format!("expected `)` to close `(` at byte {open}"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => self.error(self.pos, format!("unexpected character `{}`", c as char)),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        // Consume an exponent only when it is well-formed; otherwise leave
        // the `e` to be read as an identifier, which gives a clearer error.
        if let Some(b'e' | b'E') = self.src.get(self.pos).copied() {
            let mut probe = self.pos + 1;
            if let Some(b'+' | b'-') = self.src.get(probe).copied() {
                probe += 1;
            }
            if self.src.get(probe).is_some_and(|c| c.is_ascii_digit()) {
                self.pos = probe;
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("scanned ASCII");
        match text.parse::<f64>() {
            Ok(value) => {
                Ok(Expr { kind: ExprKind::Const(value), span: Span { start, end: self.pos } })
            }
            Err(_) => self.error(start, format!("malformed number `{text}`")),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("scanned ASCII");
        let span = Span { start, end: self.pos };
        match name {
            "t" => Ok(Expr { kind: ExprKind::Var(Var::T), span }),
            "x" => Ok(Expr { kind: ExprKind::Var(Var::X), span }),
            _ => {
                let Some(func) = Func::from_name(name) else {
                    return self.error(
                        start,
                        format!("unknown identifier `{name}` (expected t, x, or one of exp, log, sqrt, sin, cos, tanh)"),
                    );
                };
                if self.peek() != Some(b'(') {
                    return self.error(self.pos, format!("expected `(` after function `{name}`"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.error(self.pos, format!("expected `)` to close call to `{name}`"));
                }
                self.pos += 1;
                Ok(Expr {
                    kind: ExprKind::Call(func, Box::new(arg)),
                    span: Span { start, end: self.pos },
                })
            }
        }
    }
}

/// Parses an expression in `t` and `x`. The whole input must be consumed.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    if !src.is_ascii() {
        let offset = src.bytes().position(|b| !b.is_ascii()).unwrap_or(0);
        return Err(ParseError { offset, message: "non-ASCII input".into() });
    }
    let mut parser = Parser { src: src.as_bytes(), pos: 0 };
    let expr = parser.expr()?;
    if let Some(c) = parser.peek() {
        return Err(ParseError {
            offset: parser.pos,
            message: format!("unexpected trailing input starting at `{}`", c as char),
        });
    }
    Ok(expr)
}

/// Folds constant subtrees and algebraic identities:
/// constant-constant operations (kept symbolic if the result would be
/// non-finite), `e + 0`, `0 + e`, `e - 0`, `0 * e`, `e * 0`, `1 * e`,
/// `e * 1`, `e / 1`, `e ^ 1`, and negation of constants.
pub fn constant_fold(e: &Expr) -> Expr {
    let span = e.span;
    let kind = match &e.kind {
        ExprKind::Const(_) | ExprKind::Var(_) => return e.clone(),
        ExprKind::Neg(inner) => {
            let inner = constant_fold(inner);
            if let ExprKind::Const(c) = inner.kind {
                ExprKind::Const(-c)
            } else {
                ExprKind::Neg(Box::new(inner))
            }
        }
        ExprKind::Bin(op, lhs, rhs) => {
            let lhs = constant_fold(lhs);
            let rhs = constant_fold(rhs);
            if let (ExprKind::Const(a), ExprKind::Const(b)) = (&lhs.kind, &rhs.kind) {
                let v = match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow_semantics(*a, *b),
                };
                if v.is_finite() {
                    return Expr { kind: ExprKind::Const(v), span };
                }
            }
            match op {
                BinOp::Add if lhs.is_const(0.0) => return rhs,
                BinOp::Add | BinOp::Sub if rhs.is_const(0.0) => return lhs,
                BinOp::Mul if lhs.is_const(0.0) || rhs.is_const(0.0) => ExprKind::Const(0.0),
                BinOp::Mul if lhs.is_const(1.0) => return rhs,
                BinOp::Mul | BinOp::Div if rhs.is_const(1.0) => return lhs,
                BinOp::Pow if rhs.is_const(1.0) => return lhs,
                _ => ExprKind::Bin(*op, Box::new(lhs), Box::new(rhs)),
            }
        }
        ExprKind::Call(func, arg) => ExprKind::Call(*func, Box::new(constant_fold(arg))),
    };
    Expr { kind, span }
}

/// Symbolic derivative with respect to `var`, constant-folded.
pub fn differentiate(e: &Expr, var: Var) -> Expr {
    constant_fold(&derivative(e, var))
}

fn derivative(e: &Expr, var: Var) -> Expr {
    let span = e.span;
    let wrap = |kind| Expr { kind, span };
    match &e.kind {
        ExprKind::Const(_) => wrap(ExprKind::Const(0.0)),
        ExprKind::Var(v) => wrap(ExprKind::Const(if *v == var { 1.0 } else { 0.0 })),
        ExprKind::Neg(inner) => wrap(ExprKind::Neg(Box::new(derivative(inner, var)))),
        ExprKind::Bin(op, u, w) => {
            let du = || derivative(u, var);
            let dw = || derivative(w, var);
            let u_ = || (**u).clone();
            let w_ = || (**w).clone();
            match op {
                BinOp::Add => Expr::binary(BinOp::Add, du(), dw()),
                BinOp::Sub => Expr::binary(BinOp::Sub, du(), dw()),
                BinOp::Mul => Expr::binary(
                    BinOp::Add,
                    Expr::binary(BinOp::Mul, du(), w_()),
                    Expr::binary(BinOp::Mul, u_(), dw()),
                ),
                BinOp::Div => Expr::binary(
                    BinOp::Div,
                    Expr::binary(
                        BinOp::Sub,
                        Expr::binary(BinOp::Mul, du(), w_()),
                        Expr::binary(BinOp::Mul, u_(), dw()),
                    ),
                    Expr::binary(BinOp::Pow, w_(), Expr::constant(2.0)),
                ),
                BinOp::Pow => {
                    if let ExprKind::Const(c) = w.kind {
                        // d(u^c) = c * u^(c-1) * u'
                        Expr::binary(
                            BinOp::Mul,
                            Expr::binary(
                                BinOp::Mul,
                                Expr::constant(c),
                                Expr::binary(BinOp::Pow, u_(), Expr::constant(c - 1.0)),
                            ),
                            du(),
                        )
                    } else {
                        // d(u^w) = u^w * (w' * log(u) + w * u' / u)
                        Expr::binary(
                            BinOp::Mul,
                            Expr::binary(BinOp::Pow, u_(), w_()),
                            Expr::binary(
                                BinOp::Add,
                                Expr::binary(BinOp::Mul, dw(), Expr::call(Func::Log, u_())),
                                Expr::binary(
                                    BinOp::Mul,
                                    w_(),
                                    Expr::binary(BinOp::Div, du(), u_()),
                                ),
                            ),
                        )
                    }
                }
            }
        }
        ExprKind::Call(func, arg) => {
            let da = derivative(arg, var);
            let a = || (**arg).clone();
            let outer = match func {
                Func::Exp => Expr::call(Func::Exp, a()),
                Func::Log => {
                    return Expr::binary(BinOp::Div, da, a());
                }
                Func::Sqrt => {
                    return Expr::binary(
                        BinOp::Div,
                        da,
                        Expr::binary(BinOp::Mul, Expr::constant(2.0), Expr::call(Func::Sqrt, a())),
                    );
                }
                Func::Sin => Expr::call(Func::Cos, a()),
                Func::Cos => Expr::negate(Expr::call(Func::Sin, a())),
                Func::Tanh => Expr::binary(
                    BinOp::Sub,
                    Expr::constant(1.0),
                    Expr::binary(BinOp::Pow, Expr::call(Func::Tanh, a()), Expr::constant(2.0)),
                ),
            };
            Expr::binary(BinOp::Mul, outer, da)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    T,
    X,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sq,
    PowConst(f64),
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

const MAX_STACK: usize = 64;

/// An expression flattened to postfix form for evaluation in hot loops.
/// Unlike [`Expr::eval`] there is no domain checking: division by zero,
/// negative logs and the like produce NaN or infinity, which callers detect
/// at the consuming site.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        flatten(e, &mut ops, &mut depth, &mut max_depth);
        assert!(max_depth <= MAX_STACK, "expression nests deeper than {MAX_STACK} levels");
        Program { ops }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let mut stack = [0.0f64; MAX_STACK];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::T => {
                    stack[sp] = t;
                    sp += 1;
                }
                Op::X => {
                    stack[sp] = x;
                    sp += 1;
                }
                Op::Add => {
                    sp -= 1;
                    stack[sp - 1] += stack[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    stack[sp - 1] -= stack[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    stack[sp - 1] *= stack[sp];
                }
                Op::Div => {
                    sp -= 1;
                    stack[sp - 1] /= stack[sp];
                }
                Op::Pow => {
                    sp -= 1;
                    stack[sp - 1] = pow_semantics(stack[sp - 1], stack[sp]);
                }
                Op::Sq => stack[sp - 1] *= stack[sp - 1],
                Op::PowConst(c) => stack[sp - 1] = stack[sp - 1].powf(c),
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Exp => stack[sp - 1] = stack[sp - 1].exp(),
                Op::Log => stack[sp - 1] = stack[sp - 1].ln(),
                Op::Sqrt => stack[sp - 1] = stack[sp - 1].sqrt(),
                Op::Sin => stack[sp - 1] = stack[sp - 1].sin(),
                Op::Cos => stack[sp - 1] = stack[sp - 1].cos(),
                Op::Tanh => stack[sp - 1] = stack[sp - 1].tanh(),
            }
        }
        stack[0]
    }
}

fn flatten(e: &Expr, ops: &mut Vec<Op>, depth: &mut usize, max_depth: &mut usize) {
    let push =
        |ops: &mut Vec<Op>, op: Op, depth: &mut usize, max_depth: &mut usize, arity: usize| {
            *depth = *depth + 1 - arity;
            *max_depth = (*max_depth).max(*depth);
            ops.push(op);
        };
    match &e.kind {
        ExprKind::Const(c) => push(ops, Op::Const(*c), depth, max_depth, 0),
        ExprKind::Var(Var::T) => push(ops, Op::T, depth, max_depth, 0),
        ExprKind::Var(Var::X) => push(ops, Op::X, depth, max_depth, 0),
        ExprKind::Neg(inner) => {
            flatten(inner, ops, depth, max_depth);
            push(ops, Op::Neg, depth, max_depth, 1);
        }
        ExprKind::Bin(op, lhs, rhs) => {
            flatten(lhs, ops, depth, max_depth);
            if *op == BinOp::Pow {
                if let ExprKind::Const(c) = rhs.kind {
                    let compiled = if c == 2.0 { Op::Sq } else { Op::PowConst(c) };
                    push(ops, compiled, depth, max_depth, 1);
                    return;
                }
            }
            flatten(rhs, ops, depth, max_depth);
            let compiled = match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
                BinOp::Pow => Op::Pow,
            };
            push(ops, compiled, depth, max_depth, 2);
        }
        ExprKind::Call(func, arg) => {
            flatten(arg, ops, depth, max_depth);
            let compiled = match func {
                Func::Exp => Op::Exp,
                Func::Log => Op::Log,
                Func::Sqrt => Op::Sqrt,
                Func::Sin => Op::Sin,
                Func::Cos => Op::Cos,
                Func::Tanh => Op::Tanh,
            };
            push(ops, compiled, depth, max_depth, 1);
        }
    }
}

/// A surface `V(t, x)` bundled with its first two space derivatives and its
/// time derivative, each compiled for fast evaluation.
#[derive(Debug, Clone)]
pub struct Surface {
    pub v: Expr,
    pub v_t: Expr,
    pub v_x: Expr,
    pub v_xx: Expr,
    prog_v: Program,
    prog_v_t: Program,
    prog_v_x: Program,
    prog_v_xx: Program,
}

impl Surface {
    pub fn new(v: Expr) -> Surface {
        let v_t = differentiate(&v, Var::T);
        let v_x = differentiate(&v, Var::X);
        let v_xx = differentiate(&v_x, Var::X);
        Surface {
            prog_v: Program::compile(&v),
            prog_v_t: Program::compile(&v_t),
            prog_v_x: Program::compile(&v_x),
            prog_v_xx: Program::compile(&v_xx),
            v,
            v_t,
            v_x,
            v_xx,
        }
    }

    pub fn parse(src: &str) -> Result<Surface, ParseError> {
        Ok(Surface::new(parse(src)?))
    }

    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.prog_v.eval(t, x)
    }

    #[inline]
    pub fn dt(&self, t: f64, x: f64) -> f64 {
        self.prog_v_t.eval(t, x)
    }

    #[inline]
    pub fn dx(&self, t: f64, x: f64) -> f64 {
        self.prog_v_x.eval(t, x)
    }

    #[inline]
    pub fn dxx(&self, t: f64, x: f64) -> f64 {
        self.prog_v_xx.eval(t, x)
    }

    /// Domain-checked evaluation of the surface itself.
    pub fn value_checked(&self, t: f64, x: f64) -> Result<f64, EvalError> {
        self.v.eval(t, x)
    }

    /// The surface `V - z`. Derivatives are unchanged; for `z == 0` this is
    /// a plain clone so the common case stays bit-identical.
    pub fn shifted(&self, z: f64) -> Surface {
        if z == 0.0 {
            return self.clone();
        }
        let v = Expr::binary(BinOp::Sub, self.v.clone(), Expr::constant(z));
        Surface {
            prog_v: Program::compile(&v),
            v,
            v_t: self.v_t.clone(),
            v_x: self.v_x.clone(),
            v_xx: self.v_xx.clone(),
            prog_v_t: self.prog_v_t.clone(),
            prog_v_x: self.prog_v_x.clone(),
            prog_v_xx: self.prog_v_xx.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::binary(op, l, r)
    }

    #[test]
    fn parses_with_documented_precedence() {
        let e = parse("x^2 - t").unwrap();
        assert_eq!(
            e,
            b(
                BinOp::Sub,
                b(BinOp::Pow, Expr::variable(Var::X), Expr::constant(2.0)),
                Expr::variable(Var::T)
            )
        );

        // Unary minus binds looser than ^.
        let e = parse("-x^2").unwrap();
        assert_eq!(e.eval(0.0, 2.0).unwrap(), -4.0);
        assert_eq!(e, Expr::negate(b(BinOp::Pow, Expr::variable(Var::X), Expr::constant(2.0))));

        // ^ is right-associative.
        assert_eq!(parse("2^3^2").unwrap().eval(0.0, 0.0).unwrap(), 512.0);

        // + - and * / are left-associative.
        assert_eq!(parse("8 - 4 - 2").unwrap().eval(0.0, 0.0).unwrap(), 2.0);
        assert_eq!(parse("8 / 4 / 2").unwrap().eval(0.0, 0.0).unwrap(), 1.0);

        // Scientific notation.
        assert_eq!(parse("1e-3*x").unwrap().eval(0.0, 2.0).unwrap(), 0.002);
        assert_eq!(parse("2.5E2").unwrap().eval(0.0, 0.0).unwrap(), 250.0);
    }

    #[test]
    fn spans_cover_source_bytes() {
        let e = parse("x^2 - t").unwrap();
        assert_eq!(e.span, Span { start: 0, end: 7 });
        if let ExprKind::Bin(_, lhs, rhs) = &e.kind {
            assert_eq!(lhs.span, Span { start: 0, end: 3 });
            assert_eq!(rhs.span, Span { start: 6, end: 7 });
        } else {
            panic!("expected binary node");
        }
    }

    #[test]
    fn parse_errors_carry_byte_offsets() {
        let err = parse("x +").unwrap_err();
        assert_eq!(err.offset, 3);

        let err = parse("2*^3").unwrap_err();
        assert_eq!(err.offset, 2);

        let err = parse("foo(x)").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(err.message.contains("foo"));

        let err = parse("(x + t").unwrap_err();
        assert_eq!(err.offset, 6);

        let err = parse("exp x").unwrap_err();
        assert!(err.message.contains("expected `(`"));

        let err = parse("x $ 2").unwrap_err();
        assert_eq!(err.offset, 2);

        let err = parse("x + y").unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(err.message.contains("unknown identifier"));
    }

    #[test]
    fn eval_reports_domain_errors_with_spans() {
        let e = parse("log(x - 2)").unwrap();
        let err = e.eval(0.0, 1.0).unwrap_err();
        assert!(err.message.contains("log"));
        assert_eq!(err.span, Span { start: 0, end: 10 });

        assert!(parse("1/x").unwrap().eval(0.0, 0.0).is_err());
        assert!(parse("sqrt(x)").unwrap().eval(0.0, -1.0).is_err());
        assert!(parse("x^0.5").unwrap().eval(0.0, -4.0).is_err());
        assert!(parse("exp(x)").unwrap().eval(0.0, 1e9).is_err());
        assert!(parse("x^2").unwrap().eval(0.0, -4.0).unwrap() == 16.0);
    }

    #[test]
    fn differentiation_produces_folded_structures() {
        let e = parse("x^2 - t").unwrap();
        let dx = differentiate(&e, Var::X);
        assert_eq!(dx, b(BinOp::Mul, Expr::constant(2.0), Expr::variable(Var::X)));
        assert_eq!(dx.to_string(), "2*x");

        let dt = differentiate(&e, Var::T);
        assert_eq!(dt, Expr::constant(-1.0));

        let dxx = differentiate(&dx, Var::X);
        assert_eq!(dxx, Expr::constant(2.0));
    }

    #[test]
    fn derivative_values_match_known_closed_forms() {
        let cases: [(&str, fn(f64, f64) -> f64); 6] = [
            ("sin(t*x)", |t, x| t * (t * x).cos()),
            ("exp(x^2)", |_, x| 2.0 * x * (x * x).exp()),
            ("log(x)", |_, x| 1.0 / x),
            ("sqrt(x)", |_, x| 0.5 / x.sqrt()),
            ("tanh(x)", |_, x| 1.0 - x.tanh().powi(2)),
            ("x^t", |t, x| t * x.powf(t - 1.0)),
        ];
        for (src, truth) in cases {
            let d = differentiate(&parse(src).unwrap(), Var::X);
            for (t, x) in [(0.5, 1.3), (1.0, 2.0), (2.0, 0.7)] {
                let got = d.eval(t, x).unwrap();
                let want = truth(t, x);
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "{src}: d/dx at ({t},{x}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn folding_applies_documented_identities() {
        let fold = |s: &str| constant_fold(&parse(s).unwrap()).to_string();
        assert_eq!(fold("2 + 3*4"), "14");
        assert_eq!(fold("x + 0"), "x");
        assert_eq!(fold("0 + x"), "x");
        assert_eq!(fold("x - 0"), "x");
        assert_eq!(fold("0 * x"), "0");
        assert_eq!(fold("x * 0"), "0");
        assert_eq!(fold("1 * x"), "x");
        assert_eq!(fold("x * 1"), "x");
        assert_eq!(fold("x / 1"), "x");
        assert_eq!(fold("x ^ 1"), "x");
        // A non-finite constant result stays symbolic.
        assert_eq!(fold("1 / 0"), "1/0");
        assert_eq!(fold("exp(1000)^9"), "exp(1000)^9");
    }

    #[test]
    fn printing_round_trips_structure() {
        for src in [
            "x^2 - t",
            "-x^2",
            "2^3^2",
            "(x + t)*(x - t)",
            "x - (t - 1)",
            "x/(t*t)",
            "exp(-x^2/2)",
            "(t - 1)^2*x^2 - 1",
            "1e-3*x + 2.5",
            "-(x + t)",
            "x^(t + 1)",
        ] {
            let once = parse(src).unwrap();
            let twice = parse(&once.to_string()).unwrap();
            assert_eq!(once, twice, "round trip of `{src}` via `{once}`");
        }
    }

    #[test]
    fn program_matches_tree_evaluation_bitwise() {
        let sources = [
            "x^2 - t",
            "(t - 1)^2*x^2 - 1",
            "exp(-x^2/2)/sqrt(t)",
            "sin(t*x) + cos(x)^2",
            "tanh(x/2)*log(t + 1.5)",
            "x^t",
            "x^3",
        ];
        for src in sources {
            let e = parse(src).unwrap();
            let p = Program::compile(&e);
            for (t, x) in [(0.25, 0.5), (1.0, 1.0), (2.0, -0.75), (0.5, 3.0)] {
                if let Ok(tree) = e.eval(t, x) {
                    let prog = p.eval(t, x);
                    assert_eq!(tree.to_bits(), prog.to_bits(), "{src} at ({t},{x})");
                }
            }
        }
    }

    #[test]
    fn sin_of_product_is_bit_exact() {
        let e = parse("sin(t*x)").unwrap();
        assert_eq!(e.eval(0.5, 2.0).unwrap(), 1.0f64.sin());
    }

    #[test]
    fn surface_bundles_derivatives() {
        let s = Surface::parse("x^2 - t").unwrap();
        assert_eq!(s.v_x.to_string(), "2*x");
        assert_eq!(s.v_xx.to_string(), "2");
        assert_eq!(s.v_t.to_string(), "-1");
        assert_eq!(s.value(0.25, 1.5), 2.0);
        assert_eq!(s.dx(0.25, 1.5), 3.0);
        assert_eq!(s.dxx(0.25, 1.5), 2.0);
        assert_eq!(s.dt(0.25, 1.5), -1.0);
    }

    #[test]
    fn shifted_surface_subtracts_level() {
        let s = Surface::parse("x^2").unwrap();
        let shifted = s.shifted(1.0);
        assert_eq!(shifted.value(0.0, 2.0), 3.0);
        assert_eq!(shifted.dx(0.0, 2.0), s.dx(0.0, 2.0));
        // Zero shift preserves the expression byte for byte.
        assert_eq!(s.shifted(0.0).v, s.v);
    }
}
