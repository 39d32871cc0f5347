//! Closed-form expression language for curvature candidates.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr  := term { ("+" | "-") term }
//! term  := pow  { ("*" | "/") pow }
//! pow   := neg [ "^" sexp ]           right-associative exponent
//! sexp  := "-" sexp | pow             exponent may carry unary minus
//! neg   := "-" neg | atom             unary minus binds tighter than "^" base
//! atom  := number | var | func "(" expr { "," expr } ")" | "(" expr ")"
//! ```
//!
//! so `-2^2 = (-2)^2 = 4` and `2^-3 = 2^(-3)`. Variables are `x1 .. x{n+1}`,
//! the ambient coordinates of the sphere. Functions: `sin`, `cos`, `exp`,
//! `log`, `abs`, `sqrt`, and two-argument `pow`. Numbers are decimal with
//! optional fraction and exponent.
//!
//! Evaluation is strict about domains: `log` of a non-positive value,
//! division by zero, `sqrt` of a negative value, `0^b` with `b <= 0`, and a
//! negative base with a fractional exponent are all reported as structured
//! errors naming the offending subexpression.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::SpherePoint;

/// A parsed expression. Evaluation is over f64 vectors indexed x1, x2, ...
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    max_var: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    /// 1-based coordinate index, as written in the source text.
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Func(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
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
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {}", v),
            Tok::Ident(s) => write!(f, "identifier `{}`", s),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token plus the byte offset where it starts.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = simple {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            let mut seen_dot = false;
            while end < self.src.len()
                && (self.src[end].is_ascii_digit() || (self.src[end] == b'.' && !seen_dot))
            {
                if self.src[end] == b'.' {
                    seen_dot = true;
                }
                end += 1;
            }
            if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
                let mut e = end + 1;
                if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                    e += 1;
                }
                if e < self.src.len() && self.src[e].is_ascii_digit() {
                    while e < self.src.len() && self.src[e].is_ascii_digit() {
                        e += 1;
                    }
                    end = e;
                }
            }
            let text = std::str::from_utf8(&self.src[start..end]).expect("ascii digits");
            let value: f64 = text.parse().map_err(|_| Error::Parse {
                offset: start,
                expected: "a number".into(),
                found: format!("`{}`", text),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    offset: start,
                    expected: "a finite number".into(),
                    found: format!("`{}`", text),
                });
            }
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() {
            let mut end = self.pos;
            while end < self.src.len()
                && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
            {
                end += 1;
            }
            let text = std::str::from_utf8(&self.src[start..end]).expect("ascii ident");
            self.pos = end;
            return Ok((Tok::Ident(text.to_string()), start));
        }
        Err(Error::Parse {
            offset: start,
            expected: "a token".into(),
            found: format!("`{}`", char::from(c)),
        })
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let (tok, offset) = lexer.next()?;
        Ok(Parser { lexer, tok, offset })
    }

    fn bump(&mut self) -> Result<()> {
        let (tok, offset) = self.lexer.next()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn unexpected(&self, expected: &str) -> Error {
        Error::Parse {
            offset: self.offset,
            expected: expected.into(),
            found: self.tok.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Plus => {
                    self.bump()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.pow()?;
        loop {
            match self.tok {
                Tok::Star => {
                    self.bump()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.pow()?));
                }
                Tok::Slash => {
                    self.bump()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.pow()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn pow(&mut self) -> Result<Node> {
        let base = self.neg()?;
        if self.tok == Tok::Caret {
            self.bump()?;
            let exponent = self.signed_exponent()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn signed_exponent(&mut self) -> Result<Node> {
        if self.tok == Tok::Minus {
            self.bump()?;
            return Ok(Node::Neg(Box::new(self.signed_exponent()?)));
        }
        self.pow()
    }

    fn neg(&mut self) -> Result<Node> {
        if self.tok == Tok::Minus {
            self.bump()?;
            return Ok(Node::Neg(Box::new(self.neg()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let name_offset = self.offset;
                self.bump()?;
                if let Some(rest) = name.strip_prefix('x') {
                    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = rest.parse().map_err(|_| Error::Parse {
                            offset: name_offset,
                            expected: "a coordinate index".into(),
                            found: format!("`{}`", name),
                        })?;
                        if index == 0 {
                            return Err(Error::Parse {
                                offset: name_offset,
                                expected: "a coordinate x1, x2, ...".into(),
                                found: "`x0`".into(),
                            });
                        }
                        return Ok(Node::Var(index));
                    }
                }
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "log" => Some(Func::Log),
                    "abs" => Some(Func::Abs),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    let args = self.call_args(&name, name_offset)?;
                    if args.len() != 1 {
                        return Err(Error::Parse {
                            offset: name_offset,
                            expected: format!("1 argument to `{}`", name),
                            found: format!("{} arguments", args.len()),
                        });
                    }
                    let arg = args.into_iter().next().expect("one argument");
                    return Ok(Node::Func(f, Box::new(arg)));
                }
                if name == "pow" {
                    let args = self.call_args(&name, name_offset)?;
                    if args.len() != 2 {
                        return Err(Error::Parse {
                            offset: name_offset,
                            expected: "2 arguments to `pow`".into(),
                            found: format!("{} arguments", args.len()),
                        });
                    }
                    let mut it = args.into_iter();
                    let a = it.next().expect("base");
                    let b = it.next().expect("exponent");
                    return Ok(Node::Pow(Box::new(a), Box::new(b)));
                }
                Err(Error::Parse {
                    offset: name_offset,
                    expected: "a coordinate x<k>, a function, or a number".into(),
                    found: format!("identifier `{}`", name),
                })
            }
            _ => Err(self.unexpected("a number, coordinate, function call, or `(`")),
        }
    }

    fn call_args(&mut self, name: &str, name_offset: usize) -> Result<Vec<Node>> {
        if self.tok != Tok::LParen {
            return Err(Error::Parse {
                offset: self.offset,
                expected: format!("`(` after function `{}`", name),
                found: self.tok.to_string(),
            });
        }
        self.bump()?;
        let mut args = Vec::new();
        if self.tok == Tok::RParen {
            return Err(Error::Parse {
                offset: name_offset,
                expected: format!("at least 1 argument to `{}`", name),
                found: "0 arguments".into(),
            });
        }
        loop {
            args.push(self.expr()?);
            match self.tok {
                Tok::Comma => self.bump()?,
                Tok::RParen => {
                    self.bump()?;
                    return Ok(args);
                }
                _ => return Err(self.unexpected("`,` or `)`")),
            }
        }
    }
}

fn max_var(node: &Node) -> usize {
    match node {
        Node::Num(_) => 0,
        Node::Var(k) => *k,
        Node::Neg(a) | Node::Func(_, a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            max_var(a).max(max_var(b))
        }
    }
}

impl Expression {
    /// Parses expression text. Errors carry the byte offset, what was
    /// expected, and what was found; unknown identifiers are rejected here.
    pub fn parse(src: &str) -> Result<Expression> {
        let mut p = Parser::new(src)?;
        let root = p.expr()?;
        if p.tok != Tok::End {
            return Err(p.unexpected("end of input or an operator"));
        }
        let max_var = max_var(&root);
        Ok(Expression { root, max_var })
    }

    /// Largest coordinate index referenced (0 for constant expressions).
    pub fn max_var(&self) -> usize {
        self.max_var
    }

    /// Evaluates with `vars[k-1]` bound to `x{k}`.
    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        if self.max_var > vars.len() {
            return Err(Error::VariableOutOfRange { index: self.max_var, max: vars.len() });
        }
        eval_node(&self.root, vars)
    }

    /// Evaluates at a sphere point, binding the ambient coordinates.
    ///
    /// The expression must not reference coordinates beyond x{n+1}.
    pub fn eval_on_sphere(&self, p: &SpherePoint) -> Result<f64> {
        if self.max_var > p.coords().len() {
            return Err(Error::VariableOutOfRange {
                index: self.max_var,
                max: p.coords().len(),
            });
        }
        eval_node(&self.root, p.coords())
    }
}

fn domain_err(node: &Node, message: impl Into<String>) -> Error {
    Error::EvalDomain { node: render(node, 0), message: message.into() }
}

fn eval_node(node: &Node, vars: &[f64]) -> Result<f64> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(k) => vars[*k - 1],
        Node::Neg(a) => -eval_node(a, vars)?,
        Node::Add(a, b) => eval_node(a, vars)? + eval_node(b, vars)?,
        Node::Sub(a, b) => eval_node(a, vars)? - eval_node(b, vars)?,
        Node::Mul(a, b) => eval_node(a, vars)? * eval_node(b, vars)?,
        Node::Div(a, b) => {
            let num = eval_node(a, vars)?;
            let den = eval_node(b, vars)?;
            if den == 0.0 {
                return Err(domain_err(node, "division by zero"));
            }
            num / den
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, vars)?;
            let ex = eval_node(b, vars)?;
            if base == 0.0 {
                if ex > 0.0 {
                    0.0
                } else {
                    return Err(domain_err(node, format!("0 raised to exponent {}", ex)));
                }
            } else if base < 0.0 {
                if ex.fract() == 0.0 && ex.abs() < 1e15 {
                    base.powi(ex as i32)
                } else {
                    return Err(domain_err(
                        node,
                        format!("negative base {} with non-integer exponent {}", base, ex),
                    ));
                }
            } else {
                base.powf(ex)
            }
        }
        Node::Func(f, a) => {
            let x = eval_node(a, vars)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(domain_err(node, format!("log of non-positive value {}", x)));
                    }
                    x.ln()
                }
                Func::Abs => x.abs(),
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(domain_err(node, format!("sqrt of negative value {}", x)));
                    }
                    x.sqrt()
                }
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Printing. Parenthesization follows the parser's precedence so that
// parse(print(e)) reproduces e exactly.

fn prec(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Pow(..) => 3,
        Node::Neg(..) => 4,
        Node::Num(_) | Node::Var(_) | Node::Func(..) => 5,
    }
}

fn render(node: &Node, parent_prec: u8) -> String {
    let own = prec(node);
    let body = match node {
        Node::Num(v) => {
            if *v < 0.0 || !v.is_finite() {
                // Negative literals only arise from programmatic construction;
                // print them through unary minus so the text re-parses.
                return render(&Node::Neg(Box::new(Node::Num(-*v))), parent_prec);
            }
            format_f64(*v)
        }
        Node::Var(k) => format!("x{}", k),
        Node::Neg(a) => format!("-{}", render(a, 4)),
        Node::Add(a, b) => format!("{} + {}", render(a, 1), render(b, 2)),
        Node::Sub(a, b) => format!("{} - {}", render(a, 1), render(b, 2)),
        Node::Mul(a, b) => format!("{}*{}", render(a, 2), render(b, 3)),
        Node::Div(a, b) => format!("{}/{}", render(a, 2), render(b, 3)),
        // The base must bind tighter than ^ (atoms or unary minus only); the
        // exponent re-parses through the signed-exponent rule.
        Node::Pow(a, b) => format!("{}^{}", render(a, 4), render(b, 3)),
        Node::Func(f, a) => format!("{}({})", f.name(), render(a, 0)),
    };
    if own < parent_prec {
        format!("({})", body)
    } else {
        body
    }
}

fn format_f64(v: f64) -> String {
    // Shortest representation that round-trips; integers keep a plain form.
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{}", v);
        debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
        s
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render(&self.root, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval1(src: &str, vars: &[f64]) -> f64 {
        Expression::parse(src).unwrap().eval(vars).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval1("1 + 2*3", &[]), 7.0);
        assert_eq!(eval1("2*3 + 1", &[]), 7.0);
        assert_eq!(eval1("8/4/2", &[]), 1.0);
        assert_eq!(eval1("2^3^2", &[]), 512.0);
        assert_eq!(eval1("1 - 2 - 3", &[]), -4.0);
    }

    #[test]
    fn unary_minus_convention() {
        // Unary minus binds tighter than the exponent base ...
        assert_eq!(eval1("-2^2", &[]), 4.0);
        // ... and is allowed (applied after parsing) on the right operand.
        assert_eq!(eval1("2^-2", &[]), 0.25);
        assert_eq!(eval1("-2^-2", &[]), 0.25);
        assert_eq!(eval1("2*-3", &[]), -6.0);
        assert_eq!(eval1("--5", &[]), 5.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_relative_eq!(eval1("2 + x3", &[0.0, 0.0, 1.0]), 3.0);
        assert_relative_eq!(
            eval1("sin(x1)*cos(x2) + sqrt(abs(x1))", &[0.25, 0.5]),
            0.25_f64.sin() * 0.5_f64.cos() + 0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(eval1("pow(x1, 3)", &[2.0]), 8.0);
        assert_relative_eq!(eval1("exp(log(7))", &[]), 7.0, epsilon = 1e-14);
        assert_relative_eq!(eval1("1.5e2 + 2.5e-1", &[]), 150.25);
    }

    #[test]
    fn parse_errors_carry_position_and_expectation() {
        let err = Expression::parse("2 + * 3").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected error {:?}", other),
        }
        let err = Expression::parse("2 + y1").unwrap_err();
        match err {
            Error::Parse { offset, found, .. } => {
                assert_eq!(offset, 4);
                assert!(found.contains("y1"));
            }
            other => panic!("unexpected error {:?}", other),
        }
        assert!(Expression::parse("sin(1, 2)").is_err());
        assert!(Expression::parse("pow(1)").is_err());
        assert!(Expression::parse("(1 + 2").is_err());
        assert!(Expression::parse("1 2").is_err());
        assert!(Expression::parse("x0 + 1").is_err());
        assert!(Expression::parse("").is_err());
    }

    #[test]
    fn domain_errors_name_the_offending_node() {
        let e = Expression::parse("1/(x1 - 1)").unwrap();
        match e.eval(&[1.0]).unwrap_err() {
            Error::EvalDomain { node, .. } => assert!(node.contains("x1 - 1")),
            other => panic!("unexpected error {:?}", other),
        }
        assert!(Expression::parse("log(x1)").unwrap().eval(&[0.0]).is_err());
        assert!(Expression::parse("sqrt(x1)").unwrap().eval(&[-1.0]).is_err());
        assert!(Expression::parse("x1^0.5").unwrap().eval(&[-2.0]).is_err());
        assert!(Expression::parse("0^-1").is_ok());
        assert!(Expression::parse("0^-1").unwrap().eval(&[]).is_err());
        // Integer exponents of negative bases are fine.
        assert_eq!(eval1("(-2)^3", &[]), -8.0);
    }

    #[test]
    fn variable_bounds_checked_at_eval() {
        let e = Expression::parse("x4 + 1").unwrap();
        assert_eq!(e.max_var(), 4);
        assert!(e.eval(&[0.0, 0.0, 0.0]).is_err());
        assert!(e.eval(&[0.0, 0.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn print_round_trips() {
        for src in [
            "1 + 2*3",
            "-2^2",
            "2^-2^x1",
            "(x1 + x2)*(x1 - x2)",
            "sin(x1)*cos(x2) + sqrt(abs(x3))/x4^2",
            "2 + 3*abs(x2)^1.5 - x1/(x2 + 5)",
            "pow(x1, 1.5) - 1/2",
        ] {
            let e = Expression::parse(src).unwrap();
            let printed = e.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            assert_eq!(e, reparsed, "round-trip failed: {} -> {}", src, printed);
        }
    }
}
