//! Infix expression grammar for scalar fields in run configurations.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          (right associative)
//! atom    := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: exp, log, sin, cos, sinh, cosh, tanh, sqrt, abs.
//! Named constants: pi, e. Every other name must be a chart coordinate.

use crate::error::FieldError;
use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    fn by_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        match self {
            Expr::Num(c) => Jet::constant(vars[0].dim(), vars[0].order(), *c),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Add(a, b) => a.eval_jet(vars).add(&b.eval_jet(vars)),
            Expr::Sub(a, b) => a.eval_jet(vars).sub(&b.eval_jet(vars)),
            Expr::Mul(a, b) => a.eval_jet(vars).mul(&b.eval_jet(vars)),
            Expr::Div(a, b) => a.eval_jet(vars).div(&b.eval_jet(vars)),
            Expr::Neg(a) => a.eval_jet(vars).neg(),
            Expr::Pow(a, b) => {
                let base = a.eval_jet(vars);
                match b.as_ref() {
                    Expr::Num(p) => base.powf(*p),
                    Expr::Neg(inner) => match inner.as_ref() {
                        Expr::Num(p) => base.powf(-*p),
                        _ => base.ln().mul(&b.eval_jet(vars)).exp(),
                    },
                    _ => base.ln().mul(&b.eval_jet(vars)).exp(),
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval_jet(vars);
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh(),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs => x.abs(),
                }
            }
        }
    }

    /// Collect chart variables actually referenced.
    pub fn used_vars(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.used_vars(out);
                b.used_vars(out);
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.used_vars(out),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
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

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> FieldError {
        FieldError::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn next_tok(&mut self) -> Result<Spanned, FieldError> {
        while matches!(self.peek(), Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r')) {
            self.bump();
        }
        let (line, col) = (self.line, self.col);
        let mk = |tok| Spanned { tok, line, col };
        let c = match self.peek() {
            None => return Ok(mk(Tok::End)),
            Some(c) => c,
        };
        let tok = match c {
            b'+' => {
                self.bump();
                Tok::Plus
            }
            b'-' => {
                self.bump();
                Tok::Minus
            }
            b'*' => {
                self.bump();
                Tok::Star
            }
            b'/' => {
                self.bump();
                Tok::Slash
            }
            b'^' => {
                self.bump();
                Tok::Caret
            }
            b'(' => {
                self.bump();
                Tok::LParen
            }
            b')' => {
                self.bump();
                Tok::RParen
            }
            b',' => {
                self.bump();
                Tok::Comma
            }
            b'0'..=b'9' | b'.' => {
                let start = self.pos;
                while matches!(self.peek(), Some(b'0'..=b'9') | Some(b'.')) {
                    self.bump();
                }
                if matches!(self.peek(), Some(b'e') | Some(b'E')) {
                    let save = (self.pos, self.line, self.col);
                    self.bump();
                    if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                        self.bump();
                    }
                    if matches!(self.peek(), Some(b'0'..=b'9')) {
                        while matches!(self.peek(), Some(b'0'..=b'9')) {
                            self.bump();
                        }
                    } else {
                        (self.pos, self.line, self.col) = save;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text
                    .parse()
                    .map_err(|_| self.err(format!("malformed number `{text}`")))?;
                Tok::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = self.pos;
                while matches!(
                    self.peek(),
                    Some(b'a'..=b'z') | Some(b'A'..=b'Z') | Some(b'_') | Some(b'0'..=b'9')
                ) {
                    self.bump();
                }
                Tok::Name(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_owned())
            }
            other => return Err(self.err(format!("unexpected character `{}`", other as char))),
        };
        Ok(mk(tok))
    }
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    vars: &'a [String],
    depth: usize,
}

const MAX_DEPTH: usize = 200;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos.min(self.toks.len() - 1)].clone();
        if self.pos < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, s: &Spanned, msg: impl Into<String>) -> FieldError {
        FieldError::Parse {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, FieldError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let s = self.peek().clone();
            self.depth -= 1;
            return Err(self.err_at(&s, "expression too deeply nested"));
        }
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, FieldError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FieldError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let s = self.peek().clone();
            self.depth -= 1;
            return Err(self.err_at(&s, "expression too deeply nested"));
        }
        let r = if self.peek().tok == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        };
        self.depth -= 1;
        r
    }

    fn power(&mut self) -> Result<Expr, FieldError> {
        let base = self.atom()?;
        if self.peek().tok == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, FieldError> {
        let t = self.bump();
        match t.tok.clone() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                let close = self.bump();
                if close.tok != Tok::RParen {
                    return Err(self.err_at(&close, "expected `)`"));
                }
                Ok(e)
            }
            Tok::Name(name) => {
                if self.peek().tok == Tok::LParen {
                    let f = Func::by_name(&name)
                        .ok_or_else(|| self.err_at(&t, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.expr()?;
                    let close = self.bump();
                    if close.tok != Tok::RParen {
                        return Err(self.err_at(&close, "expected `)` after function argument"));
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => {
                        if let Some(i) = self.vars.iter().position(|v| v == &name) {
                            Ok(Expr::Var(i))
                        } else {
                            Err(self.err_at(&t, format!("unknown coordinate `{name}`")))
                        }
                    }
                }
            }
            Tok::End => Err(self.err_at(&t, "unexpected end of expression")),
            other => Err(self.err_at(&t, format!("unexpected token {other:?}"))),
        }
    }
}

/// Parse an infix expression against the given coordinate names.
pub fn parse(src: &str, coordinate_names: &[String]) -> Result<Expr, FieldError> {
    let mut lx = Lexer::new(src);
    let mut toks = Vec::new();
    loop {
        let t = lx.next_tok()?;
        let end = t.tok == Tok::End;
        toks.push(t);
        if end {
            break;
        }
    }
    let mut p = Parser {
        toks,
        pos: 0,
        vars: coordinate_names,
        depth: 0,
    };
    let e = p.expr()?;
    let tail = p.bump();
    if tail.tok != Tok::End {
        return Err(FieldError::Parse {
            line: tail.line,
            col: tail.col,
            msg: format!("trailing input {:?}", tail.tok),
        });
    }
    Ok(e)
}
