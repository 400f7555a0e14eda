//! Run-configuration format: nested key-value text with sections, arrays
//! and the scalar types string / number / boolean.
//!
//! ```text
//! command = "verify-solution"
//! tol = 1e-8
//!
//! [grid]
//! lo = [3.0, 0.4, 0.0]
//! hi = [10.0, 2.7, 1.0]
//! n = [20, 10, 1]
//!
//! [metric]
//! kind = "schwarzschild"
//! alpha = 1.0
//! ```
//!
//! Sections nest with dots (`[a.b]`); `#` starts a comment. Numbers parse
//! as binary64.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    Bool(bool),
    Array(Vec<Value>),
    Table(BTreeMap<String, Value>),
}

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at {}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ConfigError {}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_table(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Table(t) => Some(t),
            _ => None,
        }
    }

    /// Path lookup `a.b.c`.
    pub fn get(&self, path: &str) -> Option<&Value> {
        let mut cur = self;
        for part in path.split('.') {
            cur = cur.as_table()?.get(part)?;
        }
        Some(cur)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_inline_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.bump();
        }
    }

    fn skip_ws_and_comments(&mut self) {
        loop {
            match self.peek() {
                Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r') => {
                    self.bump();
                }
                Some(b'#') => {
                    while !matches!(self.peek(), None | Some(b'\n')) {
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn ident(&mut self) -> Result<String, ConfigError> {
        let start = self.pos;
        while matches!(
            self.peek(),
            Some(b'a'..=b'z') | Some(b'A'..=b'Z') | Some(b'0'..=b'9') | Some(b'_') | Some(b'-')
        ) {
            self.bump();
        }
        if self.pos == start {
            return Err(self.err("expected an identifier"));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| self.err("invalid utf-8 in identifier"))?
            .to_string())
    }

    fn string_lit(&mut self) -> Result<String, ConfigError> {
        self.bump(); // opening quote
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => return Ok(out),
                Some(b'\\') => match self.bump() {
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(b'n') => out.push('\n'),
                    Some(b't') => out.push('\t'),
                    other => {
                        return Err(self.err(format!("bad escape {:?}", other.map(|c| c as char))))
                    }
                },
                Some(c) => out.push(c as char),
            }
        }
    }

    fn scalar(&mut self) -> Result<Value, ConfigError> {
        self.skip_inline_ws();
        match self.peek() {
            Some(b'"') => Ok(Value::Str(self.string_lit()?)),
            Some(b'[') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_ws_and_comments();
                    if self.peek() == Some(b']') {
                        self.bump();
                        return Ok(Value::Array(items));
                    }
                    items.push(self.scalar()?);
                    self.skip_ws_and_comments();
                    match self.peek() {
                        Some(b',') => {
                            self.bump();
                        }
                        Some(b']') => {}
                        _ => return Err(self.err("expected `,` or `]` in array")),
                    }
                    if items.len() > 100_000 {
                        return Err(self.err("array too long"));
                    }
                }
            }
            Some(b't') | Some(b'f') => {
                let w = self.ident()?;
                match w.as_str() {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    other => Err(self.err(format!("unexpected word `{other}`"))),
                }
            }
            Some(c) if c == b'-' || c == b'+' || c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while matches!(
                    self.peek(),
                    Some(b'0'..=b'9')
                        | Some(b'.')
                        | Some(b'e')
                        | Some(b'E')
                        | Some(b'+')
                        | Some(b'-')
                ) {
                    self.bump();
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                text.parse::<f64>()
                    .map(Value::Num)
                    .map_err(|_| self.err(format!("malformed number `{text}`")))
            }
            other => Err(self.err(format!(
                "expected a value, found {:?}",
                other.map(|c| c as char)
            ))),
        }
    }
}

fn insert_path(
    root: &mut BTreeMap<String, Value>,
    section: &[String],
    key: String,
    value: Value,
    err: impl Fn(String) -> ConfigError,
) -> Result<(), ConfigError> {
    let mut cur = root;
    for part in section {
        let entry = cur
            .entry(part.clone())
            .or_insert_with(|| Value::Table(BTreeMap::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(err(format!("`{part}` is both a value and a section"))),
        };
    }
    if cur.insert(key.clone(), value).is_some() {
        return Err(err(format!("duplicate key `{key}`")));
    }
    Ok(())
}

/// Parse a configuration document into a table.
pub fn parse(src: &str) -> Result<Value, ConfigError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut root = BTreeMap::new();
    let mut section: Vec<String> = Vec::new();
    loop {
        p.skip_ws_and_comments();
        match p.peek() {
            None => break,
            Some(b'[') => {
                p.bump();
                let mut parts = vec![p.ident()?];
                while p.peek() == Some(b'.') {
                    p.bump();
                    parts.push(p.ident()?);
                }
                if p.peek() != Some(b']') {
                    return Err(p.err("expected `]`"));
                }
                p.bump();
                if parts.len() > 16 {
                    return Err(p.err("section nesting too deep"));
                }
                section = parts;
            }
            _ => {
                let (line, col) = (p.line, p.col);
                let key = p.ident()?;
                p.skip_inline_ws();
                if p.peek() != Some(b'=') {
                    return Err(p.err(format!("expected `=` after key `{key}`")));
                }
                p.bump();
                let value = p.scalar()?;
                p.skip_inline_ws();
                if !matches!(p.peek(), None | Some(b'\n') | Some(b'\r') | Some(b'#')) {
                    return Err(p.err("trailing characters after value"));
                }
                insert_path(&mut root, &section, key, value, |msg| ConfigError {
                    line,
                    col,
                    msg,
                })?;
            }
        }
    }
    Ok(Value::Table(root))
}
