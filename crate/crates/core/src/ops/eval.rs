//! Expression and script evaluation over ops.
//!
//! ```text
//! script  := stmt (SEP stmt)*            SEP is a newline or ';'
//! stmt    := IDENT '=' expr | expr
//! expr    := term (('+'|'-') term)*
//! term    := unary (('*'|'/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | STRING | IDENT | IDENT '(' args ')' | '(' expr ')'
//! args    := (expr (',' expr)*)?
//! ```
//!
//! Infix operators dispatch to `math.add`, `math.sub`, `math.mul` and
//! `math.div`, unary minus to `math.neg`, and calls to whatever op the name
//! matches. Numbers are float64. Identifiers may contain dots. `#` starts a
//! comment that runs to the end of the line. Newlines inside parentheses do
//! not separate statements.

use std::collections::BTreeMap;

use super::run;
use crate::container::Context;
use crate::error::{Error, Result};
use crate::value::Value;

pub type Bindings = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    Assign,
    Sep,
    Eof,
}

fn parse_error(pos: Pos, message: impl Into<String>) -> Error {
    Error::Parse {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn advance(n: usize, i: &mut usize, col: &mut usize) {
    *i += n;
    *col += n;
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let mut depth = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        match c {
            '\n' => {
                if depth == 0 {
                    out.push((Tok::Sep, pos));
                }
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(1, &mut i, &mut col);
                }
            }
            ';' => {
                out.push((Tok::Sep, pos));
                advance(1, &mut i, &mut col);
            }
            '+' | '-' | '*' | '/' => {
                out.push((Tok::Op(c), pos));
                advance(1, &mut i, &mut col);
            }
            '(' => {
                depth += 1;
                out.push((Tok::LParen, pos));
                advance(1, &mut i, &mut col);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                out.push((Tok::RParen, pos));
                advance(1, &mut i, &mut col);
            }
            ',' => {
                out.push((Tok::Comma, pos));
                advance(1, &mut i, &mut col);
            }
            '=' => {
                out.push((Tok::Assign, pos));
                advance(1, &mut i, &mut col);
            }
            '"' => {
                let mut s = String::new();
                advance(1, &mut i, &mut col);
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(parse_error(pos, "unterminated string literal")),
                        Some('"') => {
                            advance(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => {
                            let escaped = match chars.get(i + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                _ => return Err(parse_error(Pos { line, column: col }, "unknown escape sequence")),
                            };
                            s.push(escaped);
                            advance(2, &mut i, &mut col);
                        }
                        Some(&ch) => {
                            s.push(ch);
                            advance(1, &mut i, &mut col);
                        }
                    }
                }
                out.push((Tok::Str(s), pos));
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    advance(1, &mut i, &mut col);
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        let n = j - i;
                        advance(n, &mut i, &mut col);
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| parse_error(pos, format!("malformed number `{text}`")))?;
                out.push((Tok::Num(v), pos));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    advance(1, &mut i, &mut col);
                }
                let text: String = chars[start..i].iter().collect();
                if text.ends_with('.') {
                    return Err(parse_error(pos, format!("identifier `{text}` ends with a dot")));
                }
                out.push((Tok::Ident(text), pos));
            }
            other => return Err(parse_error(pos, format!("unexpected character `{other}`"))),
        }
    }
    out.push((Tok::Eof, Pos { line, column: col }));
    Ok(out)
}

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Str(String),
    Var(String),
    Call(String, Vec<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Clone, Debug)]
enum Stmt {
    Assign(String, Expr),
    Expr(Expr),
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(parse_error(self.pos(), format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn script(&mut self) -> Result<Vec<Stmt>> {
        let mut stmts = Vec::new();
        loop {
            while *self.peek() == Tok::Sep {
                self.bump();
            }
            if *self.peek() == Tok::Eof {
                return Ok(stmts);
            }
            stmts.push(self.stmt()?);
            match self.peek() {
                Tok::Sep | Tok::Eof => {}
                other => {
                    return Err(parse_error(self.pos(), format!("expected end of statement, found {}", describe(other))))
                }
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        if let (Tok::Ident(name), Some((Tok::Assign, _))) = (self.peek().clone(), self.toks.get(self.at + 1)) {
            self.bump();
            self.bump();
            return Ok(Stmt::Assign(name, self.expr()?));
        }
        Ok(Stmt::Expr(self.expr()?))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(op @ ('+' | '-')) = *self.peek() {
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(op @ ('*' | '/')) = *self.peek() {
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::Ident(name) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                self.bump();
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    args.push(self.expr()?);
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                }
                self.expect(Tok::RParen, "`)` closing the argument list")?;
                Ok(Expr::Call(name, args))
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            other => Err(parse_error(pos, format!("expected a value, found {}", describe(&other)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Str(_) => "string literal".into(),
        Tok::Ident(n) => format!("identifier `{n}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Assign => "`=`".into(),
        Tok::Sep => "end of statement".into(),
        Tok::Eof => "end of input".into(),
    }
}

fn evaluate(ctx: &Context, e: &Expr, b: &Bindings) -> Result<Value> {
    Ok(match e {
        Expr::Num(v) => Value::Float64(*v),
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Var(name) => b.get(name).cloned().ok_or_else(|| Error::Unbound(name.clone()))?,
        Expr::Neg(inner) => run(ctx, "math.neg", vec![evaluate(ctx, inner, b)?])?,
        Expr::Bin(op, l, r) => {
            let name = match op {
                '+' => "math.add",
                '-' => "math.sub",
                '*' => "math.mul",
                _ => "math.div",
            };
            run(ctx, name, vec![evaluate(ctx, l, b)?, evaluate(ctx, r, b)?])?
        }
        Expr::Call(name, args) => {
            let args = args.iter().map(|a| evaluate(ctx, a, b)).collect::<Result<Vec<_>>>()?;
            run(ctx, name, args)?
        }
    })
}

/// A parsed script.
#[derive(Clone, Debug)]
pub struct Script {
    stmts: Vec<Stmt>,
}

impl Script {
    pub fn parse(src: &str) -> Result<Self> {
        let toks = lex(src)?;
        let stmts = Parser { toks, at: 0 }.script()?;
        Ok(Self { stmts })
    }

    /// Names assigned anywhere in the script, in order of first assignment.
    pub fn assigned_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.stmts {
            if let Stmt::Assign(n, _) = s {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        names
    }

    /// Runs every statement; assignments update `bindings`. Returns the
    /// value of the last statement, if any.
    pub fn run(&self, ctx: &Context, bindings: &mut Bindings) -> Result<Option<Value>> {
        let mut last = None;
        for s in &self.stmts {
            last = Some(match s {
                Stmt::Assign(name, e) => {
                    let v = evaluate(ctx, e, bindings)?;
                    bindings.insert(name.clone(), v.clone());
                    v
                }
                Stmt::Expr(e) => evaluate(ctx, e, bindings)?,
            });
        }
        Ok(last)
    }
}

/// Evaluates a single expression.
pub fn eval(ctx: &Context, expression: &str, bindings: &Bindings) -> Result<Value> {
    let toks = lex(expression)?;
    let mut p = Parser { toks, at: 0 };
    while *p.peek() == Tok::Sep {
        p.bump();
    }
    let e = p.expr()?;
    while *p.peek() == Tok::Sep {
        p.bump();
    }
    if *p.peek() != Tok::Eof {
        return Err(parse_error(p.pos(), format!("unexpected {} after expression", describe(p.peek()))));
    }
    evaluate(ctx, &e, bindings)
}

/// Parses and runs a script in one step.
pub fn eval_script(ctx: &Context, src: &str, bindings: &mut Bindings) -> Result<Option<Value>> {
    Script::parse(src)?.run(ctx, bindings)
}
