//! Recursive-descent parser for the proxy formula grammar:
//!
//! ```text
//! expr   := term ('+' term)*
//! term   := factor ('*' factor)*
//! factor := NUMBER | IDENT | '(' expr ')'
//! ```
//!
//! `IDENT` is snake_case (`[a-z_][a-z0-9_]*`), `NUMBER` a nonnegative decimal.
//! Nested sums and products are flattened into n-ary nodes.

use super::ProxyExpr;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Star,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Star => "`*`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(pos: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        pos,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((start, Tok::Plus)),
            b'*' => out.push((start, Tok::Star)),
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac {
                        return Err(syntax(i, "expected digits after decimal point"));
                    }
                }
                let value = text[start..i].parse().map_err(|_| syntax(start, "bad number"))?;
                out.push((start, Tok::Num(value)));
                continue;
            }
            b'a'..=b'z' | b'_' => {
                while i < bytes.len() && matches!(bytes[i], b'a'..=b'z' | b'0'..=b'9' | b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<ProxyExpr> {
        let mut terms = vec![self.term()?];
        while *self.peek() == Tok::Plus {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(flatten(terms, true))
    }

    fn term(&mut self) -> Result<ProxyExpr> {
        let mut factors = vec![self.factor()?];
        while *self.peek() == Tok::Star {
            self.bump();
            factors.push(self.factor()?);
        }
        Ok(flatten(factors, false))
    }

    fn factor(&mut self) -> Result<ProxyExpr> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(n) => Ok(ProxyExpr::Const(n)),
            Tok::Ident(s) => Ok(ProxyExpr::Var(s)),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.pos();
                match self.bump() {
                    Tok::RParen => Ok(inner),
                    t => Err(syntax(close, format!("expected `)`, found {}", t.describe()))),
                }
            }
            t => Err(syntax(
                pos,
                format!("expected number, identifier or `(`, found {}", t.describe()),
            )),
        }
    }
}

fn flatten(items: Vec<ProxyExpr>, sum: bool) -> ProxyExpr {
    if items.len() == 1 {
        return items.into_iter().next().unwrap();
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match (item, sum) {
            (ProxyExpr::Sum(xs), true) | (ProxyExpr::Prod(xs), false) => out.extend(xs),
            (other, _) => out.push(other),
        }
    }
    if sum {
        ProxyExpr::Sum(out)
    } else {
        ProxyExpr::Prod(out)
    }
}

/// Constants must be weights: operands of a product that also contains a
/// non-constant factor.
fn check_weights(e: &ProxyExpr) -> Result<()> {
    match e {
        ProxyExpr::Var(_) => Ok(()),
        ProxyExpr::Const(c) => Err(Error::UnattachedConstant(*c)),
        ProxyExpr::Sum(xs) => xs.iter().try_for_each(check_weights),
        ProxyExpr::Prod(xs) => {
            if xs.iter().all(|x| matches!(x, ProxyExpr::Const(_))) {
                return Err(Error::BareNumber);
            }
            xs.iter()
                .filter(|x| !matches!(x, ProxyExpr::Const(_)))
                .try_for_each(check_weights)
        }
    }
}

pub fn parse(text: &str) -> Result<ProxyExpr> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.pos(), format!("unexpected {}", p.peek().describe())));
    }
    if let ProxyExpr::Const(_) = e {
        return Err(Error::BareNumber);
    }
    check_weights(&e)?;
    Ok(e)
}
