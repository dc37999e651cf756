//! Problem-file and expression parsing.
//!
//! The file grammar (UTF-8 text, `#` starts a comment):
//!
//! ```text
//! dims: n=<int> m=<int>
//! F = <expr>
//! f = <expr>
//! G = [ <expr> ; <expr> ; ... ]      # optional, each row means G_i <= 0
//! g = [ <expr> ; ... ]               # optional, each row means g_i <= 0
//! box: y in [<lo>,<hi>]^m            # optional lower-level search box
//! ```
//!
//! Expressions are whitespace-insensitive with standard precedence; `^` is
//! reserved for integer or rational literal exponents so that every parsed
//! tree has a closed-form derivative.

use super::ast::{Expr, SrcLoc, UnaryFn, VarKind};
use super::ParseError;
use crate::model::BilevelProgram;

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
    LBracket,
    RBracket,
    Semi,
    Comma,
    Eq,
    Colon,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(text: &str, start_line: u32) -> Result<Vec<Spanned>, ParseError> {
    let mut toks = Vec::new();
    let mut line = start_line;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let bump = |chars: &mut std::iter::Peekable<std::str::Chars>, col: &mut u32| {
            chars.next();
            *col += 1;
        };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => bump(&mut chars, &mut col),
            '#' => {
                // comment to end of line
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars, &mut col);
                }
            }
            '+' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Plus, line: tline, col: tcol });
            }
            '-' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Minus, line: tline, col: tcol });
            }
            '*' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Star, line: tline, col: tcol });
            }
            '/' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Slash, line: tline, col: tcol });
            }
            '^' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Caret, line: tline, col: tcol });
            }
            '(' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::LParen, line: tline, col: tcol });
            }
            ')' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::RParen, line: tline, col: tcol });
            }
            '[' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::LBracket, line: tline, col: tcol });
            }
            ']' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::RBracket, line: tline, col: tcol });
            }
            ';' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Semi, line: tline, col: tcol });
            }
            ',' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Comma, line: tline, col: tcol });
            }
            '=' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Eq, line: tline, col: tcol });
            }
            ':' => {
                bump(&mut chars, &mut col);
                toks.push(Spanned { tok: Tok::Colon, line: tline, col: tcol });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut s = String::new();
                let mut seen_dot = false;
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || (c == '.' && !seen_dot) {
                        seen_dot |= c == '.';
                        s.push(c);
                        bump(&mut chars, &mut col);
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    line: tline,
                    col: tcol,
                    msg: format!("bad number literal `{}`", s),
                })?;
                toks.push(Spanned { tok: Tok::Num(v), line: tline, col: tcol });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        bump(&mut chars, &mut col);
                    } else {
                        break;
                    }
                }
                toks.push(Spanned { tok: Tok::Ident(s), line: tline, col: tcol });
            }
            other => {
                return Err(ParseError::Syntax {
                    line: tline,
                    col: tcol,
                    msg: format!("unexpected character `{}`", other),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    n: usize,
    m: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (u32, u32) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax { line, col, msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Spanned, ParseError> {
        match self.next() {
            Some(s) if s.tok == tok => Ok(s),
            Some(s) => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected {}, found {:?}", what, s.tok),
            }),
            None => Err(self.err(format!("expected {}, found end of input", what))),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Plus => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Star => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    let loc = SrcLoc::new(s.line, s.col);
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.unary()?), loc);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    // unary := '-' unary | power; a minus directly on a literal folds into
    // the constant so printed trees reparse to the same structure
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(s) = self.peek() {
            if s.tok == Tok::Minus {
                self.pos += 1;
                return Ok(match self.unary()? {
                    Expr::Const(c) => Expr::Const(-c),
                    inner => Expr::Neg(Box::new(inner)),
                });
            }
        }
        self.power()
    }

    // power := atom ('^' exponent)?
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(s) = self.peek() {
            if s.tok == Tok::Caret {
                let loc = SrcLoc::new(s.line, s.col);
                self.pos += 1;
                let (num, den) = self.exponent()?;
                if den % 2 == 0 && !matches!(base, Expr::Unary { func: UnaryFn::Abs, .. }) {
                    return Err(ParseError::Exponent { line: loc.line, col: loc.col });
                }
                return Ok(Expr::Pow { base: Box::new(base), num, den, loc });
            }
        }
        Ok(base)
    }

    // exponent := ['-'] int | '(' ['-'] int ['/' int] ')'
    fn exponent(&mut self) -> Result<(i64, i64), ParseError> {
        let mut sign = 1i64;
        let parenthesized = matches!(self.peek().map(|s| &s.tok), Some(Tok::LParen));
        if parenthesized {
            self.pos += 1;
        }
        if matches!(self.peek().map(|s| &s.tok), Some(Tok::Minus)) {
            sign = -1;
            self.pos += 1;
        }
        let num = sign * self.int_literal("exponent numerator")?;
        let mut den = 1i64;
        if parenthesized && matches!(self.peek().map(|s| &s.tok), Some(Tok::Slash)) {
            self.pos += 1;
            den = self.int_literal("exponent denominator")?;
            if den == 0 {
                return Err(self.err("exponent denominator must be nonzero"));
            }
        }
        if parenthesized {
            self.expect(Tok::RParen, "`)` after exponent")?;
        }
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        Ok((num / g, den / g))
    }

    fn int_literal(&mut self, what: &str) -> Result<i64, ParseError> {
        match self.next() {
            Some(Spanned { tok: Tok::Num(v), line, col }) => {
                if v.fract() != 0.0 || v.abs() > i64::MAX as f64 {
                    Err(ParseError::Syntax {
                        line,
                        col,
                        msg: format!("{} must be an integer literal", what),
                    })
                } else {
                    Ok(v as i64)
                }
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err(format!("expected {}", what)))
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let s = self.next().ok_or_else(|| self.err("unexpected end of expression"))?;
        match s.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let loc = SrcLoc::new(s.line, s.col);
                let func = match name.as_str() {
                    "sqrt" => Some(None),
                    "sin" => Some(Some(UnaryFn::Sin)),
                    "cos" => Some(Some(UnaryFn::Cos)),
                    "exp" => Some(Some(UnaryFn::Exp)),
                    "log" => Some(Some(UnaryFn::Log)),
                    "abs" => Some(Some(UnaryFn::Abs)),
                    _ => None,
                };
                if let Some(func) = func {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)` closing function call")?;
                    return Ok(match func {
                        None => Expr::Sqrt(Box::new(arg), loc),
                        Some(f) => Expr::Unary { func: f, arg: Box::new(arg), loc },
                    });
                }
                self.variable(&name, s.line, s.col)
            }
            other => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("unexpected token {:?} in expression", other),
            }),
        }
    }

    fn variable(&self, name: &str, line: u32, col: u32) -> Result<Expr, ParseError> {
        let (kind, rest) = match name.split_at(1) {
            ("x", rest) => (VarKind::X, rest),
            ("y", rest) => (VarKind::Y, rest),
            _ => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("unknown identifier `{}`", name),
                })
            }
        };
        let index: usize = rest.parse().map_err(|_| ParseError::Syntax {
            line,
            col,
            msg: format!("variable must be x<i> or y<i>, got `{}`", name),
        })?;
        let dim = match kind {
            VarKind::X => self.n,
            VarKind::Y => self.m,
        };
        if index == 0 || index > dim {
            return Err(ParseError::Dimension { line, col, var: name.to_string() });
        }
        Ok(Expr::Var { kind, index })
    }
}

/// Parse a single expression against known dimensions. `start_line` feeds
/// source locations for error reporting.
pub fn parse_expr_at(text: &str, n: usize, m: usize, start_line: u32) -> Result<Expr, ParseError> {
    let toks = lex(text, start_line)?;
    let mut p = Parser { toks, pos: 0, n, m };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

/// Parse a standalone expression (line numbers start at 1).
pub fn parse_expr(text: &str, n: usize, m: usize) -> Result<Expr, ParseError> {
    parse_expr_at(text, n, m, 1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One logical `key = payload` item of the problem file.
struct Section {
    key: String,
    payload: String,
    line: u32,
}

/// Split the file into sections. A section starts at a line whose first
/// token is one of the known keys; bracketed payloads may span lines.
fn split_sections(text: &str) -> Result<Vec<Section>, ParseError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let trimmed = line.trim_start();
        let indent = (line.len() - trimmed.len()) as u32;
        let is_key = ["dims", "F", "f", "G", "g", "box"].iter().any(|k| {
            trimmed.starts_with(k)
                && matches!(
                    trimmed[k.len()..].trim_start().chars().next(),
                    Some('=') | Some(':')
                )
        });
        if is_key {
            let (key, rest) = trimmed.split_at(trimmed.find(['=', ':']).unwrap());
            sections.push(Section {
                key: key.trim().to_string(),
                // keep the separator out, preserve column offsets loosely
                payload: format!("{}\n", &rest[1..]),
                line: line_no,
            });
            let _ = indent;
        } else if let Some(last) = sections.last_mut() {
            // continuation line of a bracketed list
            last.payload.push_str(line);
            last.payload.push('\n');
        } else {
            return Err(ParseError::Syntax {
                line: line_no,
                col: 1,
                msg: "expected a section key (dims, F, f, G, g, box)".to_string(),
            });
        }
    }
    Ok(sections)
}

fn parse_dims(payload: &str, line: u32) -> Result<(usize, usize), ParseError> {
    let toks = lex(payload, line)?;
    let mut p = Parser { toks, pos: 0, n: 0, m: 0 };
    let mut n = None;
    let mut m = None;
    while p.peek().is_some() {
        let s = p.next().unwrap();
        let name = match s.tok {
            Tok::Ident(name) => name,
            other => {
                return Err(ParseError::Syntax {
                    line: s.line,
                    col: s.col,
                    msg: format!("expected `n` or `m`, found {:?}", other),
                })
            }
        };
        p.expect(Tok::Eq, "`=`")?;
        let v = p.int_literal("dimension")?;
        if v < 0 {
            return Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: "dimensions must be nonnegative".to_string(),
            });
        }
        match name.as_str() {
            "n" => n = Some(v as usize),
            "m" => m = Some(v as usize),
            other => {
                return Err(ParseError::Syntax {
                    line: s.line,
                    col: s.col,
                    msg: format!("unknown dimension `{}`", other),
                })
            }
        }
    }
    match (n, m) {
        (Some(n), Some(m)) => Ok((n, m)),
        _ => Err(ParseError::Syntax {
            line,
            col: 1,
            msg: "dims must declare both n and m".to_string(),
        }),
    }
}

/// `[ lo , hi ] ^ m` after `box: y in`.
fn parse_box(payload: &str, line: u32, m: usize) -> Result<Vec<(f64, f64)>, ParseError> {
    let toks = lex(payload, line)?;
    let mut p = Parser { toks, pos: 0, n: 0, m: 0 };
    match p.next() {
        Some(Spanned { tok: Tok::Ident(s), .. }) if s == "y" => {}
        _ => return Err(p.err("box section must start with `y in [lo,hi]^m`")),
    }
    match p.next() {
        Some(Spanned { tok: Tok::Ident(s), .. }) if s == "in" => {}
        _ => return Err(p.err("expected `in` in box section")),
    }
    p.expect(Tok::LBracket, "`[`")?;
    let lo = p.signed_number()?;
    p.expect(Tok::Comma, "`,`")?;
    let hi = p.signed_number()?;
    p.expect(Tok::RBracket, "`]`")?;
    p.expect(Tok::Caret, "`^`")?;
    let k = p.int_literal("box power")?;
    if k as usize != m {
        return Err(p.err(format!("box power must equal m={}", m)));
    }
    if !(lo < hi) {
        return Err(p.err("box requires lo < hi"));
    }
    Ok(vec![(lo, hi); m])
}

impl Parser {
    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let mut sign = 1.0;
        if matches!(self.peek().map(|s| &s.tok), Some(Tok::Minus)) {
            self.pos += 1;
            sign = -1.0;
        }
        match self.next() {
            Some(Spanned { tok: Tok::Num(v), .. }) => Ok(sign * v),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected a number"))
            }
        }
    }
}

fn parse_expr_list(payload: &str, line: u32, n: usize, m: usize) -> Result<Vec<Expr>, ParseError> {
    let toks = lex(payload, line)?;
    let mut p = Parser { toks, pos: 0, n, m };
    p.expect(Tok::LBracket, "`[` opening constraint list")?;
    let mut rows = Vec::new();
    if matches!(p.peek().map(|s| &s.tok), Some(Tok::RBracket)) {
        p.pos += 1;
        return Ok(rows);
    }
    loop {
        rows.push(p.expr()?);
        match p.next() {
            Some(Spanned { tok: Tok::Semi, .. }) => continue,
            Some(Spanned { tok: Tok::RBracket, .. }) => break,
            _ => {
                p.pos = p.pos.saturating_sub(1);
                return Err(p.err("expected `;` or `]` in constraint list"));
            }
        }
    }
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input after constraint list"));
    }
    Ok(rows)
}

/// Parse a problem file into a validated [`BilevelProgram`].
pub fn parse_program(text: &str) -> Result<BilevelProgram, ParseError> {
    let sections = split_sections(text)?;
    let dims = sections
        .iter()
        .find(|s| s.key == "dims")
        .ok_or(ParseError::Syntax { line: 1, col: 1, msg: "missing dims section".to_string() })?;
    let (n, m) = parse_dims(&dims.payload, dims.line)?;

    let mut upper = None;
    let mut lower = None;
    let mut upper_cons: Option<Vec<Expr>> = None;
    let mut lower_cons: Option<Vec<Expr>> = None;
    let mut y_box = None;
    for s in &sections {
        match s.key.as_str() {
            "dims" => {}
            "F" => upper = Some(parse_expr_at(&s.payload, n, m, s.line)?),
            "f" => lower = Some(parse_expr_at(&s.payload, n, m, s.line)?),
            "G" => upper_cons = Some(parse_expr_list(&s.payload, s.line, n, m)?),
            "g" => lower_cons = Some(parse_expr_list(&s.payload, s.line, n, m)?),
            "box" => y_box = Some(parse_box(&s.payload, s.line, m)?),
            other => {
                return Err(ParseError::Syntax {
                    line: s.line,
                    col: 1,
                    msg: format!("unknown section `{}`", other),
                })
            }
        }
    }
    let upper = upper.ok_or(ParseError::Syntax {
        line: 1,
        col: 1,
        msg: "missing F section".to_string(),
    })?;
    let lower = lower.ok_or(ParseError::Syntax {
        line: 1,
        col: 1,
        msg: "missing f section".to_string(),
    })?;
    Ok(BilevelProgram::new(
        n,
        m,
        upper,
        lower,
        upper_cons.unwrap_or_default(),
        lower_cons.unwrap_or_default(),
        y_box,
    ))
}
