use thiserror::Error;

use super::{Expression, Func, Var};
use crate::error::Component;
use crate::system::Dims;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

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
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, line: tl, column: tc });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
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
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| ParseError {
                line: tl,
                column: tc,
                message: format!("malformed number '{text}'"),
            })?;
            col += i - start;
            out.push(Token { tok: Tok::Num(v), line: tl, column: tc });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Ident(text), line: tl, column: tc });
            continue;
        }
        return Err(ParseError {
            line: tl,
            column: tc,
            message: format!("unexpected character '{c}'"),
        });
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    dims: Dims,
    _src: &'a str,
}

type PResult = Result<Expression, ParseError>;

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>) -> ParseError {
        ParseError {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn expr(&mut self) -> PResult {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Expression::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expression::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> PResult {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Expression::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expression::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> PResult {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> PResult {
        let base = self.primary()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.peek().clone();
        let exponent = self.exponent()?;
        if !exponent.is_constant() {
            return Err(self.error_at(&at, "exponent must be a constant expression"));
        }
        Ok(Expression::Pow(Box::new(base), Box::new(exponent)))
    }

    // Right-associative; a leading minus is allowed (x^-1).
    fn exponent(&mut self) -> PResult {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expression::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn primary(&mut self) -> PResult {
        let t = self.bump();
        match &t.tok {
            Tok::Num(v) => Ok(Expression::Num(*v)),
            Tok::LParen => {
                let e = self.expr()?;
                let close = self.bump();
                if close.tok != Tok::RParen {
                    return Err(self.error_at(&close, "expected ')'"));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    let open = self.bump();
                    if open.tok != Tok::LParen {
                        return Err(self.error_at(&open, format!("expected '(' after {name}")));
                    }
                    let arg = self.expr()?;
                    let close = self.bump();
                    if close.tok != Tok::RParen {
                        return Err(self.error_at(&close, "expected ')'"));
                    }
                    return Ok(Expression::Call(func, Box::new(arg)));
                }
                self.variable(name)
                    .map(Expression::Var)
                    .ok_or_else(|| self.error_at(&t, format!("unknown identifier '{name}'")))
            }
            Tok::RParen => Err(self.error_at(&t, "unbalanced ')'")),
            Tok::Eof => Err(self.error_at(&t, "unexpected end of input")),
            other => Err(self.error_at(&t, format!("unexpected token {other:?}"))),
        }
    }

    fn variable(&self, name: &str) -> Option<Var> {
        let mut chars = name.chars();
        let component = match chars.next()? {
            'x' => Component::X,
            'y' => Component::Y,
            'z' => Component::Z,
            _ => return None,
        };
        let digits = chars.as_str();
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) || digits.starts_with('0') {
            return None;
        }
        let k: usize = digits.parse().ok()?;
        (k >= 1 && k <= self.dims.of(component)).then(|| Var::new(component, k - 1))
    }
}

/// Parses `source` with variables `x1..x{n_x}`, `y1..y{n_y}`, `z1..z{n_z}` in scope.
///
/// Precedence, tightest first: `^` (right-assoc), unary `-`, `* /`, `+ -`.
pub fn parse(source: &str, dims: Dims) -> Result<Expression, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        dims,
        _src: source,
    };
    if p.peek().tok == Tok::Eof {
        let t = p.peek().clone();
        return Err(p.error_at(&t, "empty expression"));
    }
    let e = p.expr()?;
    let t = p.peek().clone();
    match t.tok {
        Tok::Eof => Ok(e),
        Tok::RParen => Err(p.error_at(&t, "unbalanced ')'")),
        _ => Err(p.error_at(&t, "unexpected trailing input")),
    }
}
