use thiserror::Error;

use super::{Expr, Func, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownVariable { offset, .. } => {
                *offset
            }
        }
    }
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
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            self.pos += 1;
            return Ok((tok, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut exp = end + 1;
                if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                    exp += 1;
                }
                if exp < bytes.len() && bytes[exp].is_ascii_digit() {
                    while exp < bytes.len() && bytes[exp].is_ascii_digit() {
                        exp += 1;
                    }
                    end = exp;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
            {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    n: usize,
    m: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek2(&self) -> &Tok {
        let i = (self.at + 1).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, message: &str) -> Result<(), ParseError> {
        if *self.peek() != tok {
            return self.syntax(message);
        }
        self.bump();
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() != Tok::Minus {
            return self.power();
        }
        self.bump();
        // A minus directly on a numeric literal is a negative constant, unless the
        // literal is the base of a power (`-2^2` is `-(2^2)`).
        if let Tok::Num(v) = *self.peek() {
            if *self.peek2() != Tok::Caret {
                self.bump();
                return Ok(Expr::Const(-v));
            }
        }
        Ok(Expr::Neg(Box::new(self.unary()?)))
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        match *self.peek() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                self.bump();
                Ok(Expr::Pow(Box::new(base), v as u32))
            }
            _ => self.syntax("exponent must be a non-negative integer literal"),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        if matches!(self.peek(), Tok::End) {
            return self.syntax("unexpected end of input");
        }
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "expected `)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    self.expect(Tok::LParen, &format!("expected `(` after `{name}`"))?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "expected `)`")?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                self.variable(&name, offset).map(Expr::Var)
            }
            other => Err(ParseError::Syntax {
                offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Var, ParseError> {
        let unknown = || ParseError::UnknownVariable {
            name: name.to_string(),
            offset,
        };
        let (kind, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0')
        {
            return Err(unknown());
        }
        let index: usize = digits.parse().map_err(|_| unknown())?;
        match kind {
            "x" if index <= self.n => Ok(Var::State(index - 1)),
            "u" if index <= self.m => Ok(Var::Input(index - 1)),
            _ => Err(unknown()),
        }
    }
}

/// Parses `text` with state dimension `n` and input dimension `m`.
pub fn parse_expression(text: &str, n: usize, m: usize) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(text)?;
    let mut parser = Parser { toks, at: 0, n, m };
    let e = parser.expr()?;
    if *parser.peek() != Tok::End {
        return parser.syntax(format!("unexpected trailing token {:?}", parser.peek()));
    }
    Ok(e)
}

/// Parses an expression that may only reference the state variables `x1..xn`.
pub fn parse_state_expression(text: &str, n: usize) -> Result<Expr, ParseError> {
    parse_expression(text, n, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(v: Var) -> Box<Expr> {
        Box::new(Expr::Var(v))
    }

    #[test]
    fn parses_grammar_examples() {
        assert_eq!(
            parse_expression("-x1 + u1", 1, 1).unwrap(),
            Expr::Add(
                Box::new(Expr::Neg(var(Var::State(0)))),
                var(Var::Input(0))
            )
        );
        assert_eq!(
            parse_expression("x1^2", 1, 1).unwrap(),
            Expr::Pow(var(Var::State(0)), 2)
        );
    }

    #[test]
    fn rejects_out_of_range_input() {
        let err = parse_expression("x3 + u9", 3, 2).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownVariable {
                name: "u9".into(),
                offset: 5
            }
        );
    }

    #[test]
    fn rejects_unknown_identifiers() {
        assert!(matches!(
            parse_expression("y1", 2, 1),
            Err(ParseError::UnknownVariable { .. })
        ));
        assert!(matches!(
            parse_expression("x0", 2, 1),
            Err(ParseError::UnknownVariable { .. })
        ));
        assert!(matches!(
            parse_expression("u1", 2, 0),
            Err(ParseError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn syntax_errors_report_offset() {
        let err = parse_expression("x1 + * 2", 1, 0).unwrap_err();
        assert_eq!(err.offset(), 5);
        let err = parse_expression("(x1 + 2", 1, 0).unwrap_err();
        assert_eq!(err.offset(), 7);
        let err = parse_expression("x1^1.5", 1, 0).unwrap_err();
        assert_eq!(err.offset(), 3);
        assert!(parse_expression("x1 $ 2", 1, 0).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expression("1 - 2 - 3 * 4 / 2", 1, 0).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), -7.0);
        let e = parse_expression("-2^2", 1, 0).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), -4.0);
        let e = parse_expression("(-2)^2", 1, 0).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), 4.0);
        let e = parse_expression("2.5e-1 * x1", 1, 0).unwrap();
        assert_eq!(e.eval(&[4.0], &[]).unwrap(), 1.0);
    }

    #[test]
    fn negative_literal_is_a_constant() {
        assert_eq!(parse_expression("-3", 1, 0).unwrap(), Expr::Const(-3.0));
        assert_eq!(
            parse_expression("-(3)", 1, 0).unwrap(),
            Expr::Neg(Box::new(Expr::Const(3.0)))
        );
    }
}
