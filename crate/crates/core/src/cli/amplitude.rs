//! Exact amplitude expressions such as `1/sqrt(3)`, `-sqrt(2/3)*i`.
//!
//! ```text
//! expr     := term (('*' | '/') term)*
//! term     := ['-'] (rational | 'sqrt(' ['-'] rational ')' | 'i')
//! rational := int ['/' int]
//! ```
//!
//! A `/` written flush between two integers belongs to a rational literal,
//! so `1/2/3` is the rational `1/2` divided by `3` and `1 / 2` is a quotient.

use std::fmt;

use crate::error::{Error, Result};
use crate::qcore::Amplitude;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    Rational(Rational),
    Sqrt(Rational),
    Imaginary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub negated: bool,
    pub atom: Atom,
}

impl Term {
    fn value(self) -> Amplitude {
        let v = match self.atom {
            Atom::Rational(r) => Amplitude::new(r.value(), 0.0),
            Atom::Sqrt(r) => Amplitude::new(r.value().sqrt(), 0.0),
            Atom::Imaginary => Amplitude::new(0.0, 1.0),
        };
        if self.negated {
            -v
        } else {
            v
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("-")?;
        }
        match self.atom {
            Atom::Rational(r) => write!(f, "{r}"),
            Atom::Sqrt(r) => write!(f, "sqrt({r})"),
            Atom::Imaginary => f.write_str("i"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmplitudeExpr {
    pub first: Term,
    pub rest: Vec<(Op, Term)>,
}

impl AmplitudeExpr {
    pub fn one() -> Self {
        Self {
            first: Term {
                negated: false,
                atom: Atom::Rational(Rational { num: 1, den: 1 }),
            },
            rest: Vec::new(),
        }
    }

    pub fn eval(&self) -> Amplitude {
        self.rest.iter().fold(self.first.value(), |acc, (op, t)| match op {
            Op::Mul => acc * t.value(),
            Op::Div => acc / t.value(),
        })
    }
}

impl fmt::Display for AmplitudeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        for (op, t) in &self.rest {
            f.write_str(match op {
                Op::Mul => " * ",
                Op::Div => " / ",
            })?;
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// A character with its 1-based source position.
pub(crate) type Located = (char, usize, usize);

pub(crate) fn locate(text: &str, line: usize, column: usize) -> Vec<Located> {
    text.chars().enumerate().map(|(i, c)| (c, line, column + i)).collect()
}

struct Parser<'a> {
    chars: &'a [Located],
    pos: usize,
    end: (usize, usize),
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        let (line, column) = self
            .chars
            .get(self.pos)
            .map(|&(_, l, c)| (l, c))
            .unwrap_or(self.end);
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.0)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn integer(&mut self) -> Result<u64> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an integer"));
        }
        let digits: String = self.chars[start..self.pos].iter().map(|c| c.0).collect();
        digits.parse().map_err(|_| {
            self.pos = start;
            self.error(format!("integer `{digits}` is too large"))
        })
    }

    fn rational(&mut self) -> Result<Rational> {
        let num = self.integer()?;
        let slash_digit = self.peek() == Some('/') && self.chars.get(self.pos + 1).is_some_and(|c| c.0.is_ascii_digit());
        let den = if slash_digit {
            self.pos += 1;
            let at = self.pos;
            let den = self.integer()?;
            if den == 0 {
                self.pos = at;
                return Err(self.error("division by zero"));
            }
            den
        } else {
            1
        };
        Ok(Rational { num, den })
    }

    fn term(&mut self) -> Result<Term> {
        let negated = self.eat('-');
        self.skip_ws();
        let atom = match self.peek() {
            Some(c) if c.is_ascii_digit() => Atom::Rational(self.rational()?),
            Some('i') => {
                self.pos += 1;
                Atom::Imaginary
            }
            Some('s') if self.keyword("sqrt") => {
                if !self.eat('(') {
                    return Err(self.error("expected `(` after sqrt"));
                }
                self.skip_ws();
                let at = self.pos;
                let negative = self.eat('-');
                let r = self.rational()?;
                if negative && r.num != 0 {
                    self.pos = at;
                    return Err(self.error("negative sqrt argument"));
                }
                if !self.eat(')') {
                    return Err(self.error("expected `)`"));
                }
                Atom::Sqrt(r)
            }
            Some(c) => return Err(self.error(format!("unexpected `{c}`"))),
            None => return Err(self.error("unexpected end of expression")),
        };
        Ok(Term { negated, atom })
    }

    fn keyword(&mut self, word: &str) -> bool {
        let n = word.chars().count();
        let matches = self.chars.len() >= self.pos + n
            && self.chars[self.pos..self.pos + n].iter().map(|c| c.0).eq(word.chars());
        if matches {
            self.pos += n;
        }
        matches
    }

    fn expr(&mut self) -> Result<AmplitudeExpr> {
        let first = self.term()?;
        let mut rest = Vec::new();
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some('*') => Op::Mul,
                Some('/') => Op::Div,
                _ => break,
            };
            self.pos += 1;
            let at = self.pos;
            let t = self.term()?;
            if op == Op::Div && t.value() == Amplitude::new(0.0, 0.0) {
                self.pos = at;
                self.skip_ws();
                return Err(self.error("division by zero"));
            }
            rest.push((op, t));
        }
        Ok(AmplitudeExpr { first, rest })
    }
}

pub(crate) fn parse_located(chars: &[Located], end: (usize, usize)) -> Result<AmplitudeExpr> {
    let mut p = Parser { chars, pos: 0, end };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < chars.len() {
        return Err(p.error(format!("unexpected `{}`", chars[p.pos].0)));
    }
    Ok(e)
}

pub fn parse_amplitude(text: &str) -> Result<AmplitudeExpr> {
    let chars = locate(text, 1, 1);
    parse_located(&chars, (1, chars.len() + 1))
}
