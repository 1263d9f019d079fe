//! Polynomial expressions in x and y (degree at most 4) for config coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use bcopt_core::fem::Coef;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_DEGREE: u32 = 4;

/// Coefficients keyed by the exponents (i, j) of x^i y^j.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    terms: BTreeMap<(u32, u32), f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert((0, 0), c);
        }
        Poly { terms }
    }

    fn monomial(i: u32, j: u32) -> Self {
        Poly {
            terms: BTreeMap::from([((i, j), 1.0)]),
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|(i, j)| i + j).max().unwrap_or(0)
    }

    /// The constant value, if the polynomial has no x or y terms.
    pub fn as_constant(&self) -> Option<f64> {
        if self.degree() == 0 {
            Some(self.terms.get(&(0, 0)).copied().unwrap_or(0.0))
        } else {
            None
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(i, j), c)| c * x.powi(i as i32) * y.powi(j as i32))
            .sum()
    }

    fn add(mut self, other: &Poly, sign: f64) -> Poly {
        for (&k, &c) in &other.terms {
            *self.terms.entry(k).or_insert(0.0) += sign * c;
        }
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut terms = BTreeMap::new();
        for (&(i, j), &a) in &self.terms {
            for (&(k, l), &b) in &other.terms {
                *terms.entry((i + k, j + l)).or_insert(0.0) += a * b;
            }
        }
        terms.retain(|_, c: &mut f64| *c != 0.0);
        Poly { terms }
    }

    fn scale(mut self, c: f64) -> Poly {
        for v in self.terms.values_mut() {
            *v *= c;
        }
        self.terms.retain(|_, c| *c != 0.0);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.msg, self.pos)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos,
            msg: msg.into(),
        })
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

    fn expr(&mut self) -> Result<Poly, ParseError> {
        let mut acc = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = acc.add(&rhs, if c == b'+' { 1.0 } else { -1.0 });
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Poly, ParseError> {
        let mut acc = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let at = self.pos;
            let rhs = self.unary()?;
            if c == b'*' {
                acc = acc.mul(&rhs);
            } else {
                match rhs.as_constant() {
                    Some(d) if d != 0.0 => acc = acc.scale(1.0 / d),
                    Some(_) => {
                        return Err(ParseError {
                            pos: at,
                            msg: "division by zero".into(),
                        })
                    }
                    None => {
                        return Err(ParseError {
                            pos: at,
                            msg: "division by a non-constant".into(),
                        })
                    }
                }
            }
            self.check_degree(&acc)?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Poly, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(self.unary()?.scale(-1.0))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Poly, ParseError> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let Ok(n) = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap_or("")
            .parse::<u32>()
        else {
            return self.err("exponent must be a non-negative integer");
        };
        if n > MAX_DEGREE && base.as_constant().is_none() {
            return self.err(format!("degree exceeds {MAX_DEGREE}"));
        }
        let mut out = Poly::constant(1.0);
        for _ in 0..n {
            out = out.mul(&base);
            self.check_degree(&out)?;
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Poly, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                match &self.src[start..self.pos] {
                    b"x" => Ok(Poly::monomial(1, 0)),
                    b"y" => Ok(Poly::monomial(0, 1)),
                    b"pi" => Ok(Poly::constant(std::f64::consts::PI)),
                    b"e" => Ok(Poly::constant(std::f64::consts::E)),
                    other => Err(ParseError {
                        pos: start,
                        msg: format!("unknown name '{}' (x, y, pi, e)", String::from_utf8_lossy(other)),
                    }),
                }
            }
            Some(_) => self.err("unexpected character"),
            None => self.err("unexpected end of expression"),
        }
    }

    fn number(&mut self) -> Result<Poly, ParseError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        // an exponent needs digits; a bare `e` is left unread
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                digits(&mut p);
                self.pos = p;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Poly::constant(v)),
            _ => Err(ParseError {
                pos: start,
                msg: format!("bad number '{text}'"),
            }),
        }
    }

    fn check_degree(&self, p: &Poly) -> Result<(), ParseError> {
        if p.degree() > MAX_DEGREE {
            return self.err(format!("degree exceeds {MAX_DEGREE}"));
        }
        Ok(())
    }
}

pub fn parse(src: &str) -> Result<Poly, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let out = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    p.check_degree(&out)?;
    Ok(out)
}

/// A config coefficient: a JSON number or a polynomial string such as `"1 + x^2"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub source: String,
    pub poly: Poly,
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr {
            source: c.to_string(),
            poly: Poly::constant(c),
        }
    }

    pub fn coef(&self) -> Coef {
        if let Some(c) = self.poly.as_constant() {
            return Arc::new(move |_| c);
        }
        let poly = self.poly.clone();
        Arc::new(move |p| poly.eval(p[0], p[1]))
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d).map_err(|_| serde::de::Error::custom("expected a number or a polynomial string"))? {
            Raw::Num(c) => Ok(Expr::constant(c)),
            Raw::Text(source) => {
                let poly =
                    parse(&source).map_err(|e| serde::de::Error::custom(format!("expression '{source}': {e}")))?;
                Ok(Expr { source, poly })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_polynomials() {
        let p = parse("1 + 2*x - y^2 + (x - 0.5)*(x + 0.5)").unwrap();
        let (x, y) = (0.3, -0.7);
        let want = 1.0 + 2.0 * x - y * y + (x - 0.5) * (x + 0.5);
        assert!((p.eval(x, y) - want).abs() < 1e-14);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn constants_and_scientific_notation() {
        assert_eq!(parse("2*pi").unwrap().as_constant(), Some(2.0 * std::f64::consts::PI));
        assert_eq!(parse("1.5e-3").unwrap().as_constant(), Some(1.5e-3));
        assert_eq!(parse("-e").unwrap().as_constant(), Some(-std::f64::consts::E));
        assert!((parse("x/4").unwrap().eval(2.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse("x^5").is_err());
        assert!(parse("x^2*y^3").is_err());
        assert!(parse("1/x").is_err());
        assert!(parse("1/0").is_err());
        assert!(parse("sin(x)").is_err());
        assert!(parse("(x + 1").is_err());
        assert!(parse("x y").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn degree_cancels_before_the_check() {
        assert_eq!(parse("(x^2)^2 - x^4 + 1").unwrap().as_constant(), Some(1.0));
    }

    #[test]
    fn deserializes_numbers_and_strings() {
        let e: Expr = serde_json::from_str("2.5").unwrap();
        assert_eq!(e.coef()([9.0, 9.0]), 2.5);
        let e: Expr = serde_json::from_str("\"x - 0.5\"").unwrap();
        assert!((e.coef()([0.75, 0.0]) - 0.25).abs() < 1e-15);
        assert!(serde_json::from_str::<Expr>("\"x^7\"").is_err());
        assert!(serde_json::from_str::<Expr>("[1]").is_err());
    }
}
