//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' integer)?
//! primary := number | 'x' digits | name | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Division is accepted only by nonzero constants, which covers `p/q` literals.
//! Named constants are resolved from a caller-supplied table.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{Pow, Zero};

use super::expr::{CanonicalExpr, TrigKind};
use super::{Rational, SymbolicError};

const UNSUPPORTED: &[&str] = &[
    "tan", "cot", "sec", "csc", "log", "ln", "sqrt", "abs", "asin", "acos", "atan", "atan2",
    "sinh", "cosh", "tanh", "pow", "sign", "floor", "ceil", "min", "max",
];

/// Parses an expression in `n` variables with no named constants.
pub fn parse_expr(text: &str, n: usize) -> Result<CanonicalExpr, SymbolicError> {
    parse_expr_with(text, n, &BTreeMap::new())
}

/// Parses an expression, resolving bare identifiers through `params`.
pub fn parse_expr_with(
    text: &str,
    n: usize,
    params: &BTreeMap<String, Rational>,
) -> Result<CanonicalExpr, SymbolicError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        n,
        params,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

/// Parses an exact rational literal: integer, `p/q`, or decimal with optional exponent.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once('/') {
        let num = parse_decimal(a.trim())?;
        let den = parse_decimal(b.trim())?;
        if den.is_zero() {
            return None;
        }
        return Some(num / den);
    }
    parse_decimal(t)
}

fn parse_decimal(t: &str) -> Option<Rational> {
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{}{}", int_part, frac_part);
    let mut q = Rational::from_integer(digits.parse::<BigInt>().ok()?);
    let shift = exponent - frac_part.len() as i32;
    let ten = Rational::from_integer(BigInt::from(10));
    if shift >= 0 {
        q *= Pow::pow(&ten, shift as u32);
    } else {
        q /= Pow::pow(&ten, (-shift) as u32);
    }
    Some(if neg { -q } else { q })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: usize,
    params: &'a BTreeMap<String, Rational>,
}

impl Parser<'_> {
    fn error(&self, message: String) -> SymbolicError {
        SymbolicError::Syntax {
            column: self.pos + 1,
            message,
        }
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

    fn expect(&mut self, c: u8) -> Result<(), SymbolicError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = acc.mul(&self.unary()?)?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let at = self.pos;
                    let d = self.unary()?;
                    let c = d.as_constant().ok_or(SymbolicError::Syntax {
                        column: at + 1,
                        message: "division is only supported by constants".into(),
                    })?;
                    if c.is_zero() {
                        return Err(SymbolicError::Syntax {
                            column: at + 1,
                            message: "division by zero".into(),
                        });
                    }
                    acc = acc.scale(&(Rational::from_integer(BigInt::from(1)) / c));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(self.unary()?.neg())
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("exponent must be a non-negative integer literal".into()));
            }
            let k: u32 = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| SymbolicError::Syntax {
                    column: start + 1,
                    message: "exponent too large".into(),
                })?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input".into())),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.error(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // optional exponent, only if followed by digits
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mut k = self.pos + 1;
            if k < self.src.len() && matches!(self.src[k], b'+' | b'-') {
                k += 1;
            }
            if k < self.src.len() && self.src[k].is_ascii_digit() {
                while k < self.src.len() && self.src[k].is_ascii_digit() {
                    k += 1;
                }
                self.pos = k;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let q = parse_decimal(text).ok_or(SymbolicError::Syntax {
            column: start + 1,
            message: format!("malformed number `{}`", text),
        })?;
        Ok(CanonicalExpr::constant(self.n, q))
    }

    fn identifier(&mut self) -> Result<CanonicalExpr, SymbolicError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        let column = start + 1;

        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| SymbolicError::Syntax {
                    column,
                    message: format!("bad variable `{}`", name),
                })?;
                if index == 0 || index > self.n {
                    return Err(SymbolicError::IndexOutOfRange { index, n: self.n });
                }
                return CanonicalExpr::var(self.n, index - 1);
            }
        }

        match name.as_str() {
            "sin" | "cos" | "exp" => {
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                let form = arg
                    .as_affine()
                    .ok_or(SymbolicError::NonAffineArgument { name: name.clone(), column })?;
                Ok(match name.as_str() {
                    "sin" => CanonicalExpr::trig(TrigKind::Sin, form),
                    "cos" => CanonicalExpr::trig(TrigKind::Cos, form),
                    _ => CanonicalExpr::exp(form),
                })
            }
            _ if UNSUPPORTED.contains(&name.as_str()) => {
                Err(SymbolicError::UnsupportedFunction { name, column })
            }
            _ => {
                if let Some(q) = self.params.get(&name) {
                    return Ok(CanonicalExpr::constant(self.n, q.clone()));
                }
                if self.peek() == Some(b'(') {
                    Err(SymbolicError::UnsupportedFunction { name, column })
                } else {
                    Err(SymbolicError::Syntax {
                        column,
                        message: format!("unknown identifier `{}`", name),
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> Rational {
        Rational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn rational_literals() {
        assert_eq!(parse_rational("3/4"), Some(q(3, 4)));
        assert_eq!(parse_rational("-0.25"), Some(q(-1, 4)));
        assert_eq!(parse_rational("1.5e2"), Some(q(150, 1)));
        assert_eq!(parse_rational("2e-3"), Some(q(1, 500)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
    }

    #[test]
    fn cos_x3_is_single_atom() {
        let e = parse_expr("cos(x3)", 3).unwrap();
        assert_eq!(e.terms().len(), 1);
        assert_eq!(e.to_string(), "cos(x3)");
    }

    #[test]
    fn zero_is_empty() {
        assert!(parse_expr("0", 2).unwrap().is_zero());
        assert!(parse_expr("x1 - x1", 2).unwrap().is_zero());
    }

    #[test]
    fn sin_squared_reduces() {
        let e = parse_expr("sin(x1)^2", 1).unwrap();
        assert_eq!(e, parse_expr("1/2 - 1/2*cos(2*x1)", 1).unwrap());
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse_expr("-x1^2 + 2*x2*x1 - -3", 2).unwrap();
        assert_eq!(e.eval(&[2.0, 5.0]), -4.0 + 20.0 + 3.0);
        assert_eq!(parse_expr("2^3", 1).unwrap().as_constant(), Some(q(8, 1)));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_expr("tan(x1)", 1),
            Err(SymbolicError::UnsupportedFunction { .. })
        ));
        assert!(matches!(
            parse_expr("log(x1)", 1),
            Err(SymbolicError::UnsupportedFunction { .. })
        ));
        assert!(matches!(
            parse_expr("sin(x1^2)", 1),
            Err(SymbolicError::NonAffineArgument { .. })
        ));
        assert!(matches!(
            parse_expr("x4", 3),
            Err(SymbolicError::IndexOutOfRange { index: 4, n: 3 })
        ));
        assert!(matches!(parse_expr("x1 +", 1), Err(SymbolicError::Syntax { .. })));
        assert!(matches!(parse_expr("(x1", 1), Err(SymbolicError::Syntax { .. })));
        assert!(matches!(parse_expr("x1 / x1", 1), Err(SymbolicError::Syntax { .. })));
        assert!(matches!(parse_expr("x1^-1", 1), Err(SymbolicError::Syntax { .. })));
        assert!(matches!(parse_expr("y", 1), Err(SymbolicError::Syntax { .. })));
    }

    #[test]
    fn syntax_error_reports_column() {
        match parse_expr("x1 + * x2", 2) {
            Err(SymbolicError::Syntax { column, .. }) => assert_eq!(column, 6),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn params_resolve() {
        let mut p = BTreeMap::new();
        p.insert("l1".to_string(), q(3, 10));
        let e = parse_expr_with("l1*x1", 1, &p).unwrap();
        assert_eq!(e, parse_expr("3/10*x1", 1).unwrap());
    }

    #[test]
    fn print_parse_round_trip() {
        for s in [
            "x1*sin(x2 - 1/3)*exp(-2*x1 + 1) - 7/5*x2^3",
            "cos(x1 + x2) + 0.5",
            "exp(x1)*exp(-x1)",
            "sin(-x2)*cos(x1)",
            "cos(3)*x1 + sin(-1/2)",
        ] {
            let e = parse_expr(s, 2).unwrap();
            let back = parse_expr(&e.to_string(), 2).unwrap();
            assert_eq!(e, back, "{}", s);
            assert_eq!(back.to_string(), e.to_string());
        }
    }
}
