//! Exact rational scalars and the value alphabet shared by every module.

use crate::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Q = BigRational;

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

/// Parses "3", "-7/2", "0.25", "1e-3" style strings exactly.
pub fn parse_rational(s: &str) -> Result<Q> {
    let s = s.trim();
    let err = || Error::Parse {
        pos: 0,
        msg: format!("not a rational number: {s:?}"),
        snippet: s.to_string(),
    };
    if s.is_empty() {
        return Err(err());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Q::new(n, d));
    }
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| err())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let neg = int_part.starts_with('-');
    let int_digits = int_part.trim_start_matches(['+', '-']);
    if (int_digits.is_empty() && frac_part.is_empty())
        || !int_digits.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(err());
    }
    let digits = format!("{int_digits}{frac_part}");
    let n: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| err())? };
    let n = if neg { -n } else { n };
    let scale = frac_part.len() as i32 - exp;
    let ten = BigInt::from(10);
    Ok(if scale >= 0 {
        Q::new(n, ten.pow(scale as u32))
    } else {
        Q::from_integer(n * ten.pow((-scale) as u32))
    })
}

/// Canonical form: integers bare, otherwise "num/den" in lowest terms.
pub fn show_rational(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn rational_to_f64(x: &Q) -> f64 {
    x.numer().to_f64().unwrap_or(f64::NAN) / x.denom().to_f64().unwrap_or(f64::NAN)
}

/// A point in a variable's domain. Chance and decision domains are symbolic;
/// utility domains are numeric; `Null` is the padding value introduced when a
/// tree with unreachable contexts is rebuilt as a game model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Sym(String),
    Num(Q),
    Null,
}

impl Value {
    pub fn sym(s: &str) -> Value {
        Value::Sym(s.to_string())
    }

    pub fn num(x: Q) -> Value {
        Value::Num(x)
    }

    pub fn as_num(&self) -> Option<&Q> {
        match self {
            Value::Num(x) => Some(x),
            _ => None,
        }
    }

    /// Numeric strings become `Num`, everything else `Sym`.
    pub fn parse(s: &str) -> Value {
        match parse_rational(s) {
            Ok(x) => Value::Num(x),
            Err(_) => Value::Sym(s.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) => write!(f, "{s}"),
            Value::Num(x) => write!(f, "{}", show_rational(x)),
            Value::Null => write!(f, "⊥"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Sym(s) => ser.serialize_str(s),
            Value::Num(x) => ser.serialize_str(&show_rational(x)),
            Value::Null => ser.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Value, D::Error> {
        let v = serde_json::Value::deserialize(de)?;
        match v {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::String(s) => Ok(Value::parse(&s)),
            serde_json::Value::Number(n) => parse_rational(&n.to_string())
                .map(Value::Num)
                .map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("bad value literal: {other}"))),
        }
    }
}

/// Parses a JSON scalar (string or number) as an exact rational.
pub fn rational_from_json(v: &serde_json::Value) -> Result<Q> {
    match v {
        serde_json::Value::String(s) => parse_rational(s),
        serde_json::Value::Number(n) => parse_rational(&n.to_string()),
        other => Err(Error::Parse {
            pos: 0,
            msg: format!("expected a rational, got {other}"),
            snippet: other.to_string(),
        }),
    }
}

pub fn half() -> Q {
    q(1, 2)
}

pub fn mean(xs: &[Q]) -> Option<Q> {
    if xs.is_empty() {
        return None;
    }
    let sum: Q = xs.iter().fold(Q::zero(), |a, b| a + b);
    Some(sum / qi(xs.len() as i64))
}

pub fn qmax(xs: &[Q]) -> Option<Q> {
    xs.iter().max().cloned()
}

pub fn qmin(xs: &[Q]) -> Option<Q> {
    xs.iter().min().cloned()
}

pub fn qabs(x: &Q) -> Q {
    x.abs()
}

pub fn one() -> Q {
    Q::one()
}

pub fn zero() -> Q {
    Q::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_rational("3").unwrap(), qi(3));
        assert_eq!(parse_rational("-7/2").unwrap(), q(-7, 2));
        assert_eq!(parse_rational("0.25").unwrap(), q(1, 4));
        assert_eq!(parse_rational("1e-3").unwrap(), q(1, 1000));
        assert_eq!(parse_rational("-0.5").unwrap(), q(-1, 2));
        assert_eq!(parse_rational("2.5e2").unwrap(), qi(250));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn canonical_display() {
        assert_eq!(show_rational(&q(6, 4)), "3/2");
        assert_eq!(show_rational(&q(-8, 2)), "-4");
        assert_eq!(show_rational(&qi(0)), "0");
    }

    #[test]
    fn value_roundtrip() {
        let v = Value::parse("206");
        assert_eq!(v, Value::Num(qi(206)));
        assert_eq!(v.to_string(), "206");
        assert_eq!(Value::parse("g"), Value::sym("g"));
        let j = serde_json::to_string(&Value::Num(q(1, 3))).unwrap();
        assert_eq!(j, "\"1/3\"");
        let back: Value = serde_json::from_str(&j).unwrap();
        assert_eq!(back, Value::Num(q(1, 3)));
    }
}
