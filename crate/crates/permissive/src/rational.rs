//! Exact rational arithmetic helpers.
//!
//! All model data (probabilities, rewards, penalties, thresholds) is kept as
//! arbitrary-precision rationals; analysis converts to `f64` at the boundary.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

/// Shorthand for a rational from machine integers.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(num: i64) -> Rational {
    Rational::from_integer(BigInt::from(num))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Fall back to a quotient of lossy conversions for huge operands.
        let n = r.numer().to_f64().unwrap_or(f64::MAX);
        let d = r.denom().to_f64().unwrap_or(f64::MAX);
        n / d
    })
}

/// Renders `3/4` as `3/4` and integers without the denominator.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Greatest common divisor of two non-negative rationals
/// (the largest rational dividing both to an integer quotient).
pub fn rational_gcd(a: &Rational, b: &Rational) -> Rational {
    if a.is_zero() {
        return b.abs();
    }
    if b.is_zero() {
        return a.abs();
    }
    // gcd(p/q, r/s) = gcd(p*s, r*q) / (q*s)
    let num = num::integer::gcd(
        a.numer().abs() * b.denom(),
        b.numer().abs() * a.denom(),
    );
    Rational::new(num, a.denom() * b.denom())
}

/// Maximum number of fractional digits accepted in decimal literals.
pub const MAX_DECIMAL_DIGITS: usize = 12;

/// Parses `7/10`, `3`, or a decimal literal such as `0.75` (at most
/// [`MAX_DECIMAL_DIGITS`] fractional digits) into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty number".into());
    }
    if let Some((n, d)) = s.split_once('/') {
        let num: BigInt = n
            .trim()
            .parse()
            .map_err(|_| format!("invalid numerator `{n}`"))?;
        let den: BigInt = d
            .trim()
            .parse()
            .map_err(|_| format!("invalid denominator `{d}`"))?;
        if den.is_zero() {
            return Err("zero denominator".into());
        }
        return Ok(Rational::new(num, den));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if frac_part.len() > MAX_DECIMAL_DIGITS {
            return Err(format!(
                "more than {MAX_DECIMAL_DIGITS} fractional digits in `{s}`"
            ));
        }
        if !frac_part.chars().all(|c| c.is_ascii_digit()) || frac_part.is_empty() {
            return Err(format!("invalid decimal `{s}`"));
        }
        let (neg, int_digits) = match int_part.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, int_part),
        };
        if !int_digits.chars().all(|c| c.is_ascii_digit()) || int_digits.is_empty() {
            return Err(format!("invalid decimal `{s}`"));
        }
        let int: BigInt = int_digits.parse().unwrap();
        let frac: BigInt = frac_part.parse().unwrap();
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value = Rational::new(int * &scale + frac, scale);
        if neg {
            value = -value;
        }
        return Ok(value);
    }
    let int: BigInt = s.parse().map_err(|_| format!("invalid number `{s}`"))?;
    Ok(Rational::from_integer(int))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("3/4").unwrap(), rat(3, 4));
        assert_eq!(parse_rational("0.75").unwrap(), rat(3, 4));
        assert_eq!(parse_rational("5").unwrap(), rat_int(5));
        assert_eq!(parse_rational("-0.5").unwrap(), rat(-1, 2));
        assert_eq!(parse_rational("0.9999").unwrap(), rat(9999, 10000));
    }

    #[test]
    fn rejects_bad_literals() {
        assert!(parse_rational("").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("0.1234567890123").is_err()); // 13 digits
        assert!(parse_rational("1.2.3").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn gcd_of_rationals() {
        assert_eq!(rational_gcd(&rat(1, 2), &rat(1, 3)), rat(1, 6));
        assert_eq!(rational_gcd(&rat(3, 2), &rat_int(1)), rat(1, 2));
        assert_eq!(rational_gcd(&Rational::zero(), &rat(2, 5)), rat(2, 5));
        assert_eq!(rational_gcd(&rat_int(4), &rat_int(6)), rat_int(2));
    }

    #[test]
    fn formats_reduced() {
        assert_eq!(format_rational(&rat(6, 8)), "3/4");
        assert_eq!(format_rational(&rat(8, 4)), "2");
    }
}
