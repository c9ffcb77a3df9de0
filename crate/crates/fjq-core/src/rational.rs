//! Exact rational scalars.
//!
//! Every quantity that enters the structural pipeline (incidence entries,
//! element values, constraint coefficients, energies' coefficients) is an
//! arbitrary-precision rational. Floats appear only at the evaluation
//! boundary (`to_f64`) used by the numeric integrators.

use alloc::string::String;
use alloc::string::ToString;
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational scalar used throughout the engine.
pub type Rat = num_rational::BigRational;

/// Shorthand for an integer-valued rational.
pub fn rat_i(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Shorthand for the fraction `n/d`. Panics if `d == 0`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Error raised when a token cannot be read as an exact rational.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadRational {
    pub token: String,
}

impl core::fmt::Display for BadRational {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "'{}' is not an exact rational", self.token)
    }
}

/// Parses `p`, `p/q`, or a finite decimal such as `-0.25` exactly.
///
/// Decimals are expanded over a power-of-ten denominator, so `0.1` becomes
/// `1/10`, not the nearest float. Exponents and non-finite spellings are
/// rejected: a netlist that means one-tenth must say so exactly.
pub fn parse_rat(token: &str) -> Result<Rat, BadRational> {
    let t = token.trim();
    let fail = || BadRational {
        token: t.to_string(),
    };
    if t.is_empty() {
        return Err(fail());
    }
    if let Some((num, den)) = t.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| fail())?;
        let d: BigInt = den.trim().parse().map_err(|_| fail())?;
        if d.is_zero() {
            return Err(fail());
        }
        return Ok(Rat::new(n, d));
    }
    if let Some((int_part, frac_part)) = t.split_once('.') {
        if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail());
        }
        let negative = int_part.starts_with('-');
        let int_digits = int_part
            .strip_prefix(['-', '+'])
            .unwrap_or(int_part);
        if !int_digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail());
        }
        let whole: BigInt = if int_digits.is_empty() {
            BigInt::zero()
        } else {
            int_digits.parse().map_err(|_| fail())?
        };
        let frac: BigInt = frac_part.parse().map_err(|_| fail())?;
        let scale = BigInt::from(10u8).pow(frac_part.len() as u32);
        let mut value = Rat::new(whole * &scale + frac, scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    let n: BigInt = t.parse().map_err(|_| fail())?;
    Ok(Rat::from_integer(n))
}

/// Renders a rational as `p` or `p/q` in lowest terms.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        let mut s = r.numer().to_string();
        s.push('/');
        s.push_str(&r.denom().to_string());
        s
    }
}

/// Converts to the nearest `f64` (the only lossy step in the pipeline).
pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Enormous numerator/denominator pairs can overflow the direct
        // conversion; fall back on a quotient of magnitudes.
        let n = r.numer().to_f64().unwrap_or(f64::INFINITY * sign_of(r));
        let d = r.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

fn sign_of(r: &Rat) -> f64 {
    if r.is_negative() {
        -1.0
    } else {
        1.0
    }
}
