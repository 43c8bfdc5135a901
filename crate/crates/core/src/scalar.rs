//! Exact scalars: Laurent polynomials in `u = q^(1/4)` with big-rational
//! coefficients.  These are the coefficients that appear in quantum
//! integers, oscillator normalizations, R-matrix entries and so on; they
//! form an exact ring with no truncation anywhere.

use crate::error::{Error, Result};
use num::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

pub type Rat = rug::Rational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::from((n, d))
}

pub fn rat_i(n: i64) -> Rat {
    Rat::from(n)
}

/// A Laurent polynomial in `u = q^(1/4)`.  The map key is the exponent of
/// `u`, so `q^(k/4)` is stored at key `k`.  Zero coefficients are never
/// stored; the zero polynomial is the empty map.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct ExactScalar {
    terms: BTreeMap<i64, Rat>,
}

impl ExactScalar {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::q_pow_units(0)
    }

    /// `c * q^(units/4)`.
    pub fn monomial(c: Rat, units: i64) -> Self {
        let mut t = BTreeMap::new();
        if !c.is_zero() {
            t.insert(units, c);
        }
        Self { terms: t }
    }

    /// `q^(units/4)`.
    pub fn q_pow_units(units: i64) -> Self {
        Self::monomial(Rat::one(), units)
    }

    /// `q^(n/2)` (half-integer powers are the common case in this model).
    pub fn q_half(n: i64) -> Self {
        Self::q_pow_units(2 * n)
    }

    pub fn from_rat(c: Rat) -> Self {
        Self::monomial(c, 0)
    }

    pub fn from_int(n: i64) -> Self {
        Self::monomial(rat_i(n), 0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&i64, &Rat)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Coefficient of `q^(units/4)`.
    pub fn coeff(&self, units: i64) -> Rat {
        self.terms.get(&units).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn min_exp(&self) -> Option<i64> {
        self.terms.keys().next().copied()
    }

    pub fn max_exp(&self) -> Option<i64> {
        self.terms.keys().next_back().copied()
    }

    fn insert_add(terms: &mut BTreeMap<i64, Rat>, k: i64, v: Rat) {
        if v.is_zero() {
            return;
        }
        match terms.entry(k) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(v);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get().clone() + v;
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (k, v) in &other.terms {
            Self::insert_add(&mut terms, *k, v.clone());
        }
        Self { terms }
    }

    pub fn neg(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(k, v)| (*k, -v.clone())).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = BTreeMap::new();
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                Self::insert_add(&mut terms, ka + kb, va.clone() * vb.clone());
            }
        }
        Self { terms }
    }

    pub fn scale(&self, c: &Rat) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (*k, v.clone() * c.clone()))
                .collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Exact division; fails unless the quotient is again a Laurent
    /// polynomial (zero remainder).
    pub fn div_exact(&self, other: &Self) -> Result<Self> {
        if other.is_zero() {
            return Err(Error::Domain("division by zero scalar".into()));
        }
        let mut rem = self.clone();
        let mut quot = Self::zero();
        let (dk, dc) = {
            let (k, c) = other.terms.iter().next().unwrap();
            (*k, c.clone())
        };
        while !rem.is_zero() {
            let (rk, rc) = {
                let (k, c) = rem.terms.iter().next().unwrap();
                (*k, c.clone())
            };
            let t = Self::monomial(rc / dc.clone(), rk - dk);
            quot = quot.add(&t);
            rem = rem.sub(&t.mul(other));
            if let (Some(rmin), Some(_)) = (rem.min_exp(), quot.max_exp()) {
                // divisibility fails if degrees stop decreasing sensibly
                if rmin - dk > self.max_exp().unwrap_or(0) - dk + other.num_terms() as i64 * 128 {
                    return Err(Error::Domain("inexact scalar division".into()));
                }
            }
        }
        Ok(quot)
    }

    /// Numeric evaluation at a real/complex `q` (passed as `u = q^(1/4)`).
    pub fn eval_u(&self, u: num_complex::Complex64) -> num_complex::Complex64 {
        let mut s = num_complex::Complex64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let cf = rat_to_f64(c);
            s += u.powi(*k as i32) * cf;
        }
        s
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64()
}

impl fmt::Debug for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({})q^({}/4)", c, k)?;
        }
        Ok(())
    }
}

/// Symmetric quantum integer `[n]_{q_i} = (q_i^n - q_i^(-n)) / (q_i - q_i^(-1))`
/// where the base is `q^(base_half/2)`; `base_half = 1` gives `q_1 = q^(1/2)`,
/// `base_half = 4` gives `q_0 = q^2`.
pub fn qint(n: i64, base_half: i64) -> ExactScalar {
    // [n] = sum_{j=0..|n|-1} q_i^(n-1-2j), with [-n] = -[n], [0] = 0.
    if n == 0 {
        return ExactScalar::zero();
    }
    let (n_abs, sign) = if n > 0 { (n, 1) } else { (-n, -1) };
    let mut s = ExactScalar::zero();
    for j in 0..n_abs {
        // exponent of q_i: (n_abs - 1 - 2j); q_i = q^(base_half/2) -> u units: 2*base_half*exp/...
        // q_i^e = q^(base_half*e/2) = u^(2*base_half*e/2) = u^(base_half*e)... u = q^(1/4):
        // q^(base_half*e/2) = u^(4*base_half*e/2) = u^(2*base_half*e).
        let e = n_abs - 1 - 2 * j;
        s = s.add(&ExactScalar::q_pow_units(2 * base_half * e));
    }
    if sign < 0 {
        s.neg()
    } else {
        s
    }
}

/// Quantum factorial `[n]_{q_i}!`.
pub fn qfact(n: i64, base_half: i64) -> ExactScalar {
    let mut acc = ExactScalar::one();
    for k in 1..=n {
        acc = acc.mul(&qint(k, base_half));
    }
    acc
}

/// Quantum binomial coefficient; exact Laurent polynomial by construction.
pub fn qbinom(n: i64, k: i64, base_half: i64) -> Result<ExactScalar> {
    if k < 0 || n < 0 || k > n {
        return Err(Error::Domain(format!("qbinom({n},{k}) out of range")));
    }
    let num = qfact(n, base_half);
    let den = qfact(k, base_half).mul(&qfact(n - k, base_half));
    num.div_exact(&den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qint_values() {
        // [2]_{q_1} = q^(1/2) + q^(-1/2)
        let v = qint(2, 1);
        assert_eq!(v.coeff(2), rat_i(1));
        assert_eq!(v.coeff(-2), rat_i(1));
        assert_eq!(v.num_terms(), 2);
        // [3]_{q_1} = q + 1 + q^(-1)
        let v = qint(3, 1);
        assert_eq!(v.coeff(4), rat_i(1));
        assert_eq!(v.coeff(0), rat_i(1));
        assert_eq!(v.coeff(-4), rat_i(1));
        // [2]_{q_0} = q^2 + q^(-2)
        let v = qint(2, 4);
        assert_eq!(v.coeff(8), rat_i(1));
        assert_eq!(v.coeff(-8), rat_i(1));
        // [-n] = -[n]
        assert_eq!(qint(-3, 1), qint(3, 1).neg());
        assert!(qint(0, 1).is_zero());
    }

    #[test]
    fn qbinom_is_laurent_polynomial() {
        // [4 choose 2]_{q_1} = [4][3]/([2][1]) = q^2+q+2+...; just verify
        // symmetry and exactness.
        let b = qbinom(4, 2, 1).unwrap();
        assert!(!b.is_zero());
        // palindromic in u
        let lo = b.min_exp().unwrap();
        let hi = b.max_exp().unwrap();
        assert_eq!(lo, -hi);
        for (k, c) in b.terms() {
            assert_eq!(*c, b.coeff(-k));
        }
        // [n choose 1] = [n]
        assert_eq!(qbinom(5, 1, 1).unwrap(), qint(5, 1));
    }

    #[test]
    fn div_exact_roundtrip() {
        let a = qint(7, 1).mul(&qint(3, 4)).add(&ExactScalar::q_half(5));
        let b = qint(2, 1).add(&ExactScalar::from_int(3));
        let p = a.mul(&b);
        assert_eq!(p.div_exact(&b).unwrap(), a);
    }
}
