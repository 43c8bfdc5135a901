//! Truncated multivariate Laurent series over exact rationals.
//!
//! Exponent lattice: the power of `q` is stored as an integer multiple of
//! 1/4 ("u units", `u = q^(1/4)`), and the power of each spectral variable
//! as an integer multiple of 1/2 ("half units").  A term key is
//! `[q_exp, v1_exp, v2_exp, ...]`.
//!
//! Truncation is certified.  Each series carries
//! * `qcap`: coefficients with q-exponent `<= qcap` are exactly correct
//!   (`None` = never truncated in q),
//! * per-variable `vcap`: same for each spectral exponent,
//! * per-variable `vlo`: a *structural* lower bound on the exponents in the
//!   full, untruncated object (`None` = no bound known).
//! Multiplication derives the widest window it can certify for the result
//! and fails loudly (`Error::Window`) if a needed bound is missing.

use crate::error::{Error, Result};
use crate::scalar::{rat_to_f64, ExactScalar, Rat};
use num::{One, Signed, Zero};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt;

/// An exact monomial `coef * q^(q/4) * prod_v v^(exps[v]/2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomial {
    pub coef: Rat,
    /// power of q in u units (quarter powers of q)
    pub q: i64,
    /// spectral exponents in half units
    pub exps: BTreeMap<String, i64>,
}

impl Monomial {
    pub fn new(coef: Rat, q: i64) -> Self {
        Monomial {
            coef,
            q,
            exps: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Monomial::new(Rat::one(), 0)
    }

    /// `coef * q^(qq/4) * var`
    pub fn var(coef: Rat, qq: i64, var: &str) -> Self {
        let mut m = Monomial::new(coef, qq);
        m.exps.insert(var.to_string(), 2);
        m
    }

    pub fn with_var_pow(mut self, var: &str, half_units: i64) -> Self {
        if half_units != 0 {
            *self.exps.entry(var.to_string()).or_insert(0) += half_units;
            if self.exps[var] == 0 {
                self.exps.remove(var);
            }
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.coef.is_zero()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut exps = self.exps.clone();
        for (v, e) in &other.exps {
            let s = exps.entry(v.clone()).or_insert(0);
            *s += e;
            if *s == 0 {
                exps.remove(v);
            }
        }
        Monomial {
            coef: self.coef.clone() * other.coef.clone(),
            q: self.q + other.q,
            exps,
        }
    }

    /// Integer power (may be negative).
    pub fn pow(&self, p: i64) -> Result<Self> {
        if self.coef.is_zero() {
            if p < 0 {
                return Err(Error::Domain("negative power of zero monomial".into()));
            }
            if p == 0 {
                return Ok(Monomial::one());
            }
            return Ok(self.clone());
        }
        let coef = rat_pow(&self.coef, p);
        Ok(Monomial {
            coef,
            q: self.q * p,
            exps: self.exps.iter().map(|(v, e)| (v.clone(), e * p)).collect(),
        })
    }

    /// Rational power `num/den`; only defined when every exponent stays on
    /// the lattice and the coefficient power is unambiguous.
    pub fn pow_rat(&self, num: i64, den: i64) -> Result<Self> {
        assert!(den > 0);
        let g = gcd(num.unsigned_abs() as i64, den);
        let (num, den) = (num / g, den / g);
        if den == 1 {
            return self.pow(num);
        }
        // fractional power: coefficient must be exactly 1 and all exponents
        // divisible, otherwise the branch is ambiguous on the real lattice.
        if !self.coef.is_one() {
            return Err(Error::Lattice(format!(
                "fractional power {num}/{den} of monomial with coefficient {}",
                self.coef
            )));
        }
        if (self.q * num) % den != 0 {
            return Err(Error::Lattice("fractional power leaves q lattice".into()));
        }
        let mut exps = BTreeMap::new();
        for (v, e) in &self.exps {
            if (e * num) % den != 0 {
                return Err(Error::Lattice(format!(
                    "fractional power leaves lattice of {v}"
                )));
            }
            exps.insert(v.clone(), e * num / den);
        }
        Ok(Monomial {
            coef: Rat::one(),
            q: self.q * num / den,
            exps,
        })
    }

    pub fn inv(&self) -> Result<Self> {
        self.pow(-1)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    if a == 0 {
        1
    } else {
        a
    }
}

pub fn rat_pow(r: &Rat, p: i64) -> Rat {
    if p == 0 {
        return Rat::one();
    }
    let mut acc = Rat::one();
    let base = if p > 0 { r.clone() } else { r.clone().recip() };
    for _ in 0..p.unsigned_abs() {
        acc *= base.clone();
    }
    acc
}

/// Truncated multivariate Laurent series with certified windows.
#[derive(Clone, Debug)]
pub struct Series {
    /// sorted, deduplicated spectral variable names
    vars: Vec<String>,
    /// certified upper q window in u units; None = untruncated in q
    qcap: Option<i64>,
    /// per-variable certified upper window in half units
    vcaps: Vec<Option<i64>>,
    /// per-variable structural lower bound of the full object's support
    vlos: Vec<Option<i64>>,
    /// key = [q_exp, v_exps...]
    terms: BTreeMap<Vec<i64>, Rat>,
}

impl Series {
    // ---------------------------------------------------------- construction

    pub fn zero(vars: &[&str]) -> Self {
        let mut v: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        v.sort();
        v.dedup();
        let n = v.len();
        Series {
            vars: v,
            qcap: None,
            vcaps: vec![None; n],
            vlos: vec![Some(0); n],
            terms: BTreeMap::new(),
        }
    }

    pub fn one(vars: &[&str]) -> Self {
        let mut s = Series::zero(vars);
        s.terms.insert(vec![0; s.vars.len() + 1], Rat::one());
        s
    }

    pub fn from_monomial(m: &Monomial) -> Self {
        let names: Vec<&str> = m.exps.keys().map(|s| s.as_str()).collect();
        let mut s = Series::zero(&names);
        if m.coef.is_zero() {
            return s;
        }
        let mut key = vec![0i64; s.vars.len() + 1];
        key[0] = m.q;
        for (i, v) in s.vars.iter().enumerate() {
            key[i + 1] = *m.exps.get(v).unwrap_or(&0);
        }
        // structural lower bounds are exact for a monomial
        for (i, v) in s.vars.clone().iter().enumerate() {
            s.vlos[i] = Some(*m.exps.get(v).unwrap_or(&0));
        }
        s.terms.insert(key, m.coef.clone());
        s
    }

    pub fn from_exact(x: &ExactScalar) -> Self {
        let mut s = Series::zero(&[]);
        for (k, c) in x.terms() {
            s.terms.insert(vec![*k], c.clone());
        }
        s
    }

    pub fn constant(c: Rat) -> Self {
        Series::from_monomial(&Monomial::new(c, 0))
    }

    // ------------------------------------------------------------- accessors

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn qcap(&self) -> Option<i64> {
        self.qcap
    }

    pub fn vcap(&self, var: &str) -> Option<i64> {
        self.var_index(var).and_then(|i| self.vcaps[i])
    }

    pub fn vlo(&self, var: &str) -> Option<i64> {
        self.var_index(var).and_then(|i| self.vlos[i])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &Rat)> {
        self.terms.iter()
    }

    fn var_index(&self, var: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }

    /// Coefficient of `q^(qu/4) * prod v^(e/2)`; exponents in lattice units,
    /// `vexps` in the order of `self.vars()`.
    pub fn coeff(&self, qu: i64, vexps: &[i64]) -> Rat {
        let mut key = Vec::with_capacity(self.vars.len() + 1);
        key.push(qu);
        key.extend_from_slice(vexps);
        self.terms.get(&key).cloned().unwrap_or_else(Rat::zero)
    }

    /// Smallest stored q exponent.
    pub fn stored_qmin(&self) -> Option<i64> {
        self.terms.keys().map(|k| k[0]).min()
    }

    /// Lower bound on the q support of the *full* object: stored terms are
    /// complete inside the spectral window, and anything dropped for
    /// exceeding `qcap` sits above `qcap`.
    fn qlow(&self) -> i64 {
        let stored = self.stored_qmin();
        match (stored, self.qcap) {
            (Some(s), Some(c)) => s.min(c),
            (Some(s), None) => s,
            (None, Some(c)) => c,
            (None, None) => 0,
        }
    }

    // --------------------------------------------------------- housekeeping

    fn prune(&mut self) {
        let qcap = self.qcap;
        let vcaps = self.vcaps.clone();
        self.terms.retain(|k, v| {
            if v.is_zero() {
                return false;
            }
            if let Some(c) = qcap {
                if k[0] > c {
                    return false;
                }
            }
            for (i, vc) in vcaps.iter().enumerate() {
                if let Some(c) = vc {
                    if k[i + 1] > *c {
                        return false;
                    }
                }
            }
            true
        });
    }

    /// Tighten the q window to `cap` (drops terms above it).
    pub fn truncate_q(mut self, cap: i64) -> Self {
        self.qcap = Some(match self.qcap {
            Some(c) => c.min(cap),
            None => cap,
        });
        self.prune();
        self
    }

    /// Tighten the window of `var` to `cap` half units.
    pub fn truncate_var(mut self, var: &str, cap: i64) -> Self {
        if let Some(i) = self.var_index(var) {
            self.vcaps[i] = Some(match self.vcaps[i] {
                Some(c) => c.min(cap),
                None => cap,
            });
            self.prune();
        }
        self
    }

    /// Declare a structural lower bound for `var` (caller asserts that the
    /// untruncated object has no exponents of `var` below `lo`).
    pub fn assert_vlo(mut self, var: &str, lo: i64) -> Self {
        if let Some(i) = self.var_index(var) {
            self.vlos[i] = Some(match self.vlos[i] {
                Some(old) => old.max(lo),
                None => lo,
            });
        }
        self
    }

    /// Extend the variable set (no-op for already present vars).
    pub fn promote(&self, vars: &[&str]) -> Self {
        let mut all: Vec<String> = self.vars.clone();
        for v in vars {
            all.push(v.to_string());
        }
        all.sort();
        all.dedup();
        if all == self.vars {
            return self.clone();
        }
        let map: Vec<usize> = self
            .vars
            .iter()
            .map(|v| all.iter().position(|w| w == v).unwrap())
            .collect();
        let n = all.len();
        let mut vcaps = vec![None; n];
        let mut vlos = vec![Some(0); n];
        for (i, &j) in map.iter().enumerate() {
            vcaps[j] = self.vcaps[i];
            vlos[j] = self.vlos[i];
        }
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            let mut key = vec![0i64; n + 1];
            key[0] = k[0];
            for (i, &j) in map.iter().enumerate() {
                key[j + 1] = k[i + 1];
            }
            terms.insert(key, c.clone());
        }
        Series {
            vars: all,
            qcap: self.qcap,
            vcaps,
            vlos,
            terms,
        }
    }

    fn aligned(&self, other: &Self) -> (Series, Series) {
        if self.vars == other.vars {
            return (self.clone(), other.clone());
        }
        let ov: Vec<&str> = other.vars.iter().map(|s| s.as_str()).collect();
        let sv: Vec<&str> = self.vars.iter().map(|s| s.as_str()).collect();
        (self.promote(&ov), other.promote(&sv))
    }

    // ------------------------------------------------------------ arithmetic

    /// In-place `self += other` (avoids cloning the accumulator).
    pub fn add_assign_with(&mut self, other: &Self) {
        if self.vars != other.vars {
            *self = self.add(other);
            return;
        }
        let mut tightened = false;
        let qc = min_opt(self.qcap, other.qcap);
        tightened |= qc != self.qcap || qc != other.qcap;
        self.qcap = qc;
        for i in 0..self.vcaps.len() {
            let vc = min_opt(self.vcaps[i], other.vcaps[i]);
            tightened |= vc != self.vcaps[i] || vc != other.vcaps[i];
            self.vcaps[i] = vc;
            self.vlos[i] = match (self.vlos[i], other.vlos[i]) {
                (Some(x), Some(y)) => Some(x.min(y)),
                _ => None,
            };
        }
        for (k, c) in &other.terms {
            match self.terms.entry(k.clone()) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(c.clone());
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let s = e.get().clone() + c.clone();
                    if s.is_zero() {
                        e.remove();
                    } else {
                        *e.get_mut() = s;
                    }
                }
            }
        }
        if tightened {
            self.prune();
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let (mut a, b) = if self.vars == other.vars {
            (self.clone(), std::borrow::Cow::Borrowed(other))
        } else {
            let (a, b) = self.aligned(other);
            (a, std::borrow::Cow::Owned(b))
        };
        a.qcap = min_opt(a.qcap, b.qcap);
        for i in 0..a.vcaps.len() {
            a.vcaps[i] = min_opt(a.vcaps[i], b.vcaps[i]);
            a.vlos[i] = match (a.vlos[i], b.vlos[i]) {
                (Some(x), Some(y)) => Some(x.min(y)),
                _ => None,
            };
        }
        for (k, c) in &b.terms {
            match a.terms.entry(k.clone()) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(c.clone());
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let s = e.get().clone() + c.clone();
                    if s.is_zero() {
                        e.remove();
                    } else {
                        *e.get_mut() = s;
                    }
                }
            }
        }
        a.prune();
        a
    }

    pub fn neg(&self) -> Self {
        let mut s = self.clone();
        for v in s.terms.values_mut() {
            *v = -v.clone();
        }
        s
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Rat) -> Self {
        let mut s = self.clone();
        if c.is_zero() {
            s.terms.clear();
            return s;
        }
        for v in s.terms.values_mut() {
            *v = v.clone() * c.clone();
        }
        s
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Self {
        let names: Vec<&str> = m.exps.keys().map(|s| s.as_str()).collect();
        let mut s = self.promote(&names);
        if m.coef.is_zero() {
            s.terms.clear();
            return s;
        }
        let mut shift = vec![0i64; s.vars.len() + 1];
        shift[0] = m.q;
        for (i, v) in s.vars.iter().enumerate() {
            shift[i + 1] = *m.exps.get(v).unwrap_or(&0);
        }
        let mut terms = BTreeMap::new();
        for (k, c) in &s.terms {
            let key: Vec<i64> = k.iter().zip(&shift).map(|(a, b)| a + b).collect();
            terms.insert(key, c.clone() * m.coef.clone());
        }
        s.terms = terms;
        s.qcap = s.qcap.map(|c| c + shift[0]);
        for i in 0..s.vcaps.len() {
            s.vcaps[i] = s.vcaps[i].map(|c| c + shift[i + 1]);
            s.vlos[i] = s.vlos[i].map(|c| c + shift[i + 1]);
        }
        s
    }

    pub fn mul_exact(&self, x: &ExactScalar) -> Self {
        let mut acc = {
            let mut z = self.clone();
            z.terms.clear();
            z
        };
        for (k, c) in x.terms() {
            let m = Monomial::new(c.clone(), *k);
            acc = acc.add(&self.mul_monomial(&m));
        }
        acc
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.vars == other.vars {
            return self.mul_aligned(other);
        }
        let (a, b) = self.aligned(other);
        a.mul_aligned(&b)
    }

    fn mul_aligned(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self, other);
        // certified q window
        let qcap = {
            let ca = a.qcap.map(|c| c + b.qlow());
            let cb = b.qcap.map(|c| c + a.qlow());
            min_opt(ca, cb)
        };
        // certified spectral windows
        let n = a.vars.len();
        let mut vcaps = vec![None; n];
        let mut vlos = vec![None; n];
        for i in 0..n {
            vcaps[i] = match (a.vcaps[i], b.vcaps[i]) {
                (None, None) => None,
                (Some(ca), None) => Some(
                    ca + b.vlos[i].ok_or_else(|| {
                        Error::Window(format!(
                            "cannot certify window of {} in product: right factor has no support lower bound",
                            a.vars[i]
                        ))
                    })?,
                ),
                (None, Some(cb)) => Some(
                    cb + a.vlos[i].ok_or_else(|| {
                        Error::Window(format!(
                            "cannot certify window of {} in product: left factor has no support lower bound",
                            a.vars[i]
                        ))
                    })?,
                ),
                (Some(ca), Some(cb)) => {
                    let x = b.vlos[i].map(|lo| ca + lo);
                    let y = a.vlos[i].map(|lo| cb + lo);
                    match (x, y) {
                        (Some(x), Some(y)) => Some(x.min(y)),
                        (Some(x), None) => Some(x),
                        (None, Some(y)) => Some(y),
                        (None, None) => {
                            return Err(Error::Window(format!(
                                "cannot certify window of {} in product: no support lower bounds",
                                a.vars[i]
                            )))
                        }
                    }
                }
            };
            vlos[i] = match (a.vlos[i], b.vlos[i]) {
                (Some(x), Some(y)) => Some(x + y),
                _ => None,
            };
        }
        let mut terms: BTreeMap<Vec<i64>, Rat> = BTreeMap::new();
        for (ka, ca) in &a.terms {
            for (kb, cb) in &b.terms {
                // keys are lex-ordered with the q exponent first, so once a
                // pair exceeds the certified cap all later pairs do too
                if let Some(c) = qcap {
                    if ka[0] + kb[0] > c {
                        break;
                    }
                }
                let key: Vec<i64> = ka.iter().zip(kb).map(|(x, y)| x + y).collect();
                let mut out = false;
                for (i, vc) in vcaps.iter().enumerate() {
                    if let Some(c) = vc {
                        if key[i + 1] > *c {
                            out = true;
                            break;
                        }
                    }
                }
                if out {
                    continue;
                }
                let v = ca.clone() * cb.clone();
                if v.is_zero() {
                    continue;
                }
                match terms.entry(key) {
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
        }
        Ok(Series {
            vars: a.vars.clone(),
            qcap,
            vcaps,
            vlos,
            terms,
        })
    }

    /// Shrink this series' certified windows to those of `w` (never widening
    /// them), dropping terms that fall outside.  Used by iterative expansions
    /// whose running powers would otherwise accrete ever-growing caps.
    fn clamp_to(mut self, w: &Self) -> Self {
        if let Some(c) = w.qcap {
            self = self.truncate_q(c);
        }
        let wv = w.vars.clone();
        for (i, vc) in w.vcaps.iter().enumerate() {
            if let Some(c) = vc {
                self = self.truncate_var(&wv[i], *c);
            }
        }
        self
    }

    // ------------------------------------------------ transcendental helpers

    /// exp of a series with no constant term.  Terminates when the running
    /// power vanishes inside its own window; fails if that never happens
    /// (missing truncation caps).
    pub fn exp(&self) -> Result<Self> {
        if self.terms.contains_key(&vec![0i64; self.vars.len() + 1]) {
            return Err(Error::Domain("exp of series with constant term".into()));
        }
        let mut acc = Series::one(&[]).promote(
            &self.vars.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        );
        acc.qcap = self.qcap;
        acc.vcaps = self.vcaps.clone();
        let mut power = acc.clone(); // S^k / k!
        let mut k: u64 = 0;
        loop {
            k += 1;
            power = power.mul(self)?.clamp_to(self);
            power = power.scale(&Rat::from((1i64, k)));
            if power.is_zero() {
                break;
            }
            acc = acc.add(&power);
            if k > 10_000 {
                return Err(Error::Window(
                    "exp did not terminate; argument lacks truncation caps".into(),
                ));
            }
        }
        Ok(acc)
    }

    /// log(1 + T) for a series `self = 1 + T` with unit constant term.
    pub fn log1(&self) -> Result<Self> {
        let key0 = vec![0i64; self.vars.len() + 1];
        let c0 = self.terms.get(&key0).cloned().unwrap_or_else(Rat::zero);
        if !c0.is_one() {
            return Err(Error::Domain(format!(
                "log1 needs unit constant term, found {c0}"
            )));
        }
        let mut t = self.clone();
        t.terms.remove(&key0);
        // log(1+T) = sum (-1)^(k+1) T^k / k
        let mut acc = {
            let mut z = t.clone();
            z.terms.clear();
            z
        };
        let mut power = {
            let mut one = Series::one(&[])
                .promote(&t.vars.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            one.qcap = t.qcap;
            one.vcaps = t.vcaps.clone();
            one
        };
        let mut k: i64 = 0;
        loop {
            k += 1;
            power = power.mul(&t)?.clamp_to(&t);
            if power.is_zero() {
                break;
            }
            let sign = if k % 2 == 1 { 1 } else { -1 };
            acc = acc.add(&power.scale(&Rat::from((sign, k))));
            if k > 10_000 {
                return Err(Error::Window(
                    "log did not terminate; argument lacks truncation caps".into(),
                ));
            }
        }
        Ok(acc)
    }

    /// Leading monomial: the term whose exponent vector is componentwise
    /// minimal, if one exists.
    fn leading_monomial(&self) -> Option<(Vec<i64>, Rat)> {
        let mut best: Option<&Vec<i64>> = None;
        for k in self.terms.keys() {
            best = Some(match best {
                None => k,
                Some(b) => {
                    if k.iter().zip(b).all(|(x, y)| x <= y) {
                        k
                    } else {
                        b
                    }
                }
            });
        }
        let b = best?.clone();
        // verify global componentwise minimality
        for k in self.terms.keys() {
            if !b.iter().zip(k).all(|(x, y)| x <= y) {
                return None;
            }
        }
        let c = self.terms[&b].clone();
        Some((b, c))
    }

    /// Leading term for inversion purposes: componentwise-minimal if one
    /// exists, otherwise the unique term of minimal total spectral degree
    /// (var-adic grading), provided the rest of the series has strictly
    /// higher spectral degree in every term.
    fn inversion_lead(&self) -> Option<(Vec<i64>, Rat)> {
        if let Some(l) = self.leading_monomial() {
            return Some(l);
        }
        let deg = |k: &Vec<i64>| -> i64 { k.iter().skip(1).sum() };
        let mut best: Option<&Vec<i64>> = None;
        for k in self.terms.keys() {
            best = Some(match best {
                None => k,
                Some(b) => {
                    if deg(k) < deg(b) {
                        k
                    } else {
                        b
                    }
                }
            });
        }
        let b = best?.clone();
        for k in self.terms.keys() {
            if k != &b {
                // every other term must exceed the lead in each variable
                if !b.iter().skip(1).zip(k.iter().skip(1)).all(|(x, y)| x <= y) {
                    return None;
                }
                if deg(k) <= deg(&b) {
                    return None;
                }
            }
        }
        let c = self.terms[&b].clone();
        Some((b, c))
    }

    /// Geometric-series inverse of a series whose leading monomial divides
    /// every other term (expansion `1/(m(1+T)) = m^(-1) sum (-T)^k`).
    pub fn recip(&self) -> Result<Self> {
        let (lead, c0) = self.inversion_lead().ok_or_else(|| {
            Error::Domain("recip: no componentwise-minimal leading term".into())
        })?;
        let mut t = self.clone();
        // T = self / (c0 * q^lead) - 1
        let mut m = Monomial::new(c0.clone().recip(), -lead[0]);
        for (i, v) in t.vars.clone().iter().enumerate() {
            m = m.with_var_pow(v, -lead[i + 1]);
        }
        t = t.mul_monomial(&m);
        let key0 = vec![0i64; t.vars.len() + 1];
        t.terms.remove(&key0);
        t = t.neg(); // now sum t^k = 1/(1 - t)
        let mut acc = {
            let mut one =
                Series::one(&[]).promote(&t.vars.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            one.qcap = t.qcap;
            one.vcaps = t.vcaps.clone();
            one
        };
        let mut power = acc.clone();
        let mut k = 0u64;
        loop {
            k += 1;
            power = power.mul(&t)?.clamp_to(&t);
            if power.is_zero() {
                break;
            }
            acc = acc.add(&power);
            if k > 10_000 {
                return Err(Error::Window(
                    "recip did not terminate; argument lacks truncation caps".into(),
                ));
            }
        }
        acc = acc.mul_monomial(&m);
        Ok(acc)
    }

    /// Square root of a series with a perfect-square leading monomial.
    pub fn sqrt(&self) -> Result<Self> {
        let (lead, c0) = self
            .leading_monomial()
            .ok_or_else(|| Error::Domain("sqrt: no leading term".into()))?;
        if !c0.is_one() {
            // allow perfect squares of rationals
            let not_square = c0.is_negative() || {
                let n = c0.numer();
                let d = c0.denom();
                let ns = rug::Integer::from(n.sqrt_ref());
                let ds = rug::Integer::from(d.sqrt_ref());
                rug::Integer::from(&ns * &ns) != *n || rug::Integer::from(&ds * &ds) != *d
            };
            if not_square {
                return Err(Error::Domain(format!(
                    "sqrt: leading coefficient {c0} is not a perfect square"
                )));
            }
        }
        for e in &lead {
            if e % 2 != 0 {
                return Err(Error::Lattice(
                    "sqrt: leading exponent is odd on the lattice".into(),
                ));
            }
        }
        let croot = {
            let n = rug::Integer::from(c0.numer().sqrt_ref());
            let d = rug::Integer::from(c0.denom().sqrt_ref());
            Rat::from((n, d))
        };
        let mut minv = Monomial::new(c0.recip(), -lead[0]);
        for (i, v) in self.vars.iter().enumerate() {
            minv = minv.with_var_pow(v, -lead[i + 1]);
        }
        let unit = self.mul_monomial(&minv); // 1 + T
        let halflog = unit.log1()?.scale(&Rat::from((1, 2)));
        let root_unit = halflog.exp()?;
        let mut mroot = Monomial::new(croot, lead[0] / 2);
        for (i, v) in self.vars.iter().enumerate() {
            mroot = mroot.with_var_pow(v, lead[i + 1] / 2);
        }
        Ok(root_unit.mul_monomial(&mroot))
    }

    // -------------------------------------------------------- extraction etc.

    /// Coefficient of `var^(e/2)` as a series in the remaining variables.
    /// Fails if the window of `var` does not include `e`.
    pub fn coeff_var(&self, var: &str, e: i64) -> Result<Series> {
        let i = self
            .var_index(var)
            .ok_or_else(|| Error::Domain(format!("unknown variable {var}")))?;
        if let Some(c) = self.vcaps[i] {
            if e > c {
                return Err(Error::Window(format!(
                    "coefficient of {var}^({e}/2) outside certified window (cap {c})"
                )));
            }
        }
        let rest: Vec<String> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| v.clone())
            .collect();
        let mut out = Series::zero(&rest.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        out.qcap = self.qcap;
        let mut jj = 0;
        for (j, _) in self.vars.iter().enumerate() {
            if j == i {
                continue;
            }
            out.vcaps[jj] = self.vcaps[j];
            out.vlos[jj] = self.vlos[j];
            jj += 1;
        }
        for (k, c) in &self.terms {
            if k[i + 1] != e {
                continue;
            }
            let mut key = Vec::with_capacity(self.vars.len());
            key.push(k[0]);
            for (j, x) in k.iter().skip(1).enumerate() {
                if j != i {
                    key.push(*x);
                }
            }
            out.terms.insert(key, c.clone());
        }
        Ok(out)
    }

    /// Constant term in every spectral variable (exponent 0), as a pure
    /// q-series.
    pub fn const_term(&self) -> Result<Series> {
        let mut s = self.clone();
        for v in self.vars.clone() {
            s = s.coeff_var(&v, 0)?;
        }
        Ok(s)
    }

    /// Substitute `var -> m` where `m` is an exact monomial (which may
    /// contain `var` itself, e.g. a rescaling `w -> q^a w`).
    pub fn substitute(&self, var: &str, m: &Monomial) -> Result<Series> {
        let _i = match self.var_index(var) {
            Some(i) => i,
            None => return Ok(self.clone()),
        };
        let extra: Vec<&str> = m.exps.keys().map(|s| s.as_str()).collect();
        let wide = self.promote(&extra);
        let iw = wide.var_index(var).unwrap();
        let mut out = {
            let mut z = wide.clone();
            z.terms.clear();
            z
        };
        // window bookkeeping: exact only for pure rescalings var -> c q^a var;
        // otherwise require untruncated input.
        let pure_rescale = m.exps.len() == 1 && m.exps.get(var) == Some(&2);
        if !pure_rescale && (self.qcap.is_some() || self.vcaps.iter().any(|c| c.is_some())) {
            return Err(Error::Window(
                "substitute into a truncated series is only certified for rescalings".into(),
            ));
        }
        if pure_rescale {
            // q window warps by a * (exponent of var)/2; recertify below.
            let a = m.q;
            if let Some(qc) = wide.qcap {
                let bound = if a >= 0 {
                    wide.vlos[iw].map(|lo| qc + (a * lo).div_euclid(2))
                } else {
                    wide.vcaps[iw].map(|hi| qc + (a * hi).div_euclid(2))
                };
                match bound {
                    Some(b) => out.qcap = Some(b),
                    None => {
                        return Err(Error::Window(
                            "cannot certify q window after rescaling".into(),
                        ))
                    }
                }
            }
        }
        for (k, c) in &wide.terms {
            let e = k[iw + 1]; // half units: the substituted power is e/2
            let mp = if e % 2 == 0 {
                m.pow(e / 2)?
            } else {
                m.pow_rat(e, 2)?
            };
            let mut key = k.clone();
            key[iw + 1] = 0;
            key[0] = k[0] + mp.q;
            for (v, me) in &mp.exps {
                let j = out.var_index(v).unwrap();
                key[j + 1] += me;
            }
            let val = c.clone() * mp.coef.clone();
            if val.is_zero() {
                continue;
            }
            match out.terms.entry(key) {
                std::collections::btree_map::Entry::Vacant(en) => {
                    en.insert(val);
                }
                std::collections::btree_map::Entry::Occupied(mut en) => {
                    let s = en.get().clone() + val;
                    if s.is_zero() {
                        en.remove();
                    } else {
                        *en.get_mut() = s;
                    }
                }
            }
        }
        out.prune();
        Ok(out)
    }

    // ---------------------------------------------------------- comparisons

    /// True if every stored term is zero (they are pruned, so: no terms).
    /// Additionally verifies that the certified window covers the requested
    /// check window.
    pub fn is_zero_within(&self, qwin: i64, vwins: &[(&str, i64)]) -> Result<bool> {
        if let Some(c) = self.qcap {
            if c < qwin {
                return Err(Error::Window(format!(
                    "certified q window {c} smaller than requested {qwin}"
                )));
            }
        }
        for (v, w) in vwins {
            if let Some(i) = self.var_index(v) {
                if let Some(c) = self.vcaps[i] {
                    if c < *w {
                        return Err(Error::Window(format!(
                            "certified window of {v} ({c}) smaller than requested {w}"
                        )));
                    }
                }
            }
        }
        for (k, c) in &self.terms {
            if c.is_zero() {
                continue;
            }
            if k[0] > qwin {
                continue;
            }
            let mut inside = true;
            for (v, w) in vwins {
                if let Some(i) = self.var_index(v) {
                    if k[i + 1] > *w {
                        inside = false;
                        break;
                    }
                }
            }
            if inside {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Certified (lower structural bound, upper window) for `var`, or None
    /// if the variable is absent.
    pub fn var_window(&self, var: &str) -> Option<(Option<i64>, Option<i64>)> {
        let i = self.var_index(var)?;
        Some((self.vlos[i], self.vcaps[i]))
    }

    /// Smallest and largest stored exponent of `var` in half units, or None
    /// if the variable is absent (every term then carries exponent 0).
    pub fn var_support(&self, var: &str) -> Option<(i64, i64)> {
        let i = self.var_index(var)?;
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for k in self.terms.keys() {
            lo = lo.min(k[i + 1]);
            hi = hi.max(k[i + 1]);
        }
        if lo > hi {
            None
        } else {
            Some((lo, hi))
        }
    }

    /// Drop terms whose exponent of `var` lies outside `[lo, hi]` (half
    /// units).  Window metadata is untouched: callers use this only when the
    /// dropped exponents provably cannot contribute to the one coefficient
    /// they will later extract.
    pub fn filter_band(&self, var: &str, lo: i64, hi: i64) -> (Series, Option<i64>) {
        let Some(i) = self.var_index(var) else {
            return if lo <= 0 && 0 <= hi {
                (self.clone(), None)
            } else {
                let q = self.stored_qmin();
                let mut s = self.clone();
                s.terms.clear();
                (s, q)
            };
        };
        let mut s = self.clone();
        let mut dropped: Option<i64> = None;
        s.terms.retain(|k, _| {
            let keep = lo <= k[i + 1] && k[i + 1] <= hi;
            if !keep {
                dropped = Some(dropped.map_or(k[0], |d: i64| d.min(k[0])));
            }
            keep
        });
        (s, dropped)
    }

    /// Group terms by their exponents in the listed variables, returning for
    /// each occurring exponent vector the cofactor series over the remaining
    /// variables.  Metadata (q window, remaining variable windows) carries
    /// over; the listed variables' own windows are the caller's concern.
    pub fn split_by_vars(&self, vars: &[String]) -> Vec<(Vec<i64>, Series)> {
        let idx: Vec<Option<usize>> = vars.iter().map(|v| self.var_index(v)).collect();
        let keep: Vec<usize> = (0..self.vars.len())
            .filter(|i| !idx.contains(&Some(*i)))
            .collect();
        let mut template = Series::zero(
            &keep.iter().map(|&i| self.vars[i].as_str()).collect::<Vec<_>>(),
        );
        template.qcap = self.qcap;
        // template vars are sorted; map kept positions to template positions
        let mut pos: Vec<usize> = Vec::with_capacity(keep.len());
        for &i in &keep {
            let p = template.vars.iter().position(|v| *v == self.vars[i]).unwrap();
            template.vcaps[p] = self.vcaps[i];
            template.vlos[p] = self.vlos[i];
            pos.push(p);
        }
        let mut out: BTreeMap<Vec<i64>, Series> = BTreeMap::new();
        for (k, c) in &self.terms {
            let key: Vec<i64> = idx
                .iter()
                .map(|i| i.map(|j| k[j + 1]).unwrap_or(0))
                .collect();
            let entry = out.entry(key).or_insert_with(|| template.clone());
            let mut nk = vec![0i64; keep.len() + 1];
            nk[0] = k[0];
            for (t, &i) in pos.iter().zip(keep.iter()) {
                nk[t + 1] = k[i + 1];
            }
            entry.terms.insert(nk, c.clone());
        }
        out.into_iter().collect()
    }

    /// Keep only terms with every listed variable's exponent at most the
    /// given bound (used by checks that certify a region by stability).
    pub fn filter_region(&self, vwins: &[(&str, i64)]) -> Series {
        let mut s = self.clone();
        let idx: Vec<(usize, i64)> = vwins
            .iter()
            .filter_map(|(v, w)| s.var_index(v).map(|i| (i, *w)))
            .collect();
        s.terms.retain(|k, _| idx.iter().all(|(i, w)| k[*i + 1] <= *w));
        s
    }

    // -------------------------------------------------------------- numerics

    /// Evaluate at real `0 < q < 1` and complex variable values.  Spectral
    /// exponents are half-integers; odd halves use the principal branch.
    pub fn eval(&self, q: f64, assign: &BTreeMap<String, Complex64>) -> Result<Complex64> {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::Domain("eval requires 0 < q < 1".into()));
        }
        let u = q.powf(0.25);
        let mut sum = Complex64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mut t = Complex64::new(rat_to_f64(c) * u.powi(k[0] as i32), 0.0);
            for (i, v) in self.vars.iter().enumerate() {
                let e = k[i + 1];
                if e == 0 {
                    continue;
                }
                let z = assign.get(v).ok_or_else(|| {
                    Error::Domain(format!("eval: missing assignment for {v}"))
                })?;
                t *= z.powc(Complex64::new(e as f64 / 2.0, 0.0));
            }
            sum += t;
        }
        Ok(sum)
    }

    /// A heuristic bound on the dropped tail at real `q`: magnitude of the
    /// first uncertified q order times a geometric safety factor.
    pub fn tail_bound(&self, q: f64) -> f64 {
        match self.qcap {
            None => 0.0,
            Some(c) => {
                let u = q.powf(0.25);
                let scale: f64 = self
                    .terms
                    .values()
                    .map(|r| rat_to_f64(r).abs())
                    .fold(1.0, f64::max);
                scale * u.powi((c + 1) as i32) / (1.0 - u)
            }
        }
    }

    // ----------------------------------------------------------- serde/pretty

    pub fn to_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|(k, c)| {
                serde_json::json!({
                    "exp": k,
                    "num": c.numer().to_string(),
                    "den": c.denom().to_string(),
                })
            })
            .collect();
        serde_json::json!({
            "vars": self.vars,
            "qcap": self.qcap,
            "vcaps": self.vcaps,
            "vlos": self.vlos,
            "terms": terms,
        })
    }
}

fn min_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (Some(x), None) => Some(x),
        (None, y) => y,
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({})", c)?;
            if k[0] != 0 {
                write!(f, " q^({}/4)", k[0])?;
            }
            for (i, v) in self.vars.iter().enumerate() {
                if k[i + 1] != 0 {
                    write!(f, " {}^({}/2)", v, k[i + 1])?;
                }
            }
        }
        Ok(())
    }
}
