//! The 19-vertex R-matrix of the Izergin-Korepin model, its scalar factors,
//! and the standard property checks (Yang-Baxter, unitarity, inversion
//! point, crossing), together with the three-dimensional evaluation
//! representation and its dual.
//!
//! Matrix entries are written once over a small scalar abstraction and
//! instantiated both with exact truncated series and with complex numbers.

use crate::error::{Error, Result};
use crate::products::{poch_expand_many, Budget, ProductSpec};
use crate::scalar::{qint, rat_i, ExactScalar, Rat};
use crate::series::{Monomial, Series};
use num::One;
use num_complex::Complex64;

/// Weight index of the three-dimensional module: states 1, 0, -1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightIndex(pub i8);

pub const STATES: [i8; 3] = [1, 0, -1];

/// crossing charges: rho_1 = -1, rho_0 = 0, rho_{-1} = 1
pub fn rho_charge(i: i8) -> i64 {
    -(i as i64)
}

pub fn state_pos(i: i8) -> usize {
    match i {
        1 => 0,
        0 => 1,
        -1 => 2,
        _ => panic!("bad weight index"),
    }
}

/// Scalar abstraction shared by the exact and numeric regimes.
pub trait RScalar: Clone {
    fn radd(&self, o: &Self) -> Self;
    fn rsub(&self, o: &Self) -> Self;
    fn rmul(&self, o: &Self) -> Self;
    fn rneg(&self) -> Self;
    /// q^(half/2); `self` only provides context (e.g. the numeric q).
    fn qh(&self, half: i64) -> Self;
    fn rint(&self, n: i64) -> Self;
    fn rzero(&self) -> Self;
    fn is_zero_val(&self) -> bool;
}

impl RScalar for Series {
    fn radd(&self, o: &Self) -> Self {
        self.add(o)
    }
    fn rsub(&self, o: &Self) -> Self {
        self.sub(o)
    }
    fn rmul(&self, o: &Self) -> Self {
        self.mul(o).expect("series window certification failed in R-matrix arithmetic")
    }
    fn rneg(&self) -> Self {
        self.neg()
    }
    fn qh(&self, half: i64) -> Self {
        Series::from_monomial(&Monomial::new(Rat::one(), 2 * half))
    }
    fn rint(&self, n: i64) -> Self {
        Series::constant(rat_i(n))
    }
    fn rzero(&self) -> Self {
        Series::zero(&[])
    }
    fn is_zero_val(&self) -> bool {
        self.is_zero()
    }
}

/// Numeric scalar: a complex value carrying the real q it was built at.
#[derive(Clone, Copy, Debug)]
pub struct Cx {
    pub v: Complex64,
    pub q: f64,
}

impl Cx {
    pub fn new(v: Complex64, q: f64) -> Self {
        Cx { v, q }
    }
    pub fn re(q: f64, x: f64) -> Self {
        Cx {
            v: Complex64::new(x, 0.0),
            q,
        }
    }
}

impl RScalar for Cx {
    fn radd(&self, o: &Self) -> Self {
        Cx::new(self.v + o.v, self.q)
    }
    fn rsub(&self, o: &Self) -> Self {
        Cx::new(self.v - o.v, self.q)
    }
    fn rmul(&self, o: &Self) -> Self {
        Cx::new(self.v * o.v, self.q)
    }
    fn rneg(&self) -> Self {
        Cx::new(-self.v, self.q)
    }
    fn qh(&self, half: i64) -> Self {
        Cx::new(
            Complex64::new(self.q.powf(half as f64 / 2.0), 0.0),
            self.q,
        )
    }
    fn rint(&self, n: i64) -> Self {
        Cx::new(Complex64::new(n as f64, 0.0), self.q)
    }
    fn rzero(&self) -> Self {
        Cx::new(Complex64::new(0.0, 0.0), self.q)
    }
    fn is_zero_val(&self) -> bool {
        self.v.norm() == 0.0
    }
}

/// 9x9 matrix over T, indexed by output pair (k,l), input pair (i,j):
/// `R(v_i (x) v_j) = sum R[(k,l)][(i,j)] v_k (x) v_l`.
pub type Mat9<T> = Vec<Vec<T>>;

fn pair(a: i8, b: i8) -> usize {
    3 * state_pos(a) + state_pos(b)
}

/// The 19 nonzero entries of the bare R-matrix, over precomputed inverses
/// `d1i = 1/(z1 q - z2 q^-1)` and `d2i = 1/(z1 q^4 + z2 q)`.
pub fn rbar_with<T: RScalar>(z1: &T, z2: &T, d1i: &T, d2i: &T) -> Mat9<T> {
    let zero = z1.rzero();
    let mut m: Mat9<T> = vec![vec![zero.clone(); 9]; 9];
    let q2 = z1.qh(4); // q^2
    let qm2 = z1.qh(-4);
    let qq = z1.qh(2).rsub(&z1.qh(-2)); // q - q^-1
    let z12 = z1.rsub(z2);
    let dd = d1i.rmul(d2i);

    // upper indices (input) -> lower (output)
    let mut set = |kl: (i8, i8), ij: (i8, i8), v: T| {
        m[pair(kl.0, kl.1)][pair(ij.0, ij.1)] = v;
    };

    set((1, 1), (1, 1), z1.rint(1));
    set((-1, -1), (-1, -1), z1.rint(1));

    let a = qq.rmul(z2).rmul(d1i); // (q-q^-1) z2 / d1
    set((0, -1), (-1, 0), a.clone());
    set((1, 0), (0, 1), a);

    let b = z12.rmul(d1i); // (z1-z2)/d1
    set((-1, 0), (-1, 0), b.clone());
    set((0, -1), (0, -1), b.clone());
    set((1, 0), (1, 0), b.clone());
    set((0, 1), (0, 1), b.clone());

    let c = qq.rmul(z1).rmul(d1i); // (q-q^-1) z1 / d1
    set((-1, 0), (0, -1), c.clone());
    set((0, 1), (1, 0), c);

    // (z1-z2) q^2 (z1 q + z2) / (d1 d2)
    let e = z12
        .rmul(&q2)
        .rmul(&z1.rmul(&z1.qh(2)).radd(z2))
        .rmul(&dd);
    set((-1, 1), (-1, 1), e.clone());
    set((1, -1), (1, -1), e);

    // (q^2-1) z1 (z2 + z2 q^2 + z1 q^3 - z1 q^2) / (d1 d2), input (1,-1)
    let q2m1 = q2.rsub(&z1.rint(1));
    let f = q2m1
        .rmul(z1)
        .rmul(
            &z2.radd(&z2.rmul(&q2))
                .radd(&z1.rmul(&z1.qh(6)))
                .rsub(&z1.rmul(&q2)),
        )
        .rmul(&dd);
    set((-1, 1), (1, -1), f);

    // (q^2-1) z2 (z2 - z2 q + z1 q^3 + z1 q) / (d1 d2), input (-1,1)
    let g = q2m1
        .rmul(z2)
        .rmul(
            &z2.rsub(&z2.rmul(&z1.qh(2)))
                .radd(&z1.rmul(&z1.qh(6)))
                .radd(&z1.rmul(&z1.qh(2))),
        )
        .rmul(&dd);
    set((1, -1), (-1, 1), g);

    // (q-q^-1) q^(7/2) z1 (z1-z2) / (d1 d2), input (1,-1) -> output (0,0)
    let h = qq.rmul(&z1.qh(7)).rmul(z1).rmul(&z12).rmul(&dd);
    set((0, 0), (1, -1), h.clone());
    // and input (0,0) -> output (1,-1): R^{0,0}_{-1,1}... careful below
    // paper: R^{1,-1}_{0,0} = R^{0,0}_{-1,1} = h
    set((-1, 1), (0, 0), h);

    // (q^-1-q) q^(3/2) z2 (z1-z2) / (d1 d2): R^{-1,1}_{0,0} = R^{0,0}_{1,-1}
    let i = qq.rneg().rmul(&z1.qh(3)).rmul(z2).rmul(&z12).rmul(&dd);
    set((0, 0), (-1, 1), i.clone());
    set((1, -1), (0, 0), i);

    // R^{0,0}_{0,0} = (z1-z2)/d1 + (q-q^-1)(q+q^4) z1 z2/(d1 d2)
    let j = z12.rmul(d1i).radd(
        &qq.rmul(&z1.qh(2).radd(&z1.qh(8)))
            .rmul(z1)
            .rmul(z2)
            .rmul(&dd),
    );
    set((0, 0), (0, 0), j);

    let _ = qm2;
    m
}

// ------------------------------------------------------- generic matrix ops

pub fn mat_mul<T: RScalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let zero = a[0][0].rzero();
    let mut out = vec![vec![zero; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = a[0][0].rzero();
            for l in 0..k {
                if a[i][l].is_zero_val() || b[l][j].is_zero_val() {
                    continue;
                }
                acc = acc.radd(&a[i][l].rmul(&b[l][j]));
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn mat_sub<T: RScalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<T>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.rsub(y)).collect())
        .collect()
}

/// Embed a 9x9 two-site matrix into sites (a,b) of a three-site 27-dim space.
/// Sites are 0,1,2; index of (i0,i1,i2) is 9 i0 + 3 i1 + i2.
pub fn embed_two_site<T: RScalar>(m: &Mat9<T>, a: usize, b: usize) -> Vec<Vec<T>> {
    let zero = m[0][0].rzero();
    let mut out = vec![vec![zero; 27]; 27];
    for i0 in 0..3 {
        for i1 in 0..3 {
            for i2 in 0..3 {
                let iin = [i0, i1, i2];
                for o_a in 0..3 {
                    for o_b in 0..3 {
                        let v = &m[3 * o_a + o_b][3 * iin[a] + iin[b]];
                        if v.is_zero_val() {
                            continue;
                        }
                        let mut oo = iin;
                        oo[a] = o_a;
                        oo[b] = o_b;
                        let r = 9 * oo[0] + 3 * oo[1] + oo[2];
                        let c = 9 * i0 + 3 * i1 + i2;
                        out[r][c] = out[r][c].radd(v);
                    }
                }
            }
        }
    }
    out
}

/// Permutation operator on V (x) V as a 9x9 matrix.
pub fn perm9<T: RScalar>(tmpl: &T) -> Mat9<T> {
    let mut m = vec![vec![tmpl.rzero(); 9]; 9];
    for i in 0..3 {
        for j in 0..3 {
            m[3 * j + i][3 * i + j] = tmpl.rint(1);
        }
    }
    m
}

// --------------------------------------------------------- formal R-matrix

/// Formal bare R-matrix with `z1` given by the monomial `marg` (a product of
/// spectral variables and q powers) and `z2 = 1`, expanded within `qcap`
/// u units.  Spectral windows `vcaps` (half units) are used when the
/// denominators need var-adic inversion.
pub fn rbar_series(marg: &Monomial, qcap: i64, vcaps: &[(&str, i64)]) -> Result<Mat9<Series>> {
    let z1 = Series::from_monomial(marg);
    let one = Series::one(&[]);
    let mut d1 = z1.mul_monomial(&Monomial::new(Rat::one(), 4)).sub(
        &Series::from_monomial(&Monomial::new(Rat::one(), -4)),
    );
    let mut d2 = z1.mul_monomial(&Monomial::new(Rat::one(), 16)).add(
        &Series::from_monomial(&Monomial::new(Rat::one(), 4)),
    );
    d1 = d1.truncate_q(4 * qcap + 64);
    d2 = d2.truncate_q(4 * qcap + 64);
    for (v, c) in vcaps {
        d1 = d1.truncate_var(v, *c);
        d2 = d2.truncate_var(v, *c);
    }
    let d1i = d1.recip()?;
    let d2i = d2.recip()?;
    let mut m = rbar_with(&z1, &one, &d1i, &d2i);
    for row in m.iter_mut() {
        for e in row.iter_mut() {
            let mut t = e.clone().truncate_q(qcap);
            for (v, c) in vcaps {
                t = t.truncate_var(v, *c);
            }
            *e = t;
        }
    }
    Ok(m)
}

/// Numeric bare R-matrix at spectral ratio `x` (i.e. z1 = x, z2 = 1).
pub fn rbar_numeric(q: f64, x: Complex64) -> Result<Mat9<Cx>> {
    let z1 = Cx::new(x, q);
    let z2 = Cx::re(q, 1.0);
    let qv = q;
    let d1 = x * qv - qv.powi(-1);
    let d2 = x * qv.powi(4) + qv;
    if d1.norm() < 1e-12 || d2.norm() < 1e-12 {
        return Err(Error::Pole("R-matrix denominator vanishes".into()));
    }
    let d1i = Cx::new(d1.inv(), q);
    let d2i = Cx::new(d2.inv(), q);
    Ok(rbar_with(&z1, &z2, &d1i, &d2i))
}

// ------------------------------------------------------------ scalar factors

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RKind {
    Bare,
    I,
    II,
    U,
}

/// Pochhammer data for r(z): numerator and denominator factor lists of
/// (coefficient sign, q power in u units, power of z).  All bases are q^6.
const R_NUM: [(i64, i64, i64); 4] = [(-1, 12, 1), (1, 8, 1), (1, 24, -1), (-1, 20, -1)];
const R_DEN: [(i64, i64, i64); 4] = [(-1, 12, -1), (1, 8, -1), (1, 24, 1), (-1, 20, 1)];
const RB_NUM: [(i64, i64, i64); 4] = [(1, 16, 1), (-1, 12, 1), (-1, 4, -1), (1, 24, -1)];
const RB_DEN: [(i64, i64, i64); 4] = [(-1, 12, -1), (1, 16, -1), (1, 24, 1), (-1, 4, 1)];
// tau(z) with the (p;p) factors of the four thetas cancelled:
// num: (qz)(q^5/z)(-q^2 z)(-q^4/z), den: (q^5 z)(q/z)(-q^4 z)(-q^2/z)
const TAU_NUM: [(i64, i64, i64); 4] = [(1, 4, 1), (1, 20, -1), (-1, 8, 1), (-1, 16, -1)];
const TAU_DEN: [(i64, i64, i64); 4] = [(1, 20, 1), (1, 4, -1), (-1, 16, 1), (-1, 8, -1)];

fn specs_for(table: &[(i64, i64, i64)], z: &Monomial, inverse: bool) -> Result<Vec<ProductSpec>> {
    let mut out = Vec::new();
    for (sgn, qu, zp) in table {
        let zpow = z.pow(*zp)?;
        let mut arg = zpow;
        arg.q += qu;
        if *sgn < 0 {
            arg.coef = -arg.coef;
        }
        out.push(ProductSpec::new(arg, &[24], inverse));
    }
    Ok(out)
}

/// Symbolic scalar factor for kind I/II/U at argument monomial `z` (which
/// may contain spectral variables), expanded within the budget.
pub fn scalar_factor_series(kind: RKind, z: &Monomial, budget: &Budget) -> Result<Series> {
    match kind {
        RKind::Bare => Ok(Series::one(&[])),
        RKind::I => {
            let mut specs = specs_for(&R_NUM, z, false)?;
            specs.extend(specs_for(&R_DEN, z, true)?);
            let s = poch_expand_many(&specs, budget)?;
            Ok(s.mul_monomial(&z.inv()?))
        }
        RKind::II => {
            let mut specs = specs_for(&RB_NUM, z, false)?;
            specs.extend(specs_for(&RB_DEN, z, true)?);
            poch_expand_many(&specs, budget)
        }
        RKind::U => {
            // rho(z) = r(z) / tau(z q^-1)
            let r = scalar_factor_series(RKind::I, z, budget)?;
            let mut zq = z.clone();
            zq.q -= 4;
            let tinv = tau_inv_series(&zq, budget)?;
            r.mul(&tinv)
        }
    }
}

/// tau(z) as a symbolic series.
pub fn tau_series(z: &Monomial, budget: &Budget) -> Result<Series> {
    let mut specs = specs_for(&TAU_NUM, z, false)?;
    specs.extend(specs_for(&TAU_DEN, z, true)?);
    let s = poch_expand_many(&specs, budget)?;
    Ok(s.mul_monomial(&z.inv()?))
}

fn tau_inv_series(z: &Monomial, budget: &Budget) -> Result<Series> {
    let mut specs = specs_for(&TAU_NUM, z, true)?;
    specs.extend(specs_for(&TAU_DEN, z, false)?);
    let s = poch_expand_many(&specs, budget)?;
    Ok(s.mul_monomial(z))
}

fn poch_ratio_eval(
    q: f64,
    num: &[(i64, i64, i64)],
    den: &[(i64, i64, i64)],
    z: Complex64,
    tol: f64,
) -> Result<Complex64> {
    let base = [Complex64::new(q.powi(6), 0.0)];
    let mut acc = Complex64::new(1.0, 0.0);
    for (sgn, qu, zp) in num {
        let a = Complex64::new(*sgn as f64 * q.powf(*qu as f64 / 4.0), 0.0)
            * z.powi(*zp as i32);
        acc *= crate::products::poch_eval(a, &base, false, tol)?;
    }
    for (sgn, qu, zp) in den {
        let a = Complex64::new(*sgn as f64 * q.powf(*qu as f64 / 4.0), 0.0)
            * z.powi(*zp as i32);
        acc *= crate::products::poch_eval(a, &base, true, tol)?;
    }
    Ok(acc)
}

/// Numeric scalar factor.
pub fn scalar_factor_eval(kind: RKind, q: f64, z: Complex64, tol: f64) -> Result<Complex64> {
    match kind {
        RKind::Bare => Ok(Complex64::new(1.0, 0.0)),
        RKind::I => Ok(poch_ratio_eval(q, &R_NUM, &R_DEN, z, tol)? / z),
        RKind::II => poch_ratio_eval(q, &RB_NUM, &RB_DEN, z, tol),
        RKind::U => {
            let r = scalar_factor_eval(RKind::I, q, z, tol)?;
            let t = tau_eval(q, z / q)?;
            Ok(r / t)
        }
    }
}

/// Numeric tau(z).
pub fn tau_eval(q: f64, z: Complex64) -> Result<Complex64> {
    let n = poch_ratio_eval(q, &TAU_NUM, &TAU_DEN, z, 1e-15)?;
    Ok(n / z)
}

/// One-particle energy eps(z) = -z d/dz log tau(z), computed termwise from
/// the product representation (exact geometric sums of logarithmic
/// derivatives, truncated with a tail bound).
pub fn epsilon_eval(q: f64, z: Complex64) -> Result<Complex64> {
    // -z d/dz log z^{-1} = 1
    let mut acc = Complex64::new(1.0, 0.0);
    let p = q.powi(6);
    // factor (1 - a q^{6k} z^s): -z d/dz log = s a q^{6k} z^s / (1 - a q^{6k} z^s)
    let mut term = |table: &[(i64, i64, i64)], sign: f64| -> Result<()> {
        for (sgn, qu, zp) in table {
            let mut k = 0;
            loop {
                let a = Complex64::new(*sgn as f64 * q.powf(*qu as f64 / 4.0) * p.powi(k), 0.0)
                    * z.powi(*zp as i32);
                if a.norm() < 1e-16 {
                    break;
                }
                let d = Complex64::new(1.0, 0.0) - a;
                if d.norm() < 1e-12 {
                    return Err(Error::Pole("epsilon pole".into()));
                }
                acc += sign * (*zp as f64) * a / d;
                k += 1;
                if k > 4000 {
                    break;
                }
            }
        }
        Ok(())
    };
    term(&TAU_NUM, 1.0)?;
    term(&TAU_DEN, -1.0)?;
    Ok(acc)
}

/// Symmetrized real one-particle energy.
pub fn energy_eval(q: f64, z: Complex64) -> Result<f64> {
    let e = epsilon_eval(q, z)?;
    let ec = epsilon_eval(q, z.conj())?;
    Ok(0.5 * (e + ec.conj()).re)
}

/// Numeric full R-matrix of the given kind.
pub fn r_matrix_numeric(kind: RKind, q: f64, x: Complex64, tol: f64) -> Result<Mat9<Cx>> {
    let bare = rbar_numeric(q, x)?;
    let s = scalar_factor_eval(kind, q, x, tol)?;
    Ok(bare
        .into_iter()
        .map(|row| row.into_iter().map(|e| Cx::new(e.v * s, q)).collect())
        .collect())
}

// ------------------------------------------------------------------- checks

fn mat_max_norm(m: &[Vec<Cx>]) -> f64 {
    m.iter()
        .flat_map(|r| r.iter())
        .map(|c| c.v.norm())
        .fold(0.0, f64::max)
}

/// Formal Yang-Baxter residual for the bare R-matrix at q order `qord`
/// (i.e. u window 4*qord).  The residual of R^I/R^II/R^U is the same matrix
/// multiplied by the common scalar r(z) r(zw) r(w), so bare-exactness plus
/// the scalar unitarity identities covers all kinds.
pub fn ybe_residual_series(qord: i64) -> Result<Series> {
    let qcap = 4 * qord;
    let r12m = rbar_series(&Monomial::var(Rat::one(), 0, "x"), qcap, &[])?;
    let r13m = rbar_series(
        &Monomial::var(Rat::one(), 0, "x").with_var_pow("y", 2),
        qcap,
        &[],
    )?;
    let r23m = rbar_series(&Monomial::var(Rat::one(), 0, "y"), qcap, &[])?;
    let r12 = embed_two_site(&r12m, 0, 1);
    let r13 = embed_two_site(&r13m, 0, 2);
    let r23 = embed_two_site(&r23m, 1, 2);
    let lhs = mat_mul(&mat_mul(&r12, &r13), &r23);
    let rhs = mat_mul(&mat_mul(&r23, &r13), &r12);
    let diff = mat_sub(&lhs, &rhs);
    let mut acc = Series::zero(&["x", "y"]);
    for row in diff {
        for e in row {
            acc = acc.add(&e);
        }
    }
    // second pass: accumulate |entries| is meaningless symbolically; instead
    // return the sum of all entries only if each entry is zero -- callers
    // should use `ybe_entries_zero` below.
    Ok(acc)
}

/// Formal YBE check: every entry of the residual matrix vanishes within the
/// certified window.
pub fn ybe_exact(qord: i64) -> Result<bool> {
    let qcap = 4 * qord;
    let r12m = rbar_series(&Monomial::var(Rat::one(), 0, "x"), qcap, &[])?;
    let r13m = rbar_series(
        &Monomial::var(Rat::one(), 0, "x").with_var_pow("y", 2),
        qcap,
        &[],
    )?;
    let r23m = rbar_series(&Monomial::var(Rat::one(), 0, "y"), qcap, &[])?;
    let r12 = embed_two_site(&r12m, 0, 1);
    let r13 = embed_two_site(&r13m, 0, 2);
    let r23 = embed_two_site(&r23m, 1, 2);
    let lhs = mat_mul(&mat_mul(&r12, &r13), &r23);
    let rhs = mat_mul(&mat_mul(&r23, &r13), &r12);
    for (ra, rb) in lhs.iter().zip(&rhs) {
        for (ea, eb) in ra.iter().zip(rb) {
            let d = ea.sub(eb);
            if !d.is_zero_within(qcap - 8, &[])? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Formal unitarity of the bare matrix: Rbar_12(x) Rbar_21(1/x) = Id.
pub fn unitarity_bare_exact(qord: i64) -> Result<bool> {
    let qcap = 4 * qord;
    let xcap = qcap; // half units; q grading slope >= 1 per half unit is safe here
    let a = rbar_series(&Monomial::var(Rat::one(), 0, "x"), qcap + 4 * xcap, &[("x", xcap)])?;
    // Rbar(1/x): z1 = 1, z2 = x, expanded var-adically in x
    let z1 = Series::one(&["x"]);
    let z2 = Series::from_monomial(&Monomial::var(Rat::one(), 0, "x"));
    let wide = qcap + 4 * xcap;
    let mk = |s: Series| s.truncate_q(wide).truncate_var("x", xcap);
    let d1 = mk(z1
        .mul_monomial(&Monomial::new(Rat::one(), 4))
        .sub(&z2.mul_monomial(&Monomial::new(Rat::one(), -4))));
    let d2 = mk(z1
        .mul_monomial(&Monomial::new(Rat::one(), 16))
        .add(&z2.mul_monomial(&Monomial::new(Rat::one(), 4))));
    let d1i = d1.recip()?;
    let d2i = d2.recip()?;
    let binv = rbar_with(&z1, &z2, &d1i, &d2i);
    // R21(w/z) = P R12(w/z) P
    let p = perm9(&Series::one(&[]));
    let b21 = mat_mul(&mat_mul(&p, &binv), &p);
    let prod = mat_mul(&a, &b21);
    for (i, row) in prod.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let expect = if i == j {
                Series::one(&[])
            } else {
                Series::zero(&[])
            };
            let d = e.sub(&expect);
            if !d
                .filter_region(&[("x", xcap / 2)])
                .truncate_q(qcap)
                .is_zero()
            {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Formal scalar unitarity: s(x) s(1/x) = 1 for kinds I and II.
pub fn scalar_unitarity_exact(kind: RKind, qord: i64) -> Result<bool> {
    let qcap = 4 * qord;
    let xcap = 2 * qord + 4;
    let budget = Budget::varadic(qcap + 4 * xcap, &[("x", xcap)]);
    let zx = Monomial::var(Rat::one(), 0, "x");
    let s1 = scalar_factor_series(kind, &zx, &budget)?;
    let s2 = scalar_factor_series(kind, &zx.inv()?, &budget)?;
    let prod = s1.mul(&s2)?;
    let res = prod.sub(&Series::one(&[]));
    Ok(res
        .filter_region(&[("x", xcap / 2)])
        .truncate_q(qcap)
        .is_zero())
}

/// Rbar(z,z) = P exactly (entries are rational; evaluate the limit z1 = z2
/// symbolically with z1 = z2 = 1 after clearing denominators is not needed:
/// set z1 = x, z2 = x is homogeneous, so z1 = z2 = 1 suffices).
pub fn inversion_point_exact(qord: i64) -> Result<bool> {
    let qcap = 4 * qord;
    // at z1 = z2 = 1: d1 = q - q^-1, d2 = q^4 + q, both exactly invertible
    let one = Series::one(&[]);
    let d1 = Series::from_exact(&ExactScalar::q_half(2).sub(&ExactScalar::q_half(-2)))
        .truncate_q(qcap + 32);
    let d2 = Series::from_exact(&ExactScalar::q_half(8).add(&ExactScalar::q_half(2)))
        .truncate_q(qcap + 32);
    let d1i = d1.recip()?;
    let d2i = d2.recip()?;
    let m = rbar_with(&one, &one, &d1i, &d2i);
    let p = perm9(&Series::one(&[]));
    for i in 0..9 {
        for j in 0..9 {
            let d = m[i][j].sub(&p[i][j]);
            if !d.is_zero_within(qcap - 4, &[])? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Numeric YBE residual (max entry norm) for a kind at spectral points z, w.
pub fn ybe_residual_numeric(
    kind: RKind,
    q: f64,
    z: Complex64,
    w: Complex64,
    tol: f64,
) -> Result<f64> {
    let r12m = r_matrix_numeric(kind, q, z, tol)?;
    let r13m = r_matrix_numeric(kind, q, z * w, tol)?;
    let r23m = r_matrix_numeric(kind, q, w, tol)?;
    let r12 = embed_two_site(&r12m, 0, 1);
    let r13 = embed_two_site(&r13m, 0, 2);
    let r23 = embed_two_site(&r23m, 1, 2);
    let lhs = mat_mul(&mat_mul(&r12, &r13), &r23);
    let rhs = mat_mul(&mat_mul(&r23, &r13), &r12);
    Ok(mat_max_norm(&mat_sub(&lhs, &rhs)))
}

/// Numeric unitarity residual: || R12(x) R21(1/x) - Id ||_max.
pub fn unitarity_residual_numeric(
    kind: RKind,
    q: f64,
    x: Complex64,
    tol: f64,
) -> Result<f64> {
    let a = r_matrix_numeric(kind, q, x, tol)?;
    let binv = r_matrix_numeric(kind, q, x.inv(), tol)?;
    let p = perm9(&Cx::re(q, 1.0));
    let b21 = mat_mul(&mat_mul(&p, &binv), &p);
    let prod = mat_mul(&a, &b21);
    let mut worst = 0.0f64;
    for i in 0..9 {
        for j in 0..9 {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[i][j].v - target).norm());
        }
    }
    Ok(worst)
}

/// Numeric crossing residual for kinds I and II.
pub fn crossing_residual_numeric(kind: RKind, q: f64, z: Complex64, tol: f64) -> Result<f64> {
    let r = r_matrix_numeric(kind, q, z, tol)?;
    let zc = -z.inv() * q.powi(-3);
    let rc = r_matrix_numeric(kind, q, zc, tol)?;
    let mq = Complex64::new(-(q.sqrt()), 0.0);
    let mut worst = 0.0f64;
    for &k in &STATES {
        for &l in &STATES {
            for &m in &STATES {
                for &n in &STATES {
                    // (R)^{k,l}_{m,n}(z): input (k,l), output (m,n)
                    let lhs = r[pair(m, n)][pair(k, l)].v;
                    let rhs = mq.powi(-rho_charge(l) as i32)
                        * rc[pair(-l, m)][pair(-n, k)].v
                        * mq.powi(rho_charge(n) as i32);
                    worst = worst.max((lhs - rhs).norm());
                }
            }
        }
    }
    Ok(worst)
}

/// Numeric inversion-point residual || Rbar(x,x) - P ||.
pub fn inversion_point_numeric(q: f64) -> Result<f64> {
    // z1/z2 -> 1: evaluate at x = 1 + tiny is not needed; entries are
    // continuous there, so evaluate exactly at x = 1.
    let m = rbar_numeric(q, Complex64::new(1.0, 0.0))?;
    let p = perm9(&Cx::re(q, 1.0));
    let d = mat_sub(&m, &p);
    Ok(mat_max_norm(&d))
}

/// Nearest-neighbour Hamiltonian density h = d/du [ P R^I(e^u) ] |_{u=0},
/// computed by Richardson-extrapolated central differences.
pub fn hamiltonian_density(q: f64, tol: f64) -> Result<Vec<Vec<Complex64>>> {
    let p = perm9(&Cx::re(q, 1.0));
    let eval = |u: f64| -> Result<Vec<Vec<Complex64>>> {
        let r = r_matrix_numeric(RKind::I, q, Complex64::new(u.exp(), 0.0), tol)?;
        let pr = mat_mul(&p, &r);
        Ok(pr
            .into_iter()
            .map(|row| row.into_iter().map(|c| c.v).collect())
            .collect())
    };
    let h1 = 1e-4;
    let d = |h: f64| -> Result<Vec<Vec<Complex64>>> {
        let a = eval(h)?;
        let b = eval(-h)?;
        Ok(a
            .iter()
            .zip(&b)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(x, y)| (x - y) / (2.0 * h))
                    .collect()
            })
            .collect())
    };
    let d1 = d(h1)?;
    let d2 = d(h1 / 2.0)?;
    // Richardson: (4 d2 - d1) / 3
    Ok(d1
        .iter()
        .zip(&d2)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| (4.0 * y - x) / 3.0)
                .collect()
        })
        .collect())
}

// ------------------------------------------------- evaluation representation

/// 3x3 matrices over exact series for the evaluation module V_z, with z a
/// spectral variable.  Basis order (v_1, v_0, v_{-1}).
pub struct EvalRep {
    pub e1: Vec<Vec<Series>>,
    pub f1: Vec<Vec<Series>>,
    pub e0: Vec<Vec<Series>>,
    pub f0: Vec<Vec<Series>>,
    pub t1: Vec<Vec<Series>>,
    pub t0: Vec<Vec<Series>>,
    pub alpha: Series,
}

fn zmat3() -> Vec<Vec<Series>> {
    vec![vec![Series::zero(&[]); 3]; 3]
}

/// alpha = ([2]_{q_1} q^(-1/2))^(1/2) = q^(-1/2) (1+q)^(1/2), as a series.
pub fn alpha_series(qcap: i64) -> Result<Series> {
    let a2 = Series::from_exact(
        &qint(2, 1).mul(&ExactScalar::q_half(-1)),
    )
    .truncate_q(qcap);
    a2.sqrt()
}

pub fn eval_rep(qcap: i64) -> Result<EvalRep> {
    let alpha = alpha_series(qcap)?;
    let alpha_inv = alpha.recip()?;
    let two = Series::from_exact(&qint(2, 1));
    let a_inv_2 = alpha_inv.mul(&two)?;
    let z = Series::from_monomial(&Monomial::var(Rat::one(), 0, "z"));
    let zinv = Series::from_monomial(&Monomial::var(Rat::one(), 0, "z").inv().unwrap());

    let mut e1 = zmat3();
    e1[0][1] = a_inv_2.clone(); // E_{1,0}
    e1[1][2] = alpha.clone(); // E_{0,-1}
    let mut f1 = zmat3();
    f1[2][1] = a_inv_2; // E_{-1,0}
    f1[1][0] = alpha.clone(); // E_{0,1}
    let mut e0 = zmat3();
    e0[2][0] = z; // z E_{-1,1}
    let mut f0 = zmat3();
    f0[0][2] = zinv; // z^-1 E_{1,-1}
    let qs = |h: i64| Series::from_exact(&ExactScalar::q_half(h));
    let mut t1 = zmat3();
    t1[0][0] = qs(2);
    t1[1][1] = Series::one(&[]);
    t1[2][2] = qs(-2);
    let mut t0 = zmat3();
    t0[0][0] = qs(-4);
    t0[1][1] = Series::one(&[]);
    t0[2][2] = qs(4);
    Ok(EvalRep {
        e1,
        f1,
        e0,
        f0,
        t1,
        t0,
        alpha,
    })
}

fn smat_mul(a: &[Vec<Series>], b: &[Vec<Series>]) -> Result<Vec<Vec<Series>>> {
    let mut out = zmat3();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Series::zero(&[]);
            for k in 0..3 {
                if a[i][k].is_zero() || b[k][j].is_zero() {
                    continue;
                }
                acc = acc.add(&a[i][k].mul(&b[k][j])?);
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

fn smat_sub(a: &[Vec<Series>], b: &[Vec<Series>]) -> Vec<Vec<Series>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.sub(y)).collect())
        .collect()
}

fn smat_zero_within(m: &[Vec<Series>], qwin: i64) -> Result<bool> {
    for row in m {
        for e in row {
            if !e.is_zero_within(qwin, &[])? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Verify the defining relations of U_q(A_2^(2)) on the evaluation module:
/// Cartan conjugation and [e_i, f_j] relations, exactly within q order `qord`.
pub fn check_evrep(qord: i64) -> Result<bool> {
    let qcap = 4 * qord + 40;
    let rep = eval_rep(qcap)?;
    let qwin = 4 * qord;
    // [e_i, f_j] = delta_ij (t_i - t_i^-1)/(q_i - q_i^-1)
    let comm = |a: &Vec<Vec<Series>>, b: &Vec<Vec<Series>>| -> Result<Vec<Vec<Series>>> {
        Ok(smat_sub(&smat_mul(a, b)?, &smat_mul(b, a)?))
    };
    // i = 1: (t1 - t1^-1)/(q_1 - q_1^-1), q_1 = q^(1/2)
    let c11 = comm(&rep.e1, &rep.f1)?;
    let den1 = ExactScalar::q_half(1).sub(&ExactScalar::q_half(-1));
    let mut rhs11 = zmat3();
    rhs11[0][0] = Series::from_exact(
        &ExactScalar::q_half(2)
            .sub(&ExactScalar::q_half(-2))
            .div_exact(&den1)?,
    );
    rhs11[2][2] = Series::from_exact(
        &ExactScalar::q_half(-2)
            .sub(&ExactScalar::q_half(2))
            .div_exact(&den1)?,
    );
    if !smat_zero_within(&smat_sub(&c11, &rhs11), qwin)? {
        return Ok(false);
    }
    // i = 0: (t0 - t0^-1)/(q_0 - q_0^-1), q_0 = q^2
    let c00 = comm(&rep.e0, &rep.f0)?;
    let den0 = ExactScalar::q_half(4).sub(&ExactScalar::q_half(-4));
    let mut rhs00 = zmat3();
    rhs00[0][0] = Series::from_exact(
        &ExactScalar::q_half(-4)
            .sub(&ExactScalar::q_half(4))
            .div_exact(&den0)?,
    );
    rhs00[2][2] = Series::from_exact(
        &ExactScalar::q_half(4)
            .sub(&ExactScalar::q_half(-4))
            .div_exact(&den0)?,
    );
    if !smat_zero_within(&smat_sub(&c00, &rhs00), qwin)? {
        return Ok(false);
    }
    // mixed: [e1, f0] = [e0, f1] = 0
    if !smat_zero_within(&comm(&rep.e1, &rep.f0)?, qwin)? {
        return Ok(false);
    }
    if !smat_zero_within(&comm(&rep.e0, &rep.f1)?, qwin)? {
        return Ok(false);
    }
    // Cartan conjugations: t_i e_j t_i^-1 = q_i^{a_ij} e_j with
    // a = [[2, -1], [-4, 2]] (rows i = 0, 1; columns j = 0, 1)
    let t1i = {
        let mut m = zmat3();
        m[0][0] = Series::from_exact(&ExactScalar::q_half(-2));
        m[1][1] = Series::one(&[]);
        m[2][2] = Series::from_exact(&ExactScalar::q_half(2));
        m
    };
    let t0i = {
        let mut m = zmat3();
        m[0][0] = Series::from_exact(&ExactScalar::q_half(4));
        m[1][1] = Series::one(&[]);
        m[2][2] = Series::from_exact(&ExactScalar::q_half(-4));
        m
    };
    let scale_mat = |m: &Vec<Vec<Series>>, s: &ExactScalar| -> Vec<Vec<Series>> {
        m.iter()
            .map(|r| r.iter().map(|e| e.mul_exact(s)).collect())
            .collect()
    };
    // q_1^2 = q, q_1^-4 = q^-2, q_0^-1 = q^-2, q_0^2 = q^4
    let cases: Vec<(&Vec<Vec<Series>>, &Vec<Vec<Series>>, &Vec<Vec<Series>>, i64)> = vec![
        (&rep.t1, &rep.e1, &t1i, 2),   // q_1^2 = q^1 -> half units 2
        (&rep.t1, &rep.e0, &t1i, -4),  // q_1^-4 = q^-2
        (&rep.t0, &rep.e1, &t0i, -4),  // q_0^-1 = q^-2
        (&rep.t0, &rep.e0, &t0i, 8),   // q_0^2 = q^4
    ];
    for (t, e, ti, h) in cases {
        let lhs = smat_mul(&smat_mul(t, e)?, ti)?;
        let rhs = scale_mat(e, &ExactScalar::q_half(h));
        if !smat_zero_within(&smat_sub(&lhs, &rhs), qwin)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The dual module twisted by b(x) = (-q)^rhohat S(x) (-q)^(-rhohat): check
/// that C v_i = v*_{-i} intertwines V_z with the twisted dual of V_{z'},
/// and return the argument shift z'/z as a monomial if successful.
///
/// Concretely: with D = diag((-q^(1/2))^(-rho_i)) acting on V, the map
/// x -> D^{-1} pi(S(x))^t D (transpose in the (v_1, v_0, v_{-1}) basis read
/// against the reversed order) must equal pi_{V_{z'}}(x) after conjugating
/// with the antidiagonal C.
pub fn check_dual_iso(qord: i64) -> Result<(bool, String)> {
    let qcap = 4 * qord + 40;
    let qwin = 4 * qord;
    let rep = eval_rep(qcap)?;
    // antipode: S(e1) = -t1^-1 e1, S(f1) = -f1 t1, S(e0) = -t0^-1 e0,
    // S(f0) = -f0 t0, S(t_i) = t_i^-1
    let t1i = {
        let mut m = zmat3();
        m[0][0] = Series::from_exact(&ExactScalar::q_half(-2));
        m[1][1] = Series::one(&[]);
        m[2][2] = Series::from_exact(&ExactScalar::q_half(2));
        m
    };
    let t0i = {
        let mut m = zmat3();
        m[0][0] = Series::from_exact(&ExactScalar::q_half(4));
        m[1][1] = Series::one(&[]);
        m[2][2] = Series::from_exact(&ExactScalar::q_half(-4));
        m
    };
    let neg = |m: Vec<Vec<Series>>| -> Vec<Vec<Series>> {
        m.into_iter()
            .map(|r| r.into_iter().map(|e| e.neg()).collect())
            .collect()
    };
    let s_e1 = neg(smat_mul(&t1i, &rep.e1)?);
    let s_f1 = neg(smat_mul(&rep.f1, &rep.t1)?);
    let s_e0 = neg(smat_mul(&t0i, &rep.e0)?);
    let s_f0 = neg(smat_mul(&rep.f0, &rep.t0)?);
    // twist D = diag((-q^(1/2))^(1), 1, (-q^(1/2))^(-1)) built from the
    // charges rho: D_ii = (-q^(1/2))^(-rho_i)
    let mq = |p: i64| -> Series {
        let mut m = Monomial::new(Rat::one(), 2 * p);
        if p % 2 != 0 {
            m.coef = -m.coef;
        }
        Series::from_monomial(&m)
    };
    let dmat = {
        let mut m = zmat3();
        m[0][0] = mq(-rho_charge(1));
        m[1][1] = mq(-rho_charge(0));
        m[2][2] = mq(-rho_charge(-1));
        m
    };
    let dinv = {
        let mut m = zmat3();
        m[0][0] = mq(rho_charge(1));
        m[1][1] = mq(rho_charge(0));
        m[2][2] = mq(rho_charge(-1));
        m
    };
    // transpose + conjugation by C (antidiagonal): (C M^t C)_{ij} = M_{-j,-i}
    let flip = |m: &Vec<Vec<Series>>| -> Vec<Vec<Series>> {
        let mut out = zmat3();
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[2 - j][2 - i].clone();
            }
        }
        out
    };
    let twist = |m: &Vec<Vec<Series>>| -> Result<Vec<Vec<Series>>> {
        let dm = smat_mul(&dmat, m)?;
        let dmd = smat_mul(&dm, &dinv)?;
        Ok(flip(&dmd))
    };
    let b_e1 = twist(&s_e1)?;
    let b_f1 = twist(&s_f1)?;
    let b_e0 = twist(&s_e0)?;
    let b_f0 = twist(&s_f0)?;
    // the twisted dual must equal the evaluation rep at a shifted argument
    // z' = c z: detect the shift from e0 (entry proportional to z')
    let cand = &b_e0[2][0];
    if cand.num_terms() != 1 {
        return Ok((false, "dual e0 not monomial".into()));
    }
    let (key, coef) = cand.terms().next().unwrap();
    let zi = cand.vars().iter().position(|v| v == "z").unwrap();
    if key[zi + 1] != 2 {
        return Ok((false, "dual e0 not linear in z".into()));
    }
    let shift = Monomial::new(coef.clone(), key[0]);
    let shift_desc = format!("z' = ({}) q^({}/4) z", coef, key[0]);
    // build the evaluation rep at z' and compare all generators
    let sub = |m: &Vec<Vec<Series>>| -> Result<Vec<Vec<Series>>> {
        let mut out = zmat3();
        let zm = {
            let mut s = shift.clone();
            s = s.with_var_pow("z", 2);
            s
        };
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[i][j].substitute("z", &zm)?;
            }
        }
        Ok(out)
    };
    let rep_shift_e1 = sub(&rep.e1)?;
    let rep_shift_f1 = sub(&rep.f1)?;
    let rep_shift_e0 = sub(&rep.e0)?;
    let rep_shift_f0 = sub(&rep.f0)?;
    let ok = smat_zero_within(&smat_sub(&b_e1, &rep_shift_e1), qwin)?
        && smat_zero_within(&smat_sub(&b_f1, &rep_shift_f1), qwin)?
        && smat_zero_within(&smat_sub(&b_e0, &rep_shift_e0), qwin)?
        && smat_zero_within(&smat_sub(&b_f0, &rep_shift_f0), qwin)?;
    Ok((ok, shift_desc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_point_formal() {
        assert!(inversion_point_exact(6).unwrap());
    }

    #[test]
    fn inversion_point_num() {
        assert!(inversion_point_numeric(0.3).unwrap() < 1e-12);
    }

    #[test]
    fn numeric_ybe_bare() {
        let z = Complex64::new(0.7, 0.2);
        let w = Complex64::new(1.3, -0.4);
        let r = ybe_residual_numeric(RKind::Bare, 0.3, z, w, 1e-14).unwrap();
        assert!(r < 1e-12, "bare YBE residual {r}");
    }

    #[test]
    fn numeric_unitarity_i_ii() {
        let x = Complex64::new(0.8, 0.3);
        for kind in [RKind::I, RKind::II] {
            let r = unitarity_residual_numeric(kind, 0.3, x, 1e-14).unwrap();
            assert!(r < 1e-10, "unitarity residual {r} for {kind:?}");
        }
    }

    #[test]
    fn alpha_squares_back() {
        let a = alpha_series(60).unwrap();
        let sq = a.mul(&a).unwrap();
        let expect = Series::from_exact(&qint(2, 1).mul(&ExactScalar::q_half(-1)));
        assert!(sq.sub(&expect).is_zero_within(56, &[]).unwrap());
    }

    #[test]
    fn evrep_relations() {
        assert!(check_evrep(8).unwrap());
    }

    #[test]
    fn tau_at_one_is_one() {
        let t = tau_eval(0.3, Complex64::new(1.0, 0.0)).unwrap();
        assert!((t - 1.0).norm() < 1e-12, "tau(1) = {t}");
    }
}
