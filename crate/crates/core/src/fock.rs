//! Truncated level-one Fock module: oscillator partitions over a lattice of
//! zero-mode charges, with series-valued coefficients.
//!
//! A basis state is `a_{-m_1}^{k_1} ... a_{-m_r}^{k_r} e^{(n + 1/2) Q} |0>`;
//! we record the multiset of negative modes and the integer `n`.  The
//! `P` eigenvalue is `n + 1/2` and the homogeneous degree operator `-d`
//! has eigenvalue `deg + (n + 1/2)^2 / 2` on such a state.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::scalar::{rat_i, Rat};
use crate::series::{Monomial, Series};

/// A monomial basis vector of the Fock module.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FockState {
    /// sorted list of (mode, multiplicity), mode >= 1
    pub parts: Vec<(i64, u32)>,
    /// zero-mode charge: P eigenvalue is n + 1/2
    pub n: i64,
}

impl FockState {
    pub fn vacuum(n: i64) -> Self {
        FockState {
            parts: Vec::new(),
            n,
        }
    }

    /// Total oscillator degree (sum of modes with multiplicity).
    pub fn degree(&self) -> i64 {
        self.parts.iter().map(|(m, k)| m * (*k as i64)).sum()
    }

    pub fn mult(&self, mode: i64) -> u32 {
        self.parts
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, k)| *k)
            .unwrap_or(0)
    }

    /// A copy with the multiplicity of `mode` replaced by `k`.
    pub fn with_mult(&self, mode: i64, k: u32) -> Self {
        let mut parts: Vec<(i64, u32)> = self
            .parts
            .iter()
            .cloned()
            .filter(|(m, _)| *m != mode)
            .collect();
        if k > 0 {
            parts.push((mode, k));
        }
        parts.sort();
        FockState { parts, n: self.n }
    }
}

/// The Boltzmann weight `q^{-6 d - P}` on a basis state, as an exact
/// monomial: `q^{6 deg + 3 (n + 1/2)^2 - (n + 1/2)}`.
pub fn trace_weight(s: &FockState) -> Monomial {
    let p2 = 2 * s.n + 1; // 2 * P eigenvalue
    // u units (quarter powers of q): 24*deg + 3*p2^2 - 2*p2
    Monomial::new(rat_i(1), 24 * s.degree() + 3 * p2 * p2 - 2 * p2)
}

/// A finite linear combination of basis states with series coefficients.
#[derive(Clone, Debug, Default)]
pub struct FockVector {
    pub terms: BTreeMap<FockState, Series>,
}

impl FockVector {
    pub fn zero() -> Self {
        FockVector {
            terms: BTreeMap::new(),
        }
    }

    pub fn unit(state: FockState) -> Self {
        let mut v = Self::zero();
        v.terms.insert(state, Series::one(&[]));
        v
    }

    pub fn add_term(&mut self, state: FockState, coef: Series) {
        if coef.is_zero() {
            return;
        }
        match self.terms.entry(state) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coef);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                e.get_mut().add_assign_with(&coef);
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (s, c) in &other.terms {
            out.add_term(s.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::zero();
        for (s, c) in &self.terms {
            out.terms.insert(s.clone(), c.neg());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, f: &Series) -> Result<Self> {
        let mut out = Self::zero();
        for (s, c) in &self.terms {
            out.add_term(s.clone(), c.mul(f)?);
        }
        Ok(out)
    }

    pub fn scale_rat(&self, r: &Rat) -> Self {
        let mut out = Self::zero();
        for (s, c) in &self.terms {
            out.add_term(s.clone(), c.scale(r));
        }
        out
    }

    /// All coefficients vanish inside the given windows.
    pub fn is_zero_within(&self, qwin: i64, vwins: &[(&str, i64)]) -> Result<bool> {
        for c in self.terms.values() {
            if !c.is_zero_within(qwin, vwins)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn partitions_into(budget: i64, max_mode: i64, acc: &mut Vec<(i64, u32)>, out: &mut Vec<Vec<(i64, u32)>>) {
    if budget == 0 {
        out.push(acc.clone());
        return;
    }
    if max_mode == 0 {
        return;
    }
    // multiplicity of max_mode
    let mut k = 0u32;
    loop {
        let used = max_mode * k as i64;
        if used > budget {
            break;
        }
        if k > 0 {
            acc.push((max_mode, k));
        }
        partitions_into(budget - used, max_mode - 1, acc, out);
        if k > 0 {
            acc.pop();
        }
        k += 1;
    }
}

/// All states with oscillator degree at most `cutoff` and |n| <= nmax,
/// in a deterministic order.
pub fn enumerate_basis(cutoff: i64, nmax: i64) -> Vec<FockState> {
    let mut out = Vec::new();
    for deg in 0..=cutoff {
        let mut parts = Vec::new();
        let mut plist = Vec::new();
        partitions_into(deg, deg, &mut parts, &mut plist);
        plist.sort();
        for p in plist {
            let mut sorted = p.clone();
            sorted.sort();
            for n in -nmax..=nmax {
                out.push(FockState {
                    parts: sorted.clone(),
                    n,
                });
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_counts() {
        // degree <= 3 partitions: {}, {1}, {2}, {1,1}, {3}, {2,1}, {1,1,1} = 7
        let b = enumerate_basis(3, 0);
        assert_eq!(b.len(), 7);
        let b2 = enumerate_basis(3, 2);
        assert_eq!(b2.len(), 7 * 5);
    }

    #[test]
    fn weight_exponents() {
        // vacuum n=0: q^{3/4 - 1/2} = q^{1/4} -> 1 u unit
        assert_eq!(trace_weight(&FockState::vacuum(0)).q, 1);
        // n=-1: p2=-1: 3 + 2 = 5 u
        assert_eq!(trace_weight(&FockState::vacuum(-1)).q, 5);
        let s = FockState {
            parts: vec![(1, 2), (3, 1)],
            n: 0,
        };
        assert_eq!(trace_weight(&s).q, 24 * 5 + 1);
    }
}
