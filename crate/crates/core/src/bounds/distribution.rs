//! Exact laws of sums of independent finite per-letter distortions.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SourceModel;

/// Atoms closer than this (relative to `max(1, |v|)`) are merged.
pub const MERGE_TOL: f64 = 1e-12;
/// Default cap on the number of atoms after merging.
pub const DEFAULT_ATOM_CAP: usize = 1_000_000;
/// A block average exceeds `d` only if it is larger than `d + EXCEED_TOL`.
pub const EXCEED_TOL: f64 = 1e-12;

/// Finite law given by `(value, probability)` atoms sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionDistribution {
    pub atoms: Vec<(f64, f64)>,
}

impl DistortionDistribution {
    pub fn point(v: f64) -> Self {
        Self { atoms: vec![(v, 1.0)] }
    }

    /// Sorts and merges raw atoms.
    pub fn from_raw(mut raw: Vec<(f64, f64)>, cap: usize) -> Result<Self> {
        raw.retain(|a| a.1 > 0.0);
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (v, p) in raw {
            match atoms.last_mut() {
                Some(last) if v - last.0 <= MERGE_TOL * last.0.abs().max(1.0) => last.1 += p,
                _ => atoms.push((v, p)),
            }
        }
        if atoms.len() > cap {
            return Err(Error::SupportOverflow { atoms: atoms.len(), cap });
        }
        Ok(Self { atoms })
    }

    /// Law of the sum of independent variables with laws `self` and `other`.
    pub fn convolve(&self, other: &Self, cap: usize) -> Result<Self> {
        let mut raw = Vec::with_capacity(self.atoms.len() * other.atoms.len());
        for &(v, p) in &self.atoms {
            for &(w, r) in &other.atoms {
                raw.push((v + w, p * r));
            }
        }
        Self::from_raw(raw, cap)
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `P[value > threshold]`.
    pub fn prob_above(&self, threshold: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 > threshold).map(|a| a.1).sum()
    }

    /// `P[value <= threshold]`.
    pub fn prob_at_most(&self, threshold: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 <= threshold).map(|a| a.1).sum()
    }
}

/// Law of `(phi(x) - z + W)^2`.
pub fn letter_law(model: &SourceModel, x: usize, z: usize) -> DistortionDistribution {
    let a = model.offset(x, z);
    let raw = model.noise().atoms().map(|(w, p)| ((a + w).powi(2), p)).collect();
    DistortionDistribution::from_raw(raw, usize::MAX).expect("uncapped")
}

/// Law of `sum_i (phi(x_i) - z_i + W_i)^2`, convolved in letter order.
pub fn block_sum_law(
    model: &SourceModel,
    x: &[usize],
    z: &[usize],
    cap: usize,
) -> Result<DistortionDistribution> {
    check_pair(model, x, z)?;
    let mut law = DistortionDistribution::point(0.0);
    for (&xi, &zi) in x.iter().zip(z) {
        law = law.convolve(&letter_law(model, xi, zi), cap)?;
    }
    Ok(law)
}

pub(crate) fn check_pair(model: &SourceModel, x: &[usize], z: &[usize]) -> Result<()> {
    if x.len() != z.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: z.len() });
    }
    if x.is_empty() {
        return Err(Error::Domain("blocklength must be >= 1".into()));
    }
    if let Some(&i) = x.iter().find(|&&i| i >= model.nx()) {
        return Err(Error::SymbolOutOfRange { index: i, size: model.nx() });
    }
    if let Some(&i) = z.iter().find(|&&i| i >= model.nz()) {
        return Err(Error::SymbolOutOfRange { index: i, size: model.nz() });
    }
    Ok(())
}

/// Exceedance predicate shared by every exact and sampled evaluation.
pub fn exceeds(sum: f64, k: usize, d: f64) -> bool {
    sum / k as f64 > d + EXCEED_TOL
}

/// `pi(x^k, z^k) = P[d_s(S^k, z^k) > d_s | X^k = x^k]`.
pub fn pi_exact(model: &SourceModel, x: &[usize], z: &[usize], d_s: f64) -> Result<f64> {
    pi_exact_capped(model, x, z, d_s, DEFAULT_ATOM_CAP)
}

pub fn pi_exact_capped(
    model: &SourceModel,
    x: &[usize],
    z: &[usize],
    d_s: f64,
    cap: usize,
) -> Result<f64> {
    let law = block_sum_law(model, x, z, cap)?;
    let k = x.len();
    Ok(law.atoms.iter().filter(|a| exceeds(a.0, k, d_s)).map(|a| a.1).sum())
}

/// Evaluates `pi` from the counts of each per-letter law class, with a
/// shared cache keyed by the count vector.
///
/// Pairs `(x, z)` whose per-letter laws coincide share a class, so `pi`
/// is a function of `k` class counts only.
#[derive(Debug)]
pub struct PiEvaluator {
    k: usize,
    d_s: f64,
    nz: usize,
    class_of: Vec<usize>,
    laws: Vec<DistortionDistribution>,
    cap: usize,
    cache: RwLock<HashMap<Vec<u32>, f64>>,
}

impl PiEvaluator {
    pub fn new(model: &SourceModel, k: usize, d_s: f64) -> Self {
        Self::with_cap(model, k, d_s, DEFAULT_ATOM_CAP)
    }

    pub fn with_cap(model: &SourceModel, k: usize, d_s: f64, cap: usize) -> Self {
        let nz = model.nz();
        let mut laws: Vec<DistortionDistribution> = Vec::new();
        let mut class_of = Vec::with_capacity(model.nx() * nz);
        for x in 0..model.nx() {
            for z in 0..nz {
                let law = letter_law(model, x, z);
                let id = match laws.iter().position(|l| *l == law) {
                    Some(id) => id,
                    None => {
                        laws.push(law);
                        laws.len() - 1
                    }
                };
                class_of.push(id);
            }
        }
        Self {
            k,
            d_s,
            nz,
            class_of,
            laws,
            cap,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_s(&self) -> f64 {
        self.d_s
    }

    pub fn n_classes(&self) -> usize {
        self.laws.len()
    }

    pub fn class(&self, x: usize, z: usize) -> usize {
        self.class_of[x * self.nz + z]
    }

    /// Class counts of a pair of sequences.
    pub fn counts(&self, x: &[usize], z: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.laws.len()];
        for (&xi, &zi) in x.iter().zip(z) {
            c[self.class(xi, zi)] += 1;
        }
        c
    }

    pub fn pi(&self, x: &[usize], z: &[usize]) -> Result<f64> {
        if x.len() != self.k || z.len() != self.k {
            return Err(Error::LengthMismatch { left: x.len(), right: self.k });
        }
        self.pi_counts(&self.counts(x, z))
    }

    pub fn pi_counts(&self, counts: &[u32]) -> Result<f64> {
        if let Some(&v) = self.cache.read().expect("cache lock").get(counts) {
            return Ok(v);
        }
        let mut law = DistortionDistribution::point(0.0);
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                law = law.convolve(&self.laws[class], self.cap)?;
            }
        }
        let v = law
            .atoms
            .iter()
            .filter(|a| exceeds(a.0, self.k, self.d_s))
            .map(|a| a.1)
            .sum();
        self.cache
            .write()
            .expect("cache lock")
            .insert(counts.to_vec(), v);
        Ok(v)
    }
}

/// Exhaustive `pi` over all `|supp(W)|^k` noise realizations.
pub fn pi_brute_force(model: &SourceModel, x: &[usize], z: &[usize], d_s: f64) -> Result<f64> {
    check_pair(model, x, z)?;
    let k = x.len();
    let atoms: Vec<(f64, f64)> = model.noise().atoms().collect();
    let n = atoms.len();
    let total = n.checked_pow(k as u32).ok_or(Error::BudgetExceeded {
        needed: u128::MAX,
        budget: u32::MAX as u128,
    })?;
    let mut digits = vec![0usize; k];
    let mut p_exceed = 0.0;
    for _ in 0..total {
        let mut sum = 0.0;
        let mut prob = 1.0;
        for i in 0..k {
            let (w, p) = atoms[digits[i]];
            sum += (model.offset(x[i], z[i]) + w).powi(2);
            prob *= p;
        }
        if exceeds(sum, k, d_s) {
            p_exceed += prob;
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < n {
                break;
            }
            *d = 0;
        }
    }
    Ok(p_exceed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn small_cases() {
        let m = presets::bes();
        assert_eq!(pi_exact(&m, &[0], &[0], 0.2).unwrap(), 0.5);
        assert_eq!(pi_exact(&m, &[0, 0], &[0, 0], 0.2).unwrap(), 0.25);
        assert_eq!(pi_exact(&m, &[0, 1, 1], &[1, 0, 0], 10.0).unwrap(), 0.0);
    }

    #[test]
    fn evaluator_agrees_with_letter_order() {
        let m = presets::bes();
        // equal offsets and opposite offsets share classes
        let ev = PiEvaluator::new(&m, 4, 0.375);
        assert_eq!(ev.n_classes(), 2);
        let x = [0, 1, 1, 0];
        let z = [0, 0, 1, 1];
        assert_eq!(ev.pi(&x, &z).unwrap(), pi_exact(&m, &x, &z, 0.375).unwrap());
        assert_eq!(
            pi_brute_force(&m, &x, &z, 0.375).unwrap(),
            pi_exact(&m, &x, &z, 0.375).unwrap()
        );
    }

    #[test]
    fn overflow_is_reported() {
        let m = presets::quaternary();
        let x = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let z = vec![0, 1, 2, 0, 1, 2, 0, 1];
        assert!(matches!(
            pi_exact_capped(&m, &x, &z, 0.3, 10),
            Err(Error::SupportOverflow { cap: 10, .. })
        ));
    }

    #[test]
    fn laws_sum_to_one() {
        let m = presets::quaternary();
        let law = block_sum_law(&m, &[0, 1, 2, 3, 3], &[0, 1, 2, 0, 2], DEFAULT_ATOM_CAP).unwrap();
        assert!((law.total() - 1.0).abs() < 1e-12);
    }
}
