//! Types and compositions used by exact enumeration.

/// Table of `ln n!` for `n = 0..=max`.
#[derive(Debug, Clone)]
pub struct LogFactorial(Vec<f64>);

impl LogFactorial {
    pub fn new(max: usize) -> Self {
        let mut t = Vec::with_capacity(max + 1);
        let mut acc = 0.0;
        t.push(0.0);
        for n in 1..=max {
            acc += (n as f64).ln();
            t.push(acc);
        }
        Self(t)
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0[n]
    }

    /// `ln( n! / prod c_i! * prod p_i^c_i )` for a composition `c` of `n`.
    pub fn log_multinomial(&self, counts: &[u32], probs: &[f64]) -> f64 {
        let n: u32 = counts.iter().sum();
        let mut v = self.get(n as usize);
        for (&c, &p) in counts.iter().zip(probs) {
            if c > 0 {
                v += c as f64 * p.ln() - self.get(c as usize);
            }
        }
        v
    }
}

/// Number of compositions of `n` into `parts` nonnegative parts, saturating.
pub fn composition_count(n: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(n == 0);
    }
    // C(n + parts - 1, parts - 1)
    let r = (parts - 1) as u128;
    let mut acc: u128 = 1;
    for i in 1..=r {
        acc = acc.saturating_mul(n as u128 + i) / i;
    }
    acc
}

/// All compositions of `n` into `parts` parts, in lexicographic order of
/// the reversed vector (first part varies fastest from high to low).
pub fn compositions(n: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for c in (0..=left).rev() {
            cur[i] = c;
            rec(i + 1, left - c, cur, out);
        }
    }
    if parts == 0 {
        if n == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(0, n, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_enumeration() {
        for n in 0..7u32 {
            for parts in 1..5 {
                let c = compositions(n, parts);
                assert_eq!(c.len() as u128, composition_count(n as usize, parts));
                assert!(c.iter().all(|v| v.iter().sum::<u32>() == n));
            }
        }
    }

    #[test]
    fn multinomial_sums_to_one() {
        let lf = LogFactorial::new(20);
        let p = [0.2, 0.5, 0.3];
        let total: f64 = compositions(9, 3).iter().map(|c| lf.log_multinomial(c, &p).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
