//! Berry–Esséen statistics, the backoff `delta_s`, the root `theta_tilde`
//! and second-order approximations of `log M`.

pub mod gaussian;

use serde::Serialize;

pub use gaussian::{q_func, q_inv};

use crate::error::{Error, Result};
use crate::model::{third_abs_moment, validate_model, ModelMoments, SourceModel};

/// Default Berry–Esséen constant.
pub const DEFAULT_C0: f64 = 0.56;

/// Per-sequence Berry–Esséen statistics of the hidden-source distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BEStats {
    /// `(1/k) sum (phi(x_i) - z_i)^2`.
    pub theta: f64,
    pub mu_k: f64,
    pub v_k: f64,
    /// Average per-letter third absolute central moment.
    pub t_k: f64,
    pub b_k: f64,
}

/// Evaluates [`BEStats`] with a per-pair table of third moments.
#[derive(Debug, Clone)]
pub struct BeCalculator {
    moments: ModelMoments,
    nz: usize,
    offsets: Vec<f64>,
    third: Vec<f64>,
    c0: f64,
}

impl BeCalculator {
    pub fn new(model: &SourceModel, c0: f64) -> Result<Self> {
        check_c0(c0)?;
        let moments = validate_model(model)?;
        let nz = model.nz();
        let mut offsets = Vec::with_capacity(model.nx() * nz);
        let mut third = Vec::with_capacity(model.nx() * nz);
        for x in 0..model.nx() {
            for z in 0..nz {
                let a = model.offset(x, z);
                offsets.push(a);
                third.push(third_abs_moment(model.noise(), a, moments.sigma_w2));
            }
        }
        Ok(Self {
            moments,
            nz,
            offsets,
            third,
            c0,
        })
    }

    pub fn moments(&self) -> &ModelMoments {
        &self.moments
    }

    pub fn stats(&self, x: &[usize], z: &[usize]) -> Result<BEStats> {
        if x.len() != z.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: z.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::Domain("blocklength must be >= 1".into()));
        }
        let k = x.len() as f64;
        let mut theta = 0.0;
        let mut t = 0.0;
        for (&xi, &zi) in x.iter().zip(z) {
            let nx = self.offsets.len() / self.nz;
            if xi >= nx {
                return Err(Error::SymbolOutOfRange { index: xi, size: nx });
            }
            if zi >= self.nz {
                return Err(Error::SymbolOutOfRange { index: zi, size: self.nz });
            }
            let idx = xi * self.nz + zi;
            let a = &self.offsets[idx];
            theta += a * a;
            t += self.third[idx];
        }
        theta /= k;
        let t_k = t / k;
        let m = &self.moments;
        let v_k = 4.0 * m.sigma_w2 * theta + m.sigma_w2_var;
        Ok(BEStats {
            theta,
            mu_k: theta + m.sigma_w2,
            v_k,
            t_k,
            b_k: self.c0 * t_k / v_k.powf(1.5),
        })
    }
}

fn check_c0(c0: f64) -> Result<()> {
    if c0.is_finite() && c0 > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("Berry-Esseen constant {c0} must be positive")))
    }
}

pub fn be_stats(model: &SourceModel, x: &[usize], z: &[usize], c0: f64) -> Result<BEStats> {
    BeCalculator::new(model, c0)?.stats(x, z)
}

/// `zeta = c0 T_0 / sigma_{w^2}^3`.
pub fn zeta(model: &SourceModel, c0: f64) -> Result<f64> {
    check_c0(c0)?;
    let m = validate_model(model)?;
    Ok(zeta_from(&m, c0))
}

pub fn zeta_from(m: &ModelMoments, c0: f64) -> f64 {
    c0 * m.t0 / m.sigma_w2_sd.powi(3)
}

/// `Q^{-1}(t - zeta / sqrt(k))`, the quantile shared by `delta_s` and `theta_tilde`.
pub fn backoff_quantile(zeta: f64, t: f64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("blocklength must be >= 1".into()));
    }
    let arg = t - zeta / (k as f64).sqrt();
    q_inv(arg).map_err(|_| {
        Error::Domain(format!(
            "t - zeta/sqrt(k) = {arg} outside (0, 1) at t = {t}, k = {k}, zeta = {zeta}"
        ))
    })
}

/// `delta_s(t, k) = sqrt(V_1 / k) Q^{-1}(t - zeta / sqrt(k))`.
pub fn delta_s(model: &SourceModel, d_s: f64, t: f64, k: u64, c0: f64) -> Result<f64> {
    check_c0(c0)?;
    let m = validate_model(model)?;
    delta_s_from(&m, zeta_from(&m, c0), d_s, t, k)
}

pub fn delta_s_from(m: &ModelMoments, zeta: f64, d_s: f64, t: f64, k: u64) -> Result<f64> {
    let q = backoff_quantile(zeta, t, k)?;
    let v1 = m.v1(d_s);
    if !(v1 > 0.0) {
        return Err(Error::Domain(format!("V_1 = {v1} must be positive")));
    }
    Ok((v1 / k as f64).sqrt() * q)
}

/// `f(theta | t, k) = theta + sqrt((4 sigma_w^2 theta + sigma_{w^2}^2) / k) Q^{-1}(t - zeta/sqrt(k))`.
pub fn f_theta(m: &ModelMoments, zeta: f64, theta: f64, t: f64, k: u64) -> Result<f64> {
    let q = backoff_quantile(zeta, t, k)?;
    let inner = 4.0 * m.sigma_w2 * theta + m.sigma_w2_var;
    if inner < 0.0 {
        return Err(Error::Domain(format!("theta = {theta} makes the variance negative")));
    }
    Ok(theta + (inner / k as f64).sqrt() * q)
}

/// Closed-form root of `f(theta | t, k) = d_s - sigma_w^2`.
pub fn theta_tilde(model: &SourceModel, d_s: f64, t: f64, k: u64, c0: f64) -> Result<f64> {
    check_c0(c0)?;
    let m = validate_model(model)?;
    theta_tilde_from(&m, zeta_from(&m, c0), d_s, t, k)
}

pub fn theta_tilde_from(m: &ModelMoments, zeta: f64, d_s: f64, t: f64, k: u64) -> Result<f64> {
    let q = backoff_quantile(zeta, t, k)?;
    let kf = k as f64;
    let d = d_s - m.sigma_w2;
    let s2 = m.sigma_w2;
    let disc = m.v1(d_s) / kf + 4.0 * s2 * s2 * q * q / (kf * kf);
    if disc < 0.0 {
        return Err(Error::Domain(format!("negative discriminant {disc} at k = {k}")));
    }
    let root = d + 2.0 * s2 * q * q / kf - q * disc.sqrt();
    if 4.0 * s2 * root + m.sigma_w2_var < 0.0 {
        return Err(Error::Domain(format!("root {root} leaves the domain of f")));
    }
    Ok(root)
}

/// Smallest `k` past which `f(. | t, k)` is increasing on `theta >= 0` for
/// every `t` in `[2 zeta / sqrt(k), 1]`.
pub fn monotonicity_threshold(m: &ModelMoments, zeta: f64) -> u64 {
    let ok = |k: u64| -> bool {
        let p = zeta / (k as f64).sqrt();
        if p >= 0.5 {
            return false;
        }
        let q = q_inv(p).unwrap_or(f64::INFINITY).abs();
        2.0 * m.sigma_w2 * q < m.sigma_w2_sd * (k as f64).sqrt()
    };
    let mut hi = 1u64;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    // invariant: !ok(lo) or lo == 0, ok(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Inputs of the second-order approximation of `log M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrderParams {
    pub rate: f64,
    pub v_tilde: f64,
    pub epsilon: f64,
    pub log_k_coeff: f64,
    pub k: u64,
}

/// The three terms of `k R + sqrt(k V) Q^{-1}(eps) + c ln k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrderTerms {
    pub rate_term: f64,
    pub dispersion_term: f64,
    pub logk_term: f64,
}

impl SecondOrderTerms {
    pub fn log_m(&self) -> f64 {
        self.rate_term + self.dispersion_term + self.logk_term
    }
}

pub fn second_order_terms(p: &SecondOrderParams) -> Result<SecondOrderTerms> {
    if !(p.epsilon > 0.0 && p.epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {} outside (0, 1)", p.epsilon)));
    }
    if !(p.v_tilde >= 0.0) || p.k == 0 {
        return Err(Error::Domain("dispersion must be >= 0 and k >= 1".into()));
    }
    let k = p.k as f64;
    Ok(SecondOrderTerms {
        rate_term: k * p.rate,
        dispersion_term: (k * p.v_tilde).sqrt() * q_inv(p.epsilon)?,
        logk_term: p.log_k_coeff * k.ln(),
    })
}

/// `log M` in nats.
pub fn second_order_log_m(p: &SecondOrderParams) -> Result<f64> {
    second_order_terms(p).map(|t| t.log_m())
}

/// `ceil(exp(log_m))`, saturating at `u64::MAX`.
pub fn codebook_size(log_m: f64) -> u64 {
    let m = log_m.exp().ceil();
    if m >= u64::MAX as f64 {
        u64::MAX
    } else {
        (m as u64).max(1)
    }
}

/// Gaussian estimate of the excess probability with its Berry–Esséen half-width.
pub fn excess_prob_gaussian(
    model: &SourceModel,
    x: &[usize],
    z: &[usize],
    d_s: f64,
    c0: f64,
) -> Result<(f64, f64)> {
    let stats = be_stats(model, x, z, c0)?;
    Ok(gaussian_from_stats(&stats, d_s, x.len()))
}

pub fn gaussian_from_stats(stats: &BEStats, d_s: f64, k: usize) -> (f64, f64) {
    let kf = k as f64;
    let estimate = q_func(kf.sqrt() * (d_s - stats.mu_k) / stats.v_k.sqrt());
    (estimate, stats.b_k / kf.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn be_stats_examples() {
        let m = presets::bes();
        let s = be_stats(&m, &[0, 1, 0], &[0, 1, 0], DEFAULT_C0).unwrap();
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.mu_k, 0.125);
        assert_eq!(s.v_k, 0.015625);
        assert!((s.t_k - 0.001953125).abs() < 1e-18);
        assert!((s.b_k - DEFAULT_C0 * 0.001953125 / 0.125f64.powi(3)).abs() < 1e-12);

        let s = be_stats(&m, &[0, 1], &[0, 0], DEFAULT_C0).unwrap();
        assert_eq!((s.theta, s.mu_k, s.v_k), (0.5, 0.625, 0.265625));
        assert!(matches!(
            be_stats(&m, &[0], &[0, 0], DEFAULT_C0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zeta_values() {
        let m = presets::bes();
        let z = zeta(&m, 0.56).unwrap();
        assert!((z - 0.56 * 0.5244140625 / 0.001953125).abs() < 1e-10);
        assert!((zeta(&m, 1.12).unwrap() - 2.0 * z).abs() < 1e-10);
    }

    #[test]
    fn delta_and_theta() {
        let m = presets::wide_noise();
        let mm = validate_model(&m).unwrap();
        let z = zeta_from(&mm, DEFAULT_C0);
        let k = 10_000;
        let t0 = 0.5 + z / (k as f64).sqrt();
        assert_eq!(delta_s_from(&mm, z, 0.52, t0, k).unwrap(), 0.0);
        let th = theta_tilde_from(&mm, z, 0.52, t0, k).unwrap();
        assert!((th - (0.52 - mm.sigma_w2)).abs() < 1e-15);

        let bes = validate_model(&presets::bes()).unwrap();
        assert_eq!(bes.v1(0.375), 0.140625);

        for t in [0.2, 0.5, 0.9] {
            let th = theta_tilde_from(&mm, z, 0.52, t, k).unwrap();
            let f = f_theta(&mm, z, th, t, k).unwrap();
            assert!((f - (0.52 - mm.sigma_w2)).abs() < 1e-12);
            let d = delta_s_from(&mm, z, 0.52, t, k).unwrap();
            assert!(th >= 0.52 - mm.sigma_w2 - d - 1e-15);
        }
        assert!(matches!(
            delta_s_from(&mm, z, 0.52, z / 100.0, k),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn second_order_examples() {
        let p = SecondOrderParams {
            rate: 0.130812035941137,
            v_tilde: 0.16972719761426935,
            epsilon: 0.1,
            log_k_coeff: 0.0,
            k: 1000,
        };
        assert!((second_order_log_m(&p).unwrap() - 147.51).abs() < 0.01);
        let half = SecondOrderParams { epsilon: 0.5, log_k_coeff: 1.5, ..p };
        let t = second_order_terms(&half).unwrap();
        assert_eq!(t.dispersion_term, 0.0);
        assert_eq!(t.log_m(), 1000.0 * p.rate + 1.5 * 1000f64.ln());
    }

    #[test]
    fn threshold_is_minimal() {
        let mm = validate_model(&presets::wide_noise()).unwrap();
        let z = zeta_from(&mm, DEFAULT_C0);
        let k = monotonicity_threshold(&mm, z);
        assert!(k > 1);
        let p = z / (k as f64).sqrt();
        assert!(p < 0.5);
        assert!(2.0 * mm.sigma_w2 * q_inv(p).unwrap().abs() < mm.sigma_w2_sd * (k as f64).sqrt());
    }
}
