//! Complementary Gaussian CDF and its inverse.

use libm::erfc;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Q(t) = P[N(0,1) > t]`.
pub fn q_func(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn phi_density(t: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * t * t).exp()
}

/// `Q^{-1}(p)` for `p` in `(0, 1)`.
///
/// Rational approximation for the lower-tail quantile followed by one
/// Newton step on `Q(t) = p`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("Q^-1 argument {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Q^{-1}(p) = -Phi^{-1}(p)
    let t = -ppnd16(p);
    let dens = phi_density(t);
    if dens > 0.0 {
        Ok(t + (q_func(t) - p) / dens)
    } else {
        Ok(t)
    }
}

/// Lower-tail normal quantile, Wichura's AS 241 (PPND16).
#[allow(clippy::excessive_precision)]
fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e+2,
        1.9715909503065514427e+3,
        1.3731693765509461125e+4,
        4.5921953931549871457e+4,
        6.7265770927008700853e+4,
        3.3430575583588128105e+4,
        2.5090809287301226727e+3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e+1,
        6.8718700749205790830e+2,
        5.3941960214247511077e+3,
        2.1213794301586595867e+4,
        3.9307895800092710610e+4,
        2.8729085735721942674e+4,
        5.2264952788528545610e+3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];
    fn poly(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * r + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let v = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        // High-precision reference values.
        assert!((q_func(1.281552) - 0.09999992375382331).abs() < 1e-15);
        assert!((q_func(-3.0) - 0.9986501019683699).abs() < 1e-15);
        assert!((q_func(10.0) / 7.619853024160526e-24 - 1.0).abs() < 1e-12);
        assert_eq!(q_func(0.0), 0.5);
        assert!((q_inv(1e-9).unwrap() - 5.997807015007687).abs() < 1e-12);
        assert!((q_inv(0.1).unwrap() - 1.2815515655446004).abs() < 1e-13);
        assert!((q_inv(1e-300).unwrap() - 37.047096299361199).abs() < 1e-10);
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
    }

    #[test]
    fn domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inv(p), Err(Error::Domain(_))));
        }
    }

    proptest! {
        #[test]
        fn round_trip(p in 1e-15f64..(1.0 - 1e-15)) {
            let t = q_inv(p).unwrap();
            prop_assert!((q_func(t) - p).abs() <= 1e-12);
        }

        #[test]
        fn round_trip_relative_in_tail(e in -300.0f64..-1.0) {
            let p = 10f64.powf(e);
            let t = q_inv(p).unwrap();
            prop_assert!((q_func(t) / p - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn symmetry(t in -8.0f64..8.0) {
            prop_assert!((q_func(t) + q_func(-t) - 1.0).abs() <= 1e-15);
        }
    }
}
