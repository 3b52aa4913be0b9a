//! Finite source models `S = phi(X) + W` and their distortion measures.
//!
//! A [`SourceModel`] holds the observed-source law, the deterministic map,
//! the noise law and the reproduction alphabets. Structural checks happen at
//! construction; the noise moment assumptions are checked by
//! [`validate_model`], which also returns the moments every downstream
//! computation needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on probability sums and on the odd noise moments.
pub const PROB_TOL: f64 = 1e-12;

/// Ordered list of real-valued symbol labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alphabet(Vec<f64>);

impl Alphabet {
    pub fn new(symbols: Vec<f64>) -> Result<Self> {
        Self::checked("alphabet", symbols)
    }

    fn checked(key: &'static str, symbols: Vec<f64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidModel {
                key,
                reason: "alphabet is empty".into(),
            });
        }
        if let Some(v) = symbols.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidModel {
                key,
                reason: format!("non-finite label {v}"),
            });
        }
        if symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel {
                key,
                reason: "labels must be strictly increasing".into(),
            });
        }
        Ok(Self(symbols))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[f64] {
        &self.0
    }

    pub fn value(&self, index: usize) -> f64 {
        self.0[index]
    }

    /// Index of the label equal to `value` (exact match).
    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.0.iter().position(|&v| v == value)
    }
}

fn checked_probs(key: &'static str, probs: &[f64], len: usize) -> Result<Vec<f64>> {
    if probs.len() != len {
        return Err(Error::InvalidModel {
            key,
            reason: format!("expected {len} entries, found {}", probs.len()),
        });
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidModel {
            key,
            reason: format!("entry {p} is not a nonnegative finite probability"),
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel {
            key,
            reason: format!("probabilities sum to {total}, not 1"),
        });
    }
    Ok(probs.iter().map(|p| p / total).collect())
}

/// Finite noise law of `W`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidModel {
                key: "noise_support",
                reason: "noise support is empty".into(),
            });
        }
        if let Some(v) = support.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidModel {
                key: "noise_support",
                reason: format!("non-finite value {v}"),
            });
        }
        let probs = checked_probs("noise_probs", &probs, support.len())?;
        Ok(Self { support, probs })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Atoms `(w, P[W = w])`.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    /// Raw moment `E[W^n]`.
    pub fn moment(&self, n: i32) -> f64 {
        self.atoms().map(|(w, p)| p * w.powi(n)).sum()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms().map(|(w, p)| p * f(w)).sum()
    }
}

/// Moments of the noise needed by the Berry–Esséen machinery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelMoments {
    /// `E[W^2]` (equal to `Var[W]` since the noise is centred).
    pub sigma_w2: f64,
    /// `Var[W^2]`.
    pub sigma_w2_var: f64,
    /// `sqrt(Var[W])`.
    pub sigma_w: f64,
    /// `sqrt(Var[W^2])`.
    pub sigma_w2_sd: f64,
    pub e_w4: f64,
    pub e_w6: f64,
    /// Uniform bound on the per-letter third absolute central moment of
    /// `(phi(x) + W - z)^2`, maximised over the finite `(x, z)` grid.
    pub t0: f64,
}

impl ModelMoments {
    /// `V_1 = 4 sigma_w^2 (d_s - sigma_w^2) + sigma_{w^2}^2`.
    pub fn v1(&self, d_s: f64) -> f64 {
        4.0 * self.sigma_w2 * (d_s - self.sigma_w2) + self.sigma_w2_var
    }
}

/// On-disk model description (TOML).
///
/// ```toml
/// x_symbols     = [0.0, 1.0]
/// p_x           = [0.5, 0.5]
/// phi           = [0.0, 1.0]
/// noise_support = [-0.5, 0.0, 0.5]
/// noise_probs   = [0.25, 0.5, 0.25]
/// s_hat_symbols = [0.0, 1.0]
/// x_hat_symbols = [0.0, 1.0]        # optional
/// d_x_table     = [0, 1, 1, 0]      # optional, row-major |X| x |X_hat|
/// ```
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub x_symbols: Vec<f64>,
    pub p_x: Vec<f64>,
    pub phi: Vec<f64>,
    pub noise_support: Vec<f64>,
    pub noise_probs: Vec<f64>,
    pub s_hat_symbols: Vec<f64>,
    #[serde(default)]
    pub x_hat_symbols: Option<Vec<f64>>,
    #[serde(default)]
    pub d_x_table: Option<Vec<f64>>,
}

/// Finite indirect source model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceModel {
    x_alphabet: Alphabet,
    p_x: Vec<f64>,
    phi: Vec<f64>,
    noise: NoiseSpec,
    s_hat: Alphabet,
    x_hat: Option<Alphabet>,
    d_x: Option<Vec<f64>>,
    /// Row-major `|X| x |S_hat|` table of the surrogate distortion.
    surrogate: Vec<f64>,
}

impl SourceModel {
    pub fn new(
        x_alphabet: Alphabet,
        p_x: Vec<f64>,
        phi: Vec<f64>,
        noise: NoiseSpec,
        s_hat: Alphabet,
        observed: Option<(Alphabet, Vec<f64>)>,
    ) -> Result<Self> {
        let nx = x_alphabet.len();
        let p_x = checked_probs("p_x", &p_x, nx)?;
        if phi.len() != nx {
            return Err(Error::InvalidModel {
                key: "phi",
                reason: format!("expected {nx} entries, found {}", phi.len()),
            });
        }
        if let Some(v) = phi.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidModel {
                key: "phi",
                reason: format!("non-finite value {v}"),
            });
        }
        let (x_hat, d_x) = match observed {
            Some((alphabet, table)) => {
                if table.len() != nx * alphabet.len() {
                    return Err(Error::InvalidModel {
                        key: "d_x_table",
                        reason: format!(
                            "expected {} entries ({nx} x {}), found {}",
                            nx * alphabet.len(),
                            alphabet.len(),
                            table.len()
                        ),
                    });
                }
                if let Some(v) = table.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(Error::InvalidModel {
                        key: "d_x_table",
                        reason: format!("entry {v} is not a finite nonnegative distortion"),
                    });
                }
                (Some(alphabet), Some(table))
            }
            None => (None, None),
        };
        let sigma_w2 = noise.moment(2);
        let surrogate = phi
            .iter()
            .flat_map(|&f| s_hat.symbols().iter().map(move |&z| (f - z).powi(2) + sigma_w2))
            .collect();
        Ok(Self {
            x_alphabet,
            p_x,
            phi,
            noise,
            s_hat,
            x_hat,
            d_x,
            surrogate,
        })
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let x_alphabet = Alphabet::checked("x_symbols", file.x_symbols)?;
        let s_hat = Alphabet::checked("s_hat_symbols", file.s_hat_symbols)?;
        let noise = NoiseSpec::new(file.noise_support, file.noise_probs)?;
        let observed = match (file.x_hat_symbols, file.d_x_table) {
            (Some(symbols), Some(table)) => {
                Some((Alphabet::checked("x_hat_symbols", symbols)?, table))
            }
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::InvalidModel {
                    key: "d_x_table",
                    reason: "x_hat_symbols given without d_x_table".into(),
                })
            }
            (None, Some(_)) => {
                return Err(Error::InvalidModel {
                    key: "x_hat_symbols",
                    reason: "d_x_table given without x_hat_symbols".into(),
                })
            }
        };
        Self::new(x_alphabet, file.p_x, file.phi, noise, s_hat, observed)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::InvalidModel {
            key: "model",
            reason: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            x_symbols: self.x_alphabet.symbols().to_vec(),
            p_x: self.p_x.clone(),
            phi: self.phi.clone(),
            noise_support: self.noise.support().to_vec(),
            noise_probs: self.noise.probs().to_vec(),
            s_hat_symbols: self.s_hat.symbols().to_vec(),
            x_hat_symbols: self.x_hat.as_ref().map(|a| a.symbols().to_vec()),
            d_x_table: self.d_x.clone(),
        }
    }

    pub fn x_alphabet(&self) -> &Alphabet {
        &self.x_alphabet
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn s_hat(&self) -> &Alphabet {
        &self.s_hat
    }

    pub fn x_hat(&self) -> Option<&Alphabet> {
        self.x_hat.as_ref()
    }

    pub fn nx(&self) -> usize {
        self.x_alphabet.len()
    }

    pub fn nz(&self) -> usize {
        self.s_hat.len()
    }

    pub fn ny(&self) -> Option<usize> {
        self.x_hat.as_ref().map(Alphabet::len)
    }

    pub fn has_dx(&self) -> bool {
        self.d_x.is_some()
    }

    /// `E[W^2]`; equals `sigma_w^2` for a centred noise.
    pub fn sigma_w2(&self) -> f64 {
        self.noise.moment(2)
    }

    /// `phi(x) - z` for symbol indices.
    pub fn offset(&self, x: usize, z: usize) -> f64 {
        self.phi[x] - self.s_hat.value(z)
    }

    /// Surrogate distortion `(phi(x) - z)^2 + sigma_w^2` for symbol indices.
    pub fn surrogate(&self, x: usize, z: usize) -> f64 {
        self.surrogate[x * self.nz() + z]
    }

    /// Row-major `|X| x |S_hat|` surrogate table.
    pub fn surrogate_table(&self) -> &[f64] {
        &self.surrogate
    }

    /// Per-letter observed-source distortion.
    pub fn d_x(&self, x: usize, y: usize) -> Result<f64> {
        let table = self.d_x.as_ref().ok_or(Error::MissingDxTable)?;
        let ny = self.ny().ok_or(Error::MissingDxTable)?;
        Ok(table[x * ny + y])
    }

    pub fn d_x_table(&self) -> Option<&[f64]> {
        self.d_x.as_deref()
    }

    /// Surrogate distortion at label level: `x` indexes the observed
    /// alphabet, `z` is a reproduction index.
    pub fn surrogate_distortion(&self, x: usize, z: usize) -> f64 {
        self.surrogate(x, z)
    }

    /// Averaged surrogate distortion of index sequences.
    pub fn surrogate_block(&self, x: &[usize], z: &[usize]) -> Result<f64> {
        self.check_indices(x, self.nx())?;
        self.check_indices(z, self.nz())?;
        block_distortion(x, z, |a, b| self.surrogate(a, b))
    }

    /// Averaged observed-source distortion of index sequences.
    pub fn dx_block(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        let ny = self.ny().ok_or(Error::MissingDxTable)?;
        let table = self.d_x.as_ref().ok_or(Error::MissingDxTable)?;
        self.check_indices(x, self.nx())?;
        self.check_indices(y, ny)?;
        block_distortion(x, y, |a, b| table[a * ny + b])
    }

    fn check_indices(&self, seq: &[usize], size: usize) -> Result<()> {
        match seq.iter().find(|&&i| i >= size) {
            Some(&index) => Err(Error::SymbolOutOfRange { index, size }),
            None => Ok(()),
        }
    }
}

/// Arithmetic mean of per-letter distortions over two equal-length blocks.
pub fn block_distortion<A: Copy, B: Copy>(
    a: &[A],
    b: &[B],
    letter: impl Fn(A, B) -> f64,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Domain("blocks must have length k >= 1".into()));
    }
    let total: f64 = a.iter().zip(b).map(|(&x, &y)| letter(x, y)).sum();
    Ok(total / a.len() as f64)
}

/// Separable squared error between a hidden-source block and its reconstruction.
pub fn squared_error(s: &[f64], z: &[f64]) -> Result<f64> {
    block_distortion(s, z, |a, b| (a - b).powi(2))
}

/// Checks the noise moment assumptions and returns the moments.
pub fn validate_model(model: &SourceModel) -> Result<ModelMoments> {
    let noise = model.noise();
    let mean = noise.moment(1);
    if mean.abs() > PROB_TOL {
        return Err(Error::MomentViolation {
            assumption: "E[W] = 0",
            value: mean,
        });
    }
    let third = noise.moment(3);
    if third.abs() > PROB_TOL {
        return Err(Error::MomentViolation {
            assumption: "E[W^3] = 0",
            value: third,
        });
    }
    let sigma_w2 = noise.moment(2);
    if sigma_w2 <= 0.0 {
        return Err(Error::MomentViolation {
            assumption: "E[W^2] > 0",
            value: sigma_w2,
        });
    }
    let e_w4 = noise.moment(4);
    let e_w6 = noise.moment(6);
    let sigma_w2_var = noise.expect(|w| (w * w - sigma_w2).powi(2));
    if sigma_w2_var <= 1e-14 * e_w4 {
        return Err(Error::DegenerateNoise {
            var_w2: sigma_w2_var,
        });
    }
    let mut t0 = 0.0_f64;
    for x in 0..model.nx() {
        for z in 0..model.nz() {
            let a = model.offset(x, z);
            t0 = t0.max(third_abs_moment(noise, a, sigma_w2));
        }
    }
    Ok(ModelMoments {
        sigma_w2,
        sigma_w2_var,
        sigma_w: sigma_w2.sqrt(),
        sigma_w2_sd: sigma_w2_var.sqrt(),
        e_w4,
        e_w6,
        t0,
    })
}

/// `E|W^2 + 2 a W - sigma_w^2|^3` for offset `a = phi(x) - z`.
pub fn third_abs_moment(noise: &NoiseSpec, a: f64, sigma_w2: f64) -> f64 {
    noise.expect(|w| (w * w + 2.0 * a * w - sigma_w2).abs().powi(3))
}

/// Admissible surrogate-distortion interval `(d_s_min, d_s_max)`.
pub fn d_min_max(model: &SourceModel) -> (f64, f64) {
    let nz = model.nz();
    let p_x = model.p_x();
    let d_min = (0..model.nx())
        .map(|x| {
            let best = (0..nz)
                .map(|z| model.surrogate(x, z))
                .fold(f64::INFINITY, f64::min);
            p_x[x] * best
        })
        .sum();
    let d_max = (0..nz)
        .map(|z| (0..model.nx()).map(|x| p_x[x] * model.surrogate(x, z)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (d_min, d_max)
}

/// Admissible observed-source interval `(d_x_min, d_x_max)`.
pub fn dx_min_max(model: &SourceModel) -> Result<(f64, f64)> {
    let ny = model.ny().ok_or(Error::MissingDxTable)?;
    let p_x = model.p_x();
    let mut d_min = 0.0;
    for x in 0..model.nx() {
        let mut best = f64::INFINITY;
        for y in 0..ny {
            best = best.min(model.d_x(x, y)?);
        }
        d_min += p_x[x] * best;
    }
    let mut d_max = f64::INFINITY;
    for y in 0..ny {
        let mut avg = 0.0;
        for x in 0..model.nx() {
            avg += p_x[x] * model.d_x(x, y)?;
        }
        d_max = d_max.min(avg);
    }
    Ok((d_min, d_max))
}

/// Reference models used throughout the tests and shipped as example configs.
pub mod presets {
    use super::*;

    fn build(
        x: &[f64],
        p_x: &[f64],
        phi: &[f64],
        w: &[f64],
        p_w: &[f64],
        s_hat: &[f64],
        observed: Option<(&[f64], &[f64])>,
    ) -> SourceModel {
        SourceModel::new(
            Alphabet::new(x.to_vec()).unwrap(),
            p_x.to_vec(),
            phi.to_vec(),
            NoiseSpec::new(w.to_vec(), p_w.to_vec()).unwrap(),
            Alphabet::new(s_hat.to_vec()).unwrap(),
            observed.map(|(a, t)| (Alphabet::new(a.to_vec()).unwrap(), t.to_vec())),
        )
        .unwrap()
    }

    /// Binary equiprobable source, identity map, three-point noise, with a
    /// Hamming observed-source distortion.
    pub fn bes() -> SourceModel {
        bes_with_px(0.5)
    }

    /// BES geometry with `P[X = 0] = p0`.
    pub fn bes_with_px(p0: f64) -> SourceModel {
        build(
            &[0.0, 1.0],
            &[p0, 1.0 - p0],
            &[0.0, 1.0],
            &[-0.5, 0.0, 0.5],
            &[0.25, 0.5, 0.25],
            &[0.0, 1.0],
            Some((&[0.0, 1.0], &[0.0, 1.0, 1.0, 0.0])),
        )
    }

    /// Four-letter source with three reproduction points and Hamming `d_x`.
    pub fn quaternary() -> SourceModel {
        #[rustfmt::skip]
        let hamming = [
            0.0, 1.0, 1.0, 1.0,
            1.0, 0.0, 1.0, 1.0,
            1.0, 1.0, 0.0, 1.0,
            1.0, 1.0, 1.0, 0.0,
        ];
        build(
            &[0.0, 1.0, 2.0, 3.0],
            &[0.1, 0.2, 0.3, 0.4],
            &[0.0, 1.0, 0.2, 0.8],
            &[-0.5, 0.0, 0.5],
            &[0.25, 0.5, 0.25],
            &[0.0, 0.5, 1.0],
            Some((&[0.0, 1.0, 2.0, 3.0], &hamming)),
        )
    }

    /// Binary source whose noise dominates the reconstruction offsets, so
    /// that the Berry–Esséen ratio stays close to its floor.
    pub fn wide_noise() -> SourceModel {
        build(
            &[0.0, 1.0],
            &[0.5, 0.5],
            &[0.0, 0.2],
            &[-1.0, 0.0, 1.0],
            &[0.25, 0.5, 0.25],
            &[0.0, 0.2],
            Some((&[0.0, 1.0], &[0.0, 1.0, 1.0, 0.0])),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bes_moments() {
        let m = validate_model(&presets::bes()).unwrap();
        assert_eq!(m.sigma_w2, 0.125);
        assert_eq!(m.sigma_w2_var, 0.015625);
        assert_eq!(m.sigma_w2_sd, 0.125);
        // offset 1 maximises the third absolute moment
        assert!((m.t0 - 0.5244140625).abs() < 1e-15);
    }

    fn with_noise(w: &[f64], p: &[f64]) -> SourceModel {
        let bes = presets::bes();
        SourceModel::new(
            bes.x_alphabet().clone(),
            bes.p_x().to_vec(),
            bes.phi().to_vec(),
            NoiseSpec::new(w.to_vec(), p.to_vec()).unwrap(),
            bes.s_hat().clone(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn two_point_noise_is_degenerate() {
        let m = with_noise(&[-0.5, 0.5], &[0.5, 0.5]);
        assert!(matches!(validate_model(&m), Err(Error::DegenerateNoise { .. })));
    }

    #[test]
    fn biased_noise_rejected() {
        let m = with_noise(&[-1.0, 1.0], &[0.3, 0.7]);
        match validate_model(&m) {
            Err(Error::MomentViolation { assumption, value }) => {
                assert_eq!(assumption, "E[W] = 0");
                assert!((value - 0.4).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skewed_noise_rejected() {
        // mean zero, third moment nonzero
        let m = with_noise(&[-1.0, 0.0, 2.0], &[2.0 / 6.0, 3.0 / 6.0, 1.0 / 6.0]);
        assert!(matches!(
            validate_model(&m),
            Err(Error::MomentViolation { assumption: "E[W^3] = 0", .. })
        ));
    }

    #[test]
    fn surrogate_values() {
        let m = presets::bes();
        assert_eq!(m.surrogate_distortion(0, 0), 0.125);
        assert_eq!(m.surrogate_distortion(0, 1), 1.125);
        assert_eq!(m.surrogate_distortion(1, 0), 1.125);
    }

    #[test]
    fn blocks() {
        assert_eq!(squared_error(&[0.5, 1.0, 0.0], &[0.5, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_error(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        let m = presets::bes();
        assert_eq!(m.surrogate_block(&[0, 1], &[0, 0]).unwrap(), 0.625);
        assert!(matches!(
            squared_error(&[1.0], &[0.0, 0.0]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
        assert_eq!(m.dx_block(&[0, 1, 1], &[0, 0, 1]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn admissible_interval() {
        let (lo, hi) = d_min_max(&presets::bes());
        assert_eq!((lo, hi), (0.125, 0.625));

        let bes = presets::bes();
        let three = SourceModel::new(
            bes.x_alphabet().clone(),
            bes.p_x().to_vec(),
            bes.phi().to_vec(),
            bes.noise().clone(),
            Alphabet::new(vec![0.0, 0.5, 1.0]).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(d_min_max(&three), (0.125, 0.375));

        let single = SourceModel::new(
            bes.x_alphabet().clone(),
            bes.p_x().to_vec(),
            bes.phi().to_vec(),
            bes.noise().clone(),
            Alphabet::new(vec![0.3]).unwrap(),
            None,
        )
        .unwrap();
        let (lo, hi) = d_min_max(&single);
        assert!((lo - hi).abs() < 1e-15);
    }

    #[test]
    fn conditional_moments_by_enumeration() {
        for model in [presets::bes(), presets::quaternary(), presets::wide_noise()] {
            let mm = validate_model(&model).unwrap();
            for x in 0..model.nx() {
                for z in 0..model.nz() {
                    let sz = model.s_hat().value(z);
                    let d = |w: f64| (model.phi()[x] + w - sz).powi(2);
                    let mean = model.noise().expect(d);
                    let var = model.noise().expect(|w| (d(w) - mean).powi(2));
                    let a = model.offset(x, z);
                    assert!((mean - model.surrogate(x, z)).abs() < 1e-12);
                    let closed = 4.0 * mm.sigma_w2 * a * a + mm.sigma_w2_var;
                    assert!((var - closed).abs() < 1e-12);
                    assert!(model.surrogate(x, z) - mm.sigma_w2 >= 0.0);
                }
            }
        }
    }

    #[test]
    fn toml_round_trip_and_errors() {
        let text = r#"
            x_symbols = [0.0, 1.0]
            p_x = [0.5, 0.5]
            phi = [0.0, 1.0]
            noise_support = [-0.5, 0.0, 0.5]
            noise_probs = [0.25, 0.5, 0.25]
            s_hat_symbols = [0.0, 1.0]
        "#;
        let m = SourceModel::from_toml_str(text).unwrap();
        assert_eq!(m.nz(), 2);
        assert!(!m.has_dx());

        let bad = text.replace("p_x = [0.5, 0.5]", "p_x = [0.5, 0.6]");
        match SourceModel::from_toml_str(&bad) {
            Err(Error::InvalidModel { key, .. }) => assert_eq!(key, "p_x"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = text.replace("s_hat_symbols = [0.0, 1.0]", "s_hat_symbols = [1.0, 0.0]");
        assert!(matches!(
            SourceModel::from_toml_str(&bad),
            Err(Error::InvalidModel { key: "s_hat_symbols", .. })
        ));
    }

    #[test]
    fn decimal_probabilities_renormalised() {
        let m = SourceModel::new(
            Alphabet::new(vec![0.0, 1.0, 2.0]).unwrap(),
            vec![0.1, 0.2, 0.7],
            vec![0.0, 1.0, 2.0],
            NoiseSpec::new(vec![-0.5, 0.0, 0.5], vec![0.25, 0.5, 0.25]).unwrap(),
            Alphabet::new(vec![0.0]).unwrap(),
            None,
        )
        .unwrap();
        let total: f64 = m.p_x().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
