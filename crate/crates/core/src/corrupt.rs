//! Latent-space augmentation.
//!
//! Cosine noise resamples a vector at a random cosine similarity
//! `s ~ U[alpha, 1]` from its original direction:
//!
//! ```text
//! out = s * norm(e) + sqrt(1 - s^2) * norm(v - (v.e / e.e) e),   v ~ N(0, I)
//! ```
//!
//! so `cos(out, e) = s` and `|out| = 1`. Gaussian noise adds i.i.d.
//! `N(0, std^2)` to every coordinate and serves as the baseline.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm, normalized, Embedding, EmbeddingBank};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, Rng};

/// Default lower bound on the cosine similarity kept by cosine noise.
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Noise {
    Cosine { alpha: f64 },
    Gaussian { std: f64 },
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Noise::Cosine { alpha } if !(alpha > -1.0 && alpha <= 1.0) => Err(Error::Parameter(
                format!("cosine-noise alpha must lie in (-1, 1], got {alpha}"),
            )),
            Noise::Gaussian { std } if !(std >= 0.0 && std.is_finite()) => Err(Error::Parameter(
                format!("gaussian-noise std must be finite and nonnegative, got {std}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Noise::Cosine { .. } => "cosine",
            Noise::Gaussian { .. } => "gaussian",
        }
    }

    /// `alpha` for cosine noise, `std` for Gaussian noise.
    pub fn strength(&self) -> f64 {
        match *self {
            Noise::Cosine { alpha } => alpha,
            Noise::Gaussian { std } => std,
        }
    }

    /// Corrupts a raw vector.
    pub fn apply(&self, values: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        match *self {
            Noise::Cosine { alpha } => cosine_noise_values(values, alpha, rng),
            Noise::Gaussian { std } => gaussian_noise_values(values, std, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptConfig {
    #[serde(flatten)]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptConfig {
    pub fn cosine(alpha: f64, seed: u64) -> Self {
        Self {
            noise: Noise::Cosine { alpha },
            seed,
        }
    }

    pub fn gaussian(std: f64, seed: u64) -> Self {
        Self {
            noise: Noise::Gaussian { std },
            seed,
        }
    }
}

/// Component of `v` orthogonal to `phi`.
///
/// Fails with [`Error::ParallelVector`] when nothing is left, in which case
/// the caller should draw a new `v`.
pub fn orthogonal_component(v: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    if v.len() != phi.len() {
        return Err(Error::Dimension(format!("{} vs {}", v.len(), phi.len())));
    }
    let pp = dot(phi, phi);
    if pp == 0.0 {
        return Err(Error::DegenerateVector("anchor vector is zero".into()));
    }
    let mut out = v.to_vec();
    // second pass removes what rounding left behind in the first
    for _ in 0..2 {
        let c = dot(&out, phi) / pp;
        out.iter_mut().zip(phi).for_each(|(o, p)| *o -= c * p);
    }
    let scale = l2_norm(v);
    if scale == 0.0 || l2_norm(&out) <= 1e-12 * scale {
        return Err(Error::ParallelVector);
    }
    Ok(out)
}

fn standard_normal_vec(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn cosine_noise_values(values: &[f64], alpha: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    Noise::Cosine { alpha }.validate()?;
    let anchor = normalized(values)?;
    let s = if alpha >= 1.0 {
        1.0
    } else {
        rng.random_range(alpha..=1.0)
    };
    let perp = loop {
        let v = standard_normal_vec(values.len(), rng);
        match orthogonal_component(&v, &anchor) {
            Ok(p) => break normalized(&p)?,
            Err(Error::ParallelVector) => continue,
            Err(e) => return Err(e),
        }
    };
    let c = (1.0 - s * s).max(0.0).sqrt();
    Ok(anchor
        .iter()
        .zip(&perp)
        .map(|(a, p)| s * a + c * p)
        .collect())
}

pub fn gaussian_noise_values(values: &[f64], std: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    Noise::Gaussian { std }.validate()?;
    Ok(values
        .iter()
        .map(|x| x + std * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

fn expect_kind(cfg: &CorruptConfig, kind: &'static str) -> Result<()> {
    if cfg.noise.kind_name() != kind {
        return Err(Error::Parameter(format!(
            "expected {kind} noise config, got {}",
            cfg.noise.kind_name()
        )));
    }
    Ok(())
}

/// Unit-length output whose cosine similarity with `e` is `s ~ U[alpha, 1]`.
pub fn cosine_noise(e: &Embedding, cfg: &CorruptConfig, rng: &mut Rng) -> Result<Embedding> {
    expect_kind(cfg, "cosine")?;
    Embedding::new(cfg.noise.apply(e.values(), rng)?, e.modality())
}

pub fn gaussian_noise(e: &Embedding, cfg: &CorruptConfig, rng: &mut Rng) -> Result<Embedding> {
    expect_kind(cfg, "gaussian")?;
    Embedding::new(cfg.noise.apply(e.values(), rng)?, e.modality())
}

/// Substream used for the row with key `key`.
pub fn row_stream(seed: u64, key: u64) -> Rng {
    substream(seed, &[domain::CORRUPT_ROW, key])
}

/// Corrupts every row, keying each row's noise by its position.
pub fn corrupt_bank(bank: &EmbeddingBank, cfg: &CorruptConfig) -> Result<EmbeddingBank> {
    let keys: Vec<u64> = (0..bank.len() as u64).collect();
    corrupt_bank_keyed(bank, cfg, &keys)
}

/// Corrupts every row with the noise stream of `keys[i]`, so a row's output
/// depends only on its values and key, never on its position.
pub fn corrupt_bank_keyed(
    bank: &EmbeddingBank,
    cfg: &CorruptConfig,
    keys: &[u64],
) -> Result<EmbeddingBank> {
    cfg.noise.validate()?;
    if keys.len() != bank.len() {
        return Err(Error::Parameter(format!(
            "{} keys for {} rows",
            keys.len(),
            bank.len()
        )));
    }
    bank.map_rows(bank.dim(), |i, row| {
        let mut rng = row_stream(cfg.seed, keys[i]);
        cfg.noise
            .apply(row, &mut rng)
            .map_err(|e| Error::Parameter(format!("row {}: {e}", i + 1)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, Modality};
    use crate::rng::substream;

    #[test]
    fn orthogonal_component_examples() {
        assert_eq!(
            orthogonal_component(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            vec![0.0, 1.0]
        );
        assert!(matches!(
            orthogonal_component(&[2.0, 0.0], &[1.0, 0.0]),
            Err(Error::ParallelVector)
        ));
        assert!(matches!(
            orthogonal_component(&[2.0, 0.0], &[0.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
        assert!(matches!(
            orthogonal_component(&[2.0, 0.0, 1.0], &[0.0, 1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn orthogonal_component_random_draws() {
        let mut rng = substream(99, &[0]);
        for _ in 0..1000 {
            let v = standard_normal_vec(16, &mut rng);
            let phi = standard_normal_vec(16, &mut rng);
            let r = orthogonal_component(&v, &phi).unwrap();
            assert!(dot(&r, &phi).abs() < 1e-9 * l2_norm(&r) * l2_norm(&phi));
        }
    }

    #[test]
    fn alpha_one_is_normalization() {
        let e = Embedding::new(vec![3.0, -4.0, 12.0], Modality::Text).unwrap();
        let cfg = CorruptConfig::cosine(1.0, 5);
        let out = cosine_noise(&e, &cfg, &mut substream(5, &[])).unwrap();
        let n = crate::embedding::normalize(&e).unwrap();
        for (a, b) in out.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn default_alpha_bounds_and_determinism() {
        let e = Embedding::new(vec![0.3, -1.2, 0.5, 2.0], Modality::Visual).unwrap();
        let cfg = CorruptConfig::cosine(DEFAULT_ALPHA, 17);
        let mut rng = substream(17, &[1]);
        for _ in 0..200 {
            let out = cosine_noise(&e, &cfg, &mut rng).unwrap();
            let c = cosine(out.values(), e.values()).unwrap();
            assert!((0.2 - 1e-9..=1.0 + 1e-9).contains(&c));
        }
        let a = cosine_noise(&e, &cfg, &mut substream(17, &[2])).unwrap();
        let b = cosine_noise(&e, &cfg, &mut substream(17, &[2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_errors() {
        let e = Embedding::new(vec![1.0, 0.0], Modality::Visual).unwrap();
        let mut rng = substream(0, &[]);
        assert!(gaussian_noise(&e, &CorruptConfig::gaussian(-1.0, 0), &mut rng).is_err());
        assert!(cosine_noise(&e, &CorruptConfig::cosine(1.5, 0), &mut rng).is_err());
        assert!(cosine_noise(&e, &CorruptConfig::gaussian(1.0, 0), &mut rng).is_err());
        let z = Embedding::new(vec![0.0, 0.0], Modality::Visual).unwrap();
        assert!(matches!(
            cosine_noise(&z, &CorruptConfig::cosine(0.2, 0), &mut rng),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn gaussian_zero_std_is_identity() {
        let e = Embedding::new(vec![1.5, -2.0, 0.25], Modality::Visual).unwrap();
        let out =
            gaussian_noise(&e, &CorruptConfig::gaussian(0.0, 3), &mut substream(3, &[])).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn config_serde_shape() {
        let cfg: CorruptConfig =
            serde_json::from_str(r#"{"kind":"cosine","alpha":0.2,"seed":7}"#).unwrap();
        assert_eq!(cfg, CorruptConfig::cosine(0.2, 7));
        let cfg: CorruptConfig = serde_json::from_str(r#"{"kind":"gaussian","std":0.1}"#).unwrap();
        assert_eq!(cfg, CorruptConfig::gaussian(0.1, 0));
    }
}
