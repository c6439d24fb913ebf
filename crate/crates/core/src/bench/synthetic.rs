//! Paired banks with a planted constant offset between modalities.

use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{l2_norm, normalized, EmbeddingBank, Modality};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGap {
    pub n_tasks: usize,
    pub dim: usize,
    /// `|c_V - c_L|`.
    pub gap_norm: f64,
    pub intra_noise_std: f64,
    pub rows_per_task: usize,
    /// Direction of `c_V - c_L`; a random unit vector when `None`.
    pub gap_direction: Option<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticGap {
    pub fn new(n_tasks: usize, dim: usize, gap_norm: f64, intra_noise_std: f64, seed: u64) -> Self {
        Self {
            n_tasks,
            dim,
            gap_norm,
            intra_noise_std,
            rows_per_task: 1,
            gap_direction: None,
            seed,
        }
    }
}

fn gaussian(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v = gaussian(dim, rng);
        if l2_norm(&v) > 1e-12 {
            return normalized(&v).expect("nonzero");
        }
    }
}

/// Visual rows `normalize(z_k + eps) + c_V`, text rows
/// `normalize(z_k + eps') + c_L`, with `c_V - c_L` of norm `gap_norm`.
pub fn synthetic_gap_bank(
    n_tasks: usize,
    dim: usize,
    gap_norm: f64,
    intra_noise_std: f64,
    seed: u64,
) -> Result<(EmbeddingBank, EmbeddingBank)> {
    synthetic_gap_banks(&SyntheticGap::new(
        n_tasks,
        dim,
        gap_norm,
        intra_noise_std,
        seed,
    ))
}

pub fn synthetic_gap_banks(cfg: &SyntheticGap) -> Result<(EmbeddingBank, EmbeddingBank)> {
    if cfg.dim < 2 {
        return Err(Error::Parameter(format!(
            "dim must be at least 2, got {}",
            cfg.dim
        )));
    }
    if !(cfg.gap_norm >= 0.0 && cfg.gap_norm.is_finite()) {
        return Err(Error::Parameter(
            "gap_norm must be finite and nonnegative".into(),
        ));
    }
    if !(cfg.intra_noise_std >= 0.0 && cfg.intra_noise_std.is_finite()) {
        return Err(Error::Parameter(
            "intra_noise_std must be finite and nonnegative".into(),
        ));
    }
    let mut rng = substream(cfg.seed, &[domain::SYNTHETIC]);
    let direction = match &cfg.gap_direction {
        Some(d) if d.len() != cfg.dim => {
            return Err(Error::Dimension(format!(
                "gap direction has {} coordinates, dim is {}",
                d.len(),
                cfg.dim
            )))
        }
        Some(d) => normalized(d)?,
        None => random_unit(cfg.dim, &mut rng),
    };
    let center = gaussian(cfg.dim, &mut rng);
    let c_v: Vec<f64> = center
        .iter()
        .zip(&direction)
        .map(|(c, d)| c + 0.5 * cfg.gap_norm * d)
        .collect();
    let c_l: Vec<f64> = center
        .iter()
        .zip(&direction)
        .map(|(c, d)| c - 0.5 * cfg.gap_norm * d)
        .collect();

    let mut bank_v = EmbeddingBank::new(Modality::Visual, cfg.dim)?;
    let mut bank_l = EmbeddingBank::new(Modality::Text, cfg.dim)?;
    for k in 0..cfg.n_tasks {
        let task_id = format!("task{k}");
        let z = random_unit(cfg.dim, &mut rng);
        for _ in 0..cfg.rows_per_task {
            for (bank, offset) in [(&mut bank_v, &c_v), (&mut bank_l, &c_l)] {
                let noisy: Vec<f64> = z
                    .iter()
                    .map(|x| {
                        x + cfg.intra_noise_std
                            * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                    })
                    .collect();
                let row: Vec<f64> = normalized(&noisy)?
                    .iter()
                    .zip(offset.iter())
                    .map(|(a, b)| a + b)
                    .collect();
                bank.push(task_id.clone(), &row)?;
            }
        }
    }
    Ok((bank_v, bank_l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{gap_report, gap_vector};

    #[test]
    fn zero_gap_zero_noise_gives_identical_pairs() {
        let (v, l) = synthetic_gap_bank(8, 6, 0.0, 0.0, 3).unwrap();
        assert_eq!(v.as_flat(), l.as_flat());
        let r = gap_report(&v, &l).unwrap();
        assert_eq!(r.retrieval_top1_v2t, 1.0);
        assert_eq!(r.retrieval_top1_t2v, 1.0);
    }

    #[test]
    fn planted_gap_direction() {
        let mut cfg = SyntheticGap::new(30, 5, 3.0, 0.0, 1);
        cfg.gap_direction = Some(vec![0.0, 0.0, 2.0, 0.0, 0.0]);
        let (v, l) = synthetic_gap_banks(&cfg).unwrap();
        let g = gap_vector(&v, &l).unwrap();
        assert!((g[2] - 3.0).abs() < 1e-12);
        assert!(g.iter().enumerate().all(|(i, x)| i == 2 || x.abs() < 1e-12));
    }

    #[test]
    fn rejects_small_dim() {
        assert!(matches!(
            synthetic_gap_bank(3, 1, 1.0, 0.1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            synthetic_gap_bank(3, 0, 1.0, 0.1, 0),
            Err(Error::Parameter(_))
        ));
    }
}
