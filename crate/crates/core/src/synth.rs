//! Synthetic sparse spectra and the oracles that sample them.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::oracle::SpectrumOracle;
use crate::qary::{space_size, QIndex};
use crate::spectral::SparseSpectrum;

/// The finite value alphabet `{rho * phi^a : a < kappa}`, `phi = e^{2 pi i / kappa}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub rho: f64,
    pub kappa: u32,
}

impl Constellation {
    pub fn point(&self, a: u32) -> Complex64 {
        Complex64::from_polar(self.rho, 2.0 * PI * (a % self.kappa) as f64 / self.kappa as f64)
    }

    /// Nearest constellation point to `z`.
    pub fn snap(&self, z: Complex64) -> Complex64 {
        let k = self.kappa as f64;
        let a = (z.arg() * k / (2.0 * PI)).round().rem_euclid(k) as u32;
        self.point(a)
    }

    pub fn contains(&self, z: Complex64, tol: f64) -> bool {
        (self.snap(z) - z).norm() <= tol
    }
}

/// How nonzero coefficients are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ValueModel {
    /// Uniform over a constellation.
    Assumption2 { rho: f64, kappa: u32 },
    /// `V e^{-i Omega}` with `V ~ U[rho_min, rho_max]`, `Omega ~ U[0, 2 pi)`.
    General { rho_min: f64, rho_max: f64 },
}

impl ValueModel {
    pub fn constellation(&self) -> Option<Constellation> {
        match *self {
            ValueModel::Assumption2 { rho, kappa } => Some(Constellation { rho, kappa }),
            ValueModel::General { .. } => None,
        }
    }
}

/// Noise level, either directly or through `SNR = ||F||^2 / sigma^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Sigma2(f64),
    SnrDb(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub q: u32,
    pub n: usize,
    pub sparsity: usize,
    pub values: ValueModel,
    pub noise: NoiseLevel,
    pub support_seed: u64,
    pub value_seed: u64,
    pub noise_seed: u64,
    #[serde(default = "default_caching")]
    pub caching: bool,
}

fn default_caching() -> bool {
    true
}

impl SyntheticSpec {
    /// Derives the three seeds from one base seed.
    pub fn seeded(q: u32, n: usize, sparsity: usize, values: ValueModel, noise: NoiseLevel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        Self {
            q,
            n,
            sparsity,
            values,
            noise,
            support_seed: rng.random(),
            value_seed: rng.random(),
            noise_seed: rng.random(),
            caching: true,
        }
    }
}

pub fn snr_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise variance giving `||F||^2 / sigma^2 = snr`.
pub fn sigma2_for_snr(spectrum: &SparseSpectrum, snr: f64) -> f64 {
    spectrum.energy() / snr
}

/// Draws a random spectrum and wraps it in a lazily evaluating oracle.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(SparseSpectrum, SpectrumOracle)> {
    let size = space_size(spec.q, spec.n)?;
    if spec.sparsity as u64 > size {
        return usage(format!(
            "sparsity {} exceeds the domain size {}^{} = {size}",
            spec.sparsity, spec.q, spec.n
        ));
    }
    match spec.values {
        ValueModel::Assumption2 { rho, kappa } if !(rho > 0.0) || kappa == 0 => {
            return usage("constellation needs rho > 0 and kappa >= 1");
        }
        ValueModel::General { rho_min, rho_max } if !(0.0 < rho_min && rho_min <= rho_max) => {
            return usage("general value model needs 0 < rho_min <= rho_max");
        }
        _ => {}
    }

    let mut support_rng = ChaCha8Rng::seed_from_u64(spec.support_seed);
    let mut ranks: Vec<u64> = sample_distinct(&mut support_rng, size, spec.sparsity);
    ranks.sort_unstable();

    let mut value_rng = ChaCha8Rng::seed_from_u64(spec.value_seed);
    let mut truth = SparseSpectrum::new(spec.q, spec.n);
    for rank in ranks {
        let k = QIndex::unrank(spec.q, spec.n, rank)?;
        let v = match spec.values {
            ValueModel::Assumption2 { rho, kappa } => {
                Constellation { rho, kappa }.point(value_rng.random_range(0..kappa))
            }
            ValueModel::General { rho_min, rho_max } => {
                let mag = if rho_min == rho_max { rho_min } else { value_rng.random_range(rho_min..rho_max) };
                let phase: f64 = value_rng.random_range(0.0..2.0 * PI);
                Complex64::from_polar(mag, -phase)
            }
        };
        truth.insert(k, v)?;
    }

    let sigma2 = match spec.noise {
        NoiseLevel::Sigma2(s) => s,
        NoiseLevel::SnrDb(_) if truth.is_empty() => 0.0,
        NoiseLevel::SnrDb(db) => sigma2_for_snr(&truth, snr_from_db(db)),
    };
    let oracle = SpectrumOracle::new(&truth, sigma2, spec.noise_seed, spec.caching)?;
    Ok((truth, oracle))
}

/// `count` distinct values from `0..size`, uniformly.
fn sample_distinct(rng: &mut ChaCha8Rng, size: u64, count: usize) -> Vec<u64> {
    if size <= usize::MAX as u64 && (count as u64) * 2 > size {
        return rand::seq::index::sample(rng, size as usize, count)
            .into_iter()
            .map(|i| i as u64)
            .collect();
    }
    // Floyd's algorithm: O(count) regardless of size.
    let mut chosen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for j in (size - count as u64)..size {
        let t = rng.random_range(0..=j);
        let pick = if chosen.contains(&t) { j } else { t };
        chosen.insert(pick);
        out.push(pick);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FunctionOracle;
    use crate::qary::{enumerate, inner_product, RootOfUnity};

    #[test]
    fn constellation_values() {
        let spec = SyntheticSpec::seeded(
            4,
            6,
            30,
            ValueModel::Assumption2 { rho: 1.0, kappa: 4 },
            NoiseLevel::Sigma2(0.0),
            11,
        );
        let (truth, _) = synthesize(&spec).unwrap();
        assert_eq!(truth.len(), 30);
        let allowed = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)];
        for (_, v) in truth.iter() {
            assert!(allowed.iter().any(|a| (a - v).norm() < 1e-12), "{v}");
        }
    }

    #[test]
    fn general_magnitudes_in_range() {
        let spec = SyntheticSpec::seeded(3, 5, 40, ValueModel::General { rho_min: 1.0, rho_max: 5.0 }, NoiseLevel::Sigma2(0.0), 2);
        let (truth, _) = synthesize(&spec).unwrap();
        assert!(truth.iter().all(|(_, v)| (1.0..=5.0).contains(&v.norm())));
    }

    #[test]
    fn single_coefficient_oracle_is_exact() {
        let spec = SyntheticSpec::seeded(3, 4, 1, ValueModel::General { rho_min: 2.0, rho_max: 2.0 }, NoiseLevel::Sigma2(0.0), 5);
        let (truth, oracle) = synthesize(&spec).unwrap();
        let (k, v) = truth.iter().next().unwrap();
        let w = RootOfUnity::new(3);
        for m in enumerate(3, 4).unwrap() {
            assert!((oracle.query(&m).unwrap() - v * w.pow(inner_product(&m, k).unwrap() as u64)).norm() < 1e-12);
        }
    }

    #[test]
    fn too_sparse_domain_is_rejected() {
        let spec = SyntheticSpec::seeded(2, 2, 5, ValueModel::General { rho_min: 1.0, rho_max: 1.0 }, NoiseLevel::Sigma2(0.0), 0);
        assert!(synthesize(&spec).is_err());
        // full support is fine
        let spec = SyntheticSpec { sparsity: 4, ..spec };
        assert_eq!(synthesize(&spec).unwrap().0.len(), 4);
    }

    #[test]
    fn empirical_snr_matches_configuration() {
        // q=2, n=8: ||f||^2 / (N sigma_hat^2) against the configured SNR
        let (q, n) = (2, 8);
        let target_db = 5.0;
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let spec = SyntheticSpec::seeded(q, n, 6, ValueModel::Assumption2 { rho: 1.0, kappa: 4 }, NoiseLevel::SnrDb(target_db), seed);
            let (_, oracle) = synthesize(&spec).unwrap();
            let all: Vec<_> = enumerate(q, n).unwrap().collect();
            let noisy = oracle.query_batch(&all).unwrap();
            let mut signal = 0.0;
            let mut noise = 0.0;
            for (m, y) in all.iter().zip(&noisy) {
                let clean = oracle.clean_value(m.digits());
                signal += clean.norm_sqr();
                noise += (y - clean).norm_sqr();
            }
            let n_pts = all.len() as f64;
            ratios.push(signal / (n_pts * (noise / n_pts)));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let target = snr_from_db(target_db);
        assert!((mean - target).abs() < 0.1 * target, "mean {mean} target {target}");
    }

    #[test]
    fn snap_picks_nearest_point() {
        let c = Constellation { rho: 2.0, kappa: 4 };
        assert!((c.snap(Complex64::new(0.1, 1.7)) - Complex64::new(0.0, 2.0)).norm() < 1e-12);
        assert!((c.snap(Complex64::new(0.5, -0.1)) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((c.snap(Complex64::new(-3.0, -0.1)) - Complex64::new(-2.0, 0.0)).norm() < 1e-12);
    }
}
