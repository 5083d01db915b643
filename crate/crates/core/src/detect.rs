//! Bin classification: zero-ton, singleton `(k, F[k])`, or multi-ton.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coded::CodedOffsetPlan;
use crate::error::{usage, Error, Result};
use crate::plan::{Regime, SamplingPlan, SubsamplingGroup};
use crate::qary::{arg_q, dot_mod, space_size, QIndex, RootOfUnity, ZqMatrix};
use crate::synth::Constellation;

/// Default verification slack.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Relative tolerance of the noiseless magnitude and phase checks.
pub const NOISELESS_RATIO_TOLERANCE: f64 = 1e-6;
/// Default cap on the number of frequencies enumerated by the MLE search.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub enum BinClass {
    ZeroTon,
    Singleton { k: QIndex, value: Complex64 },
    MultiTon,
    /// Not yet classified.
    Unresolved,
}

impl BinClass {
    pub fn label(&self) -> &'static str {
        match self {
            BinClass::ZeroTon => "zero-ton",
            BinClass::Singleton { .. } => "singleton",
            BinClass::MultiTon => "multi-ton",
            BinClass::Unresolved => "unresolved",
        }
    }

    pub fn is_singleton(&self) -> bool {
        matches!(self, BinClass::Singleton { .. })
    }
}

/// Number of bins in each class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub zero_tons: usize,
    pub singletons: usize,
    pub multi_tons: usize,
    pub unresolved: usize,
}

impl BinCounts {
    pub fn add(&mut self, class: &BinClass) {
        match class {
            BinClass::ZeroTon => self.zero_tons += 1,
            BinClass::Singleton { .. } => self.singletons += 1,
            BinClass::MultiTon => self.multi_tons += 1,
            BinClass::Unresolved => self.unresolved += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub regime: Regime,
    /// Threshold slack `gamma` in `(0, 1)`.
    pub gamma: f64,
    /// Oracle noise variance `sigma^2`; the per-bin power is `sigma^2 / B`.
    pub sigma2: f64,
    /// Known value alphabet; `None` keeps the free estimate.
    pub constellation: Option<Constellation>,
    /// Absolute magnitude treated as zero. Also floors the per-bin noise
    /// power so that `sigma^2 = 0` tolerates round-off.
    pub zero_tolerance: f64,
    pub ratio_tolerance: f64,
    pub enumeration_budget: u64,
}

impl DetectorConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            gamma: DEFAULT_GAMMA,
            sigma2: 0.0,
            constellation: None,
            zero_tolerance: 0.0,
            ratio_tolerance: NOISELESS_RATIO_TOLERANCE,
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return usage(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return usage(format!("sigma^2 must be finite and non-negative, got {}", self.sigma2));
        }
        Ok(())
    }

    /// Warning text when `gamma` violates `gamma < (eta / 2) SNR`.
    pub fn gamma_warning(&self, snr: f64, eta: f64) -> Option<String> {
        let bound = eta / 2.0 * snr;
        (self.gamma >= bound).then(|| {
            format!("gamma = {} is not below (eta/2) SNR = {bound:.4}; verification guarantees do not apply", self.gamma)
        })
    }
}

/// Enumerates the frequencies that hash to a bin.
enum Candidates {
    /// `M` selects distinct coordinates: fix those, free the rest.
    Selection { fixed: Vec<usize>, free: Vec<usize> },
    /// Precomputed fibres of `k -> M^T k`, by bin rank.
    Buckets(Vec<Vec<u64>>),
}

impl Candidates {
    fn build(matrix: &ZqMatrix, budget: u64) -> Result<Self> {
        let (q, n, b) = (matrix.q(), matrix.rows(), matrix.cols());
        let mut fixed = Vec::with_capacity(b);
        for c in 0..b {
            let col = matrix.column(c);
            let ones: Vec<usize> = col.iter().enumerate().filter(|(_, &v)| v != 0).map(|(r, _)| r).collect();
            if ones.len() == 1 && col[ones[0]] == 1 && !fixed.contains(&ones[0]) {
                fixed.push(ones[0]);
            } else {
                fixed.clear();
                break;
            }
        }
        if fixed.len() == b {
            let per_bin = space_size(q, n - b)?;
            if per_bin > budget {
                return Err(budget_error(per_bin, budget));
            }
            let free = (0..n).filter(|r| !fixed.contains(r)).collect();
            return Ok(Candidates::Selection { fixed, free });
        }
        let total = space_size(q, n)?;
        if total > budget {
            return Err(budget_error(total, budget));
        }
        let mut buckets = vec![Vec::new(); (q as usize).pow(b as u32)];
        for k in crate::qary::enumerate(q, n)? {
            let j = QIndex::from_reduced(q, matrix.apply_transpose(k.digits()).into_iter().map(u64::from));
            buckets[j.rank() as usize].push(k.rank());
        }
        Ok(Candidates::Buckets(buckets))
    }

    fn for_each(&self, q: u32, n: usize, j: &QIndex, mut f: impl FnMut(&[u32])) {
        match self {
            Candidates::Selection { fixed, free } => {
                let mut digits = vec![0u32; n];
                for (i, &r) in fixed.iter().enumerate() {
                    digits[r] = j.digit(i);
                }
                loop {
                    f(&digits);
                    let mut carried = true;
                    for &r in free {
                        digits[r] += 1;
                        if digits[r] < q {
                            carried = false;
                            break;
                        }
                        digits[r] = 0;
                    }
                    if carried {
                        return;
                    }
                }
            }
            Candidates::Buckets(buckets) => {
                for &rank in &buckets[j.rank() as usize] {
                    let k = QIndex::unrank(q, n, rank).expect("rank from enumeration");
                    f(k.digits());
                }
            }
        }
    }
}

fn budget_error(count: u64, budget: u64) -> Error {
    Error::Resource(format!(
        "MLE search would enumerate {count} frequencies (budget {budget}); use the robust-sl regime"
    ))
}

/// Per-group state shared by every bin of that group.
pub struct GroupDetector<'a> {
    q: u32,
    n: usize,
    b: usize,
    group: &'a SubsamplingGroup,
    coded: Option<&'a CodedOffsetPlan>,
    roots: RootOfUnity,
    /// Per-bin noise power `sigma^2 / B`, floored by the squared zero tolerance.
    nu2: f64,
    candidates: Option<Candidates>,
}

impl<'a> GroupDetector<'a> {
    pub fn new(plan: &'a SamplingPlan, c: usize, cfg: &DetectorConfig) -> Result<Self> {
        if plan.regime() != cfg.regime {
            return usage(format!("plan regime {} does not match detector regime {}", plan.regime(), cfg.regime));
        }
        let group = plan.group(c);
        let candidates = match cfg.regime {
            Regime::RobustNearLinear => Some(Candidates::build(&group.matrix, cfg.enumeration_budget)?),
            _ => None,
        };
        let nu2 = (cfg.sigma2 / plan.bins() as f64).max(cfg.zero_tolerance * cfg.zero_tolerance);
        Ok(Self {
            q: plan.q(),
            n: plan.n(),
            b: plan.b(),
            group,
            coded: plan.coded(),
            roots: RootOfUnity::new(plan.q()),
            nu2,
            candidates,
        })
    }

    pub fn nu2(&self) -> f64 {
        self.nu2
    }

    pub fn offsets(&self) -> &[QIndex] {
        &self.group.offsets
    }

    /// Offset signature `omega^{D k}`.
    pub fn signature(&self, k: &[u32]) -> Vec<Complex64> {
        self.group
            .offsets
            .iter()
            .map(|d| self.roots.pow(dot_mod(d.digits(), k, self.q) as u64))
            .collect()
    }

    fn hashes_to(&self, k: &[u32], j: &QIndex) -> bool {
        self.group.matrix.apply_transpose(k) == j.digits()
    }

    pub fn bin_index(&self, j_rank: u64) -> QIndex {
        QIndex::unrank(self.q, self.b, j_rank).expect("bin rank in range")
    }

    /// Classifies one bin with the detector for `cfg.regime`.
    pub fn detect(&self, j_rank: u64, obs: &[Complex64], cfg: &DetectorConfig) -> BinClass {
        let j = self.bin_index(j_rank);
        match cfg.regime {
            Regime::Noiseless | Regime::Coded => detect_noiseless(self, &j, obs, cfg),
            Regime::RobustNearLinear => detect_robust_near_linear(self, &j, obs, cfg),
            Regime::RobustSubLinear => detect_robust_sub_linear(self, &j, obs, cfg),
        }
    }

    fn estimate_value(&self, corr: Complex64, count: usize, cfg: &DetectorConfig) -> Complex64 {
        let alpha = corr / count as f64;
        match cfg.constellation {
            Some(c) => c.snap(alpha),
            None => alpha,
        }
    }

    fn verify(&self, obs: &[Complex64], k: &[u32], value: Complex64, gamma: f64) -> bool {
        let residual: f64 = obs
            .iter()
            .zip(self.signature(k))
            .map(|(u, s)| (u - value * s).norm_sqr())
            .sum::<f64>()
            / obs.len() as f64;
        residual <= (1.0 + gamma) * self.nu2
    }
}

fn mean_energy(obs: impl Iterator<Item = Complex64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for u in obs {
        total += u.norm_sqr();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Magnitude-ratio bin typing with phase read-out of `k`.
///
/// Offsets are the zero row followed by the rows of `D` (identity or a
/// parity-check matrix).
pub fn detect_noiseless(det: &GroupDetector<'_>, j: &QIndex, obs: &[Complex64], cfg: &DetectorConfig) -> BinClass {
    let zero_tol = cfg.zero_tolerance;
    if obs.iter().all(|u| u.norm() <= zero_tol) {
        return BinClass::ZeroTon;
    }
    let reference = obs[0];
    if reference.norm() <= zero_tol {
        return BinClass::MultiTon;
    }
    let mut phases = Vec::with_capacity(obs.len() - 1);
    for &u in &obs[1..] {
        let ratio = u / reference;
        if (ratio.norm() - 1.0).abs() > cfg.ratio_tolerance {
            return BinClass::MultiTon;
        }
        let a = arg_q(ratio, det.q).expect("nonzero ratio");
        if (ratio - det.roots.pow(a as u64)).norm() > cfg.ratio_tolerance {
            return BinClass::MultiTon;
        }
        phases.push(a);
    }
    let k = match (cfg.regime, det.coded) {
        (Regime::Coded, Some(code)) => match code.syndrome_decode(&phases) {
            Some(k) => k,
            None => return BinClass::MultiTon,
        },
        _ => {
            if phases.len() != det.n {
                return BinClass::MultiTon;
            }
            QIndex::new(det.q, phases).expect("quantized phases lie in Z_q")
        }
    };
    if !det.hashes_to(k.digits(), j) {
        return BinClass::MultiTon;
    }
    BinClass::Singleton { k, value: reference }
}

/// Energy test, exhaustive MLE over the bin's fibre, residual verification.
pub fn detect_robust_near_linear(det: &GroupDetector<'_>, j: &QIndex, obs: &[Complex64], cfg: &DetectorConfig) -> BinClass {
    let p = obs.len();
    if mean_energy(obs.iter().copied()) <= (1.0 + cfg.gamma) * det.nu2 {
        return BinClass::ZeroTon;
    }
    let Some(candidates) = det.candidates.as_ref() else {
        return BinClass::Unresolved;
    };
    // argmin ||U - alpha_hat s_k||^2 = argmax |s_k^H U| since |s_k[p]| = 1
    let mut best: Option<(f64, Vec<u32>, Complex64)> = None;
    candidates.for_each(det.q, det.n, j, |k| {
        let corr: Complex64 = det.signature(k).iter().zip(obs).map(|(s, u)| s.conj() * u).sum();
        let score = corr.norm_sqr();
        let better = match &best {
            None => true,
            Some((s, bk, _)) => score > *s || (score == *s && k < bk.as_slice()),
        };
        if better {
            best = Some((score, k.to_vec(), corr));
        }
    });
    let Some((_, k, corr)) = best else {
        return BinClass::MultiTon;
    };
    let value = det.estimate_value(corr, p, cfg);
    if det.verify(obs, &k, value, cfg.gamma) {
        BinClass::Singleton { k: QIndex::new(det.q, k).expect("candidate digits"), value }
    } else {
        BinClass::MultiTon
    }
}

/// Most frequent symbol; ties go to the smallest.
pub fn majority(votes: &[usize]) -> u32 {
    let mut best = 0;
    for (a, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = a;
        }
    }
    best as u32
}

/// Symbol-by-symbol recovery from modulated offsets by majority vote over
/// quantized phase ratios, then value estimation and verification.
pub fn detect_robust_sub_linear(det: &GroupDetector<'_>, j: &QIndex, obs: &[Complex64], cfg: &DetectorConfig) -> BinClass {
    let n = det.n;
    let block = n + 1;
    if obs.is_empty() || obs.len() % block != 0 {
        return BinClass::Unresolved;
    }
    let blocks = obs.len() / block;
    let base = || obs.iter().step_by(block).copied();
    if mean_energy(base()) <= (1.0 + cfg.gamma) * det.nu2 {
        return BinClass::ZeroTon;
    }

    let q = det.q as usize;
    let mut votes = vec![0usize; q];
    let mut k = Vec::with_capacity(n);
    for r in 0..n {
        votes.iter_mut().for_each(|v| *v = 0);
        for p in 0..blocks {
            let u = obs[p * block];
            let shifted = obs[p * block + 1 + r];
            // a zero observation has no phase; that block abstains
            if let Ok(a) = arg_q(shifted / u, det.q) {
                votes[a as usize] += 1;
            }
        }
        k.push(majority(&votes));
    }
    if !det.hashes_to(&k, j) {
        return BinClass::MultiTon;
    }

    // estimation and verification both run on the base offsets only
    let signature: Vec<Complex64> = (0..blocks)
        .map(|p| det.roots.pow(dot_mod(det.group.offsets[p * block].digits(), &k, det.q) as u64))
        .collect();
    let corr: Complex64 = signature.iter().zip(base()).map(|(s, u)| s.conj() * u).sum();
    let value = det.estimate_value(corr, blocks, cfg);
    let residual = mean_energy(signature.iter().zip(base()).map(|(s, u)| u - value * s));
    if residual <= (1.0 + cfg.gamma) * det.nu2 {
        BinClass::Singleton { k: QIndex::new(det.q, k).expect("majority symbols lie in Z_q"), value }
    } else {
        BinClass::MultiTon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::PlanConfig;
    use crate::qary::ZqMatrix;
    use crate::spectral::SparseSpectrum;

    /// Aliased observations `sum_{M^T k = j} F[k] omega^{<d,k>}` by direct sum.
    pub(crate) fn alias(plan: &SamplingPlan, c: usize, spec: &SparseSpectrum, j: &QIndex) -> Vec<Complex64> {
        let g = plan.group(c);
        let w = RootOfUnity::new(plan.q());
        g.offsets
            .iter()
            .map(|d| {
                spec.iter()
                    .filter(|(k, _)| &g.matrix.transpose_mul(k).unwrap() == j)
                    .map(|(k, v)| v * w.pow(dot_mod(d.digits(), k.digits(), plan.q()) as u64))
                    .sum()
            })
            .collect()
    }

    fn plan(q: u32, n: usize, b: usize, groups: usize, regime: Regime, p1: usize, seed: u64) -> SamplingPlan {
        SamplingPlan::generate(&PlanConfig { q, n, b, groups, regime, p1, degree_bound: 1, seed }).unwrap()
    }

    fn noiseless_cfg() -> DetectorConfig {
        DetectorConfig { zero_tolerance: 1e-9, ..DetectorConfig::new(Regime::Noiseless) }
    }

    #[test]
    fn noiseless_zero_and_singleton() {
        let p = plan(3, 2, 1, 2, Regime::Noiseless, 0, 0);
        let cfg = noiseless_cfg();
        let det = GroupDetector::new(&p, 0, &cfg).unwrap();
        assert_eq!(det.detect(0, &[Complex64::default(); 3], &cfg), BinClass::ZeroTon);

        // F = {(2,1): 1}: U = (1, omega^2, omega^1), bin j = M^T k = (2)
        let w = RootOfUnity::new(3);
        let obs = [Complex64::new(1.0, 0.0), w.pow(2), w.pow(1)];
        let k = QIndex::new(3, vec![2, 1]).unwrap();
        assert_eq!(det.detect(2, &obs, &cfg), BinClass::Singleton { k, value: Complex64::new(1.0, 0.0) });
        // same observations in the wrong bin cannot be this singleton
        assert_eq!(det.detect(1, &obs, &cfg), BinClass::MultiTon);
    }

    #[test]
    fn noiseless_two_term_bin_is_multiton() {
        let p = plan(3, 2, 1, 2, Regime::Noiseless, 0, 0);
        let cfg = noiseless_cfg();
        let det = GroupDetector::new(&p, 0, &cfg).unwrap();
        // (2,1) and (2,0) share bin 2 of group 0; different magnitudes
        let spec = SparseSpectrum::from_entries(
            3,
            2,
            [(QIndex::new(3, vec![2, 1]).unwrap(), Complex64::new(1.0, 0.0)), (QIndex::new(3, vec![2, 0]).unwrap(), Complex64::new(0.4, 0.2))],
        )
        .unwrap();
        let j = QIndex::new(3, vec![2]).unwrap();
        let obs = alias(&p, 0, &spec, &j);
        assert_eq!(det.detect(2, &obs, &cfg), BinClass::MultiTon);
    }

    #[test]
    fn noiseless_consistency_exhaustive() {
        // every bin with exactly one aliased term is a singleton with the exact pair
        for seed in 0..20u64 {
            let p = plan(3, 4, 2, 3, Regime::Noiseless, 0, seed);
            let synth = crate::synth::SyntheticSpec::seeded(
                3,
                4,
                6,
                crate::synth::ValueModel::General { rho_min: 1.0, rho_max: 3.0 },
                crate::synth::NoiseLevel::Sigma2(0.0),
                seed,
            );
            let (spec, _) = crate::synth::synthesize(&synth).unwrap();
            let cfg = noiseless_cfg();
            for c in 0..3 {
                let det = GroupDetector::new(&p, c, &cfg).unwrap();
                for j in crate::qary::enumerate(3, 2).unwrap() {
                    let members: Vec<_> = spec
                        .iter()
                        .filter(|(k, _)| p.group(c).matrix.transpose_mul(k).unwrap() == j)
                        .collect();
                    let class = det.detect(j.rank(), &alias(&p, c, &spec, &j), &cfg);
                    match members.len() {
                        0 => assert_eq!(class, BinClass::ZeroTon),
                        1 => match class {
                            BinClass::Singleton { k, value } => {
                                assert_eq!(&k, members[0].0);
                                assert!((value - members[0].1).norm() < 1e-12);
                            }
                            other => panic!("expected singleton, got {other:?}"),
                        },
                        _ => assert_eq!(class, BinClass::MultiTon),
                    }
                }
            }
        }
    }

    #[test]
    fn near_linear_recovers_exact_singleton_without_noise() {
        let p = plan(2, 4, 2, 3, Regime::RobustNearLinear, 8, 1);
        let cfg = DetectorConfig { zero_tolerance: 1e-9, ..DetectorConfig::new(Regime::RobustNearLinear) };
        let k = QIndex::new(2, vec![1, 0, 1, 1]).unwrap();
        let v = Complex64::new(-0.5, 0.75);
        let spec = SparseSpectrum::from_entries(2, 4, [(k.clone(), v)]).unwrap();
        for c in 0..3 {
            let det = GroupDetector::new(&p, c, &cfg).unwrap();
            let j = p.group(c).matrix.transpose_mul(&k).unwrap();
            let obs = alias(&p, c, &spec, &j);
            match det.detect(j.rank(), &obs, &cfg) {
                BinClass::Singleton { k: got, value } => {
                    assert_eq!(got, k);
                    assert!((value - v).norm() < 1e-12);
                    let residual: f64 = obs.iter().zip(det.signature(got.digits())).map(|(u, s)| (u - value * s).norm_sqr()).sum();
                    assert!(residual < 1e-24);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn near_linear_zero_ton_threshold() {
        // P = 10, nu^2 = 0.01, gamma = 0.5: energy 0.012 <= 0.015
        let p = plan(2, 4, 2, 1, Regime::RobustNearLinear, 10, 3);
        let bins = p.bins() as f64;
        let cfg = DetectorConfig { sigma2: 0.01 * bins, ..DetectorConfig::new(Regime::RobustNearLinear) };
        let det = GroupDetector::new(&p, 0, &cfg).unwrap();
        assert!((det.nu2() - 0.01).abs() < 1e-15);
        let amp = (0.012f64).sqrt();
        let obs: Vec<_> = (0..10).map(|i| Complex64::from_polar(amp, i as f64)).collect();
        assert_eq!(det.detect(0, &obs, &cfg), BinClass::ZeroTon);
        let amp = (0.016f64).sqrt();
        let obs: Vec<_> = (0..10).map(|i| Complex64::from_polar(amp, i as f64)).collect();
        assert_ne!(det.detect(0, &obs, &cfg), BinClass::ZeroTon);
    }

    #[test]
    fn near_linear_budget_is_enforced() {
        let p = plan(2, 6, 1, 7, Regime::RobustNearLinear, 4, 0);
        let cfg = DetectorConfig { enumeration_budget: 16, ..DetectorConfig::new(Regime::RobustNearLinear) };
        assert!(matches!(GroupDetector::new(&p, 0, &cfg), Err(Error::Resource(_))));
    }

    #[test]
    fn selection_and_bucket_candidates_agree() {
        let sel = ZqMatrix::new(3, 3, 1, vec![0, 1, 0]).unwrap();
        let general = ZqMatrix::new(3, 3, 1, vec![0, 2, 0]).unwrap();
        let a = Candidates::build(&sel, 1 << 20).unwrap();
        assert!(matches!(a, Candidates::Selection { .. }));
        let b = Candidates::build(&general, 1 << 20).unwrap();
        assert!(matches!(b, Candidates::Buckets(_)));
        let j = QIndex::new(3, vec![1]).unwrap();
        let mut xs = Vec::new();
        a.for_each(3, 3, &j, |k| xs.push(k.to_vec()));
        let mut ys = Vec::new();
        // digit 1 times 2 equals 1 mod 3 means digit 1 = 2
        b.for_each(3, 3, &QIndex::new(3, vec![1]).unwrap(), |k| ys.push(k.to_vec()));
        assert_eq!(xs.len(), 9);
        assert!(xs.iter().all(|k| k[1] == 1));
        assert_eq!(ys.len(), 9);
        assert!(ys.iter().all(|k| k[1] == 2));
    }

    #[test]
    fn majority_ties_pick_smallest() {
        assert_eq!(majority(&[2, 2, 0, 2, 1]), 0);
        assert_eq!(majority(&[0, 1, 3, 3]), 2);
        assert_eq!(majority(&[0, 0, 0]), 0);
    }

    #[test]
    fn sub_linear_noiseless_votes_are_exact() {
        let p = plan(4, 6, 2, 3, Regime::RobustSubLinear, 3, 5);
        let cfg = DetectorConfig {
            zero_tolerance: 1e-9,
            constellation: Some(Constellation { rho: 1.0, kappa: 4 }),
            ..DetectorConfig::new(Regime::RobustSubLinear)
        };
        let k = QIndex::new(4, vec![3, 0, 2, 1, 1, 3]).unwrap();
        let v = Complex64::new(0.0, 1.0);
        let spec = SparseSpectrum::from_entries(4, 6, [(k.clone(), v)]).unwrap();
        for c in 0..3 {
            let det = GroupDetector::new(&p, c, &cfg).unwrap();
            let j = p.group(c).matrix.transpose_mul(&k).unwrap();
            match det.detect(j.rank(), &alias(&p, c, &spec, &j), &cfg) {
                BinClass::Singleton { k: got, value } => {
                    assert_eq!(got, k);
                    assert!((value - v).norm() < 1e-12);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn sub_linear_zero_base_abstains() {
        let p = plan(3, 2, 1, 1, Regime::RobustSubLinear, 2, 0);
        let cfg = DetectorConfig { zero_tolerance: 1e-9, ..DetectorConfig::new(Regime::RobustSubLinear) };
        let det = GroupDetector::new(&p, 0, &cfg).unwrap();
        let k = QIndex::new(3, vec![1, 2]).unwrap();
        let spec = SparseSpectrum::from_entries(3, 2, [(k.clone(), Complex64::new(1.0, 0.0))]).unwrap();
        let j = p.group(0).matrix.transpose_mul(&k).unwrap();
        let mut obs = alias(&p, 0, &spec, &j);
        // knock out the first block's base: its votes are skipped, the
        // second block still determines k, verification then fails
        obs[0] = Complex64::default();
        assert_eq!(det.detect(j.rank(), &obs, &cfg), BinClass::MultiTon);
    }

    #[test]
    fn gamma_validation() {
        let mut cfg = DetectorConfig::new(Regime::RobustSubLinear);
        assert!(cfg.validate().is_ok());
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        cfg.gamma = 0.5;
        assert!(cfg.gamma_warning(10.0, 1.0).is_none());
        assert!(cfg.gamma_warning(0.5, 1.0).is_some());
    }
}
