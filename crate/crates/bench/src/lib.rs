//! Fixtures shared by the benchmarks.

use qsft::harness::ExperimentConfig;
use qsft::plan::{Regime, SamplingPlan};
use qsft::synth::{synthesize, ValueModel};
use qsft::{DetectorConfig, SparseSpectrum, SpectrumOracle};

pub struct Fixture {
    pub truth: SparseSpectrum,
    pub oracle: SpectrumOracle,
    pub plan: SamplingPlan,
    pub detector: DetectorConfig,
}

/// A synthetic instance with a plan built for it.
pub fn fixture(q: u32, n: usize, sparsity: usize, regime: Regime, snr_db: Option<f64>, seed: u64) -> Fixture {
    let cfg = ExperimentConfig {
        q,
        n,
        sparsity,
        regime,
        snr_db,
        values: ValueModel::Assumption2 { rho: 1.0, kappa: 4 },
        seed,
        ..Default::default()
    };
    let (truth, oracle) = synthesize(&cfg.synthetic_spec()).expect("valid synthetic spec");
    let plan = SamplingPlan::generate(&cfg.plan_config()).expect("valid plan");
    let detector = DetectorConfig {
        sigma2: oracle.sigma2(),
        constellation: cfg.values.constellation(),
        ..DetectorConfig::new(regime)
    };
    Fixture { truth, oracle, plan, detector }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_matches_request() {
        let f = fixture(3, 6, 5, Regime::Noiseless, None, 1);
        assert_eq!(f.truth.len(), 5);
        assert_eq!(f.plan.q(), 3);
        assert_eq!(f.detector.sigma2, 0.0);
    }
}
