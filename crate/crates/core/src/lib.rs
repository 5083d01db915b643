//! Sparse Fourier transforms of functions on `Z_q^n`.
//!
//! A function is only observed through an oracle. The decoder subsamples
//! it along a few aliasing patterns, classifies each bin as zero-ton,
//! singleton or multi-ton, and peels singletons until nothing is left.

pub mod coded;
pub mod detect;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod peel;
pub mod plan;
pub mod qary;
pub mod spectral;
pub mod synth;

pub use detect::{BinClass, BinCounts, DetectorConfig};
pub use error::{Error, Result};
pub use harness::{run_sweep, run_transform, ExperimentConfig, OracleBinding, RunOptions, SweepSpec};
pub use oracle::{FunctionOracle, QueryCounters, SpectrumOracle, SubprocessOracle, TableOracle};
pub use peel::{decode, DecodeEvent, DecodeOptions, DecodeResult, DecoderState};
pub use plan::{PlanConfig, PlanRecord, Regime, SamplingPlan};
pub use qary::{QIndex, RootOfUnity, ZqMatrix};
pub use spectral::{nmse, DenseSignal, SparseSpectrum};
pub use synth::{synthesize, Constellation, NoiseLevel, SyntheticSpec, ValueModel};
