//! The outer loop: subsample every group, classify bins, then repeatedly
//! peel fresh singletons out of every group until none remain.

use std::collections::HashSet;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::detect::{BinClass, BinCounts, DetectorConfig, GroupDetector};
use crate::error::{usage, Error, Result};
use crate::oracle::FunctionOracle;
use crate::plan::SamplingPlan;
use crate::qary::{QIndex, RootOfUnity};
use crate::spectral::{subsampled_from_samples, SparseSpectrum};

/// Zero tolerance relative to the largest initial bin magnitude, used
/// when the detector config leaves it unset.
pub const RELATIVE_ZERO_TOLERANCE: f64 = 1e-9;

/// Outer iterations allowed per group per expected coefficient.
pub const ITERATIONS_PER_COEFFICIENT: usize = 4;

#[derive(Clone, Debug, Default)]
pub struct DecodeOptions {
    /// Expected sparsity; sets the iteration cap. Defaults to `B`.
    pub sparsity_hint: Option<usize>,
    /// Overrides the derived iteration cap.
    pub max_iterations: Option<usize>,
    pub record_events: bool,
}

/// One entry of the peeling log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DecodeEvent {
    Peel { iteration: usize, c: usize, j: String, k: String, value: [f64; 2] },
    Reclassify { iteration: usize, c: usize, j: String, from: &'static str, to: &'static str },
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub spectrum: SparseSpectrum,
    /// Peeling stopped because no fresh singleton was left, not because
    /// of the iteration cap. Remaining multi-tons are in `final_counts`.
    pub converged: bool,
    pub hit_iteration_cap: bool,
    pub iterations: usize,
    pub peels: usize,
    pub samples_raw: u64,
    pub samples_unique: u64,
    pub initial_counts: BinCounts,
    pub final_counts: BinCounts,
    /// Sum of squared residual bin observations after peeling.
    pub residual_energy: f64,
    pub events: Vec<DecodeEvent>,
}

impl DecodeResult {
    pub fn unresolved_multitons(&self) -> usize {
        self.final_counts.multi_tons
    }
}

fn text(x: &QIndex) -> String {
    x.to_string()
}

/// All groups' bin tables plus the recovered spectrum.
pub struct DecoderState<'a> {
    plan: &'a SamplingPlan,
    cfg: DetectorConfig,
    detectors: Vec<GroupDetector<'a>>,
    roots: RootOfUnity,
    /// Per group, bin-major: `obs[c][j * P_c + p] = U_{c,p}[j]`.
    observations: Vec<Vec<Complex64>>,
    classes: Vec<Vec<BinClass>>,
    dirty: Vec<Vec<bool>>,
    estimate: SparseSpectrum,
    recovered: HashSet<QIndex>,
    iteration: usize,
    record_events: bool,
    events: Vec<DecodeEvent>,
}

impl<'a> DecoderState<'a> {
    /// Builds the state from subsampled observations (offset-major:
    /// `subsampled[c][p][j]`) and classifies every bin.
    pub fn new(
        plan: &'a SamplingPlan,
        mut cfg: DetectorConfig,
        subsampled: Vec<Vec<Vec<Complex64>>>,
        record_events: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if subsampled.len() != plan.groups().len() {
            return usage("observation tables do not match the plan's groups");
        }
        let bins = plan.bins();
        let mut observations = Vec::with_capacity(subsampled.len());
        for (c, per_offset) in subsampled.into_iter().enumerate() {
            let p_count = plan.group(c).offsets.len();
            if per_offset.len() != p_count || per_offset.iter().any(|u| u.len() != bins) {
                return usage(format!("group {c}: observation table has the wrong shape"));
            }
            let mut table = vec![Complex64::default(); bins * p_count];
            for (p, u) in per_offset.iter().enumerate() {
                for (j, &v) in u.iter().enumerate() {
                    table[j * p_count + p] = v;
                }
            }
            observations.push(table);
        }
        if cfg.zero_tolerance == 0.0 {
            let peak = observations.iter().flatten().map(|u| u.norm()).fold(0.0, f64::max);
            cfg.zero_tolerance = RELATIVE_ZERO_TOLERANCE * peak;
        }
        let detectors = (0..plan.groups().len())
            .map(|c| GroupDetector::new(plan, c, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut state = Self {
            plan,
            roots: RootOfUnity::new(plan.q()),
            classes: vec![vec![BinClass::Unresolved; bins]; plan.groups().len()],
            dirty: vec![vec![true; bins]; plan.groups().len()],
            cfg,
            detectors,
            observations,
            estimate: SparseSpectrum::new(plan.q(), plan.n()),
            recovered: HashSet::new(),
            iteration: 0,
            record_events,
            events: Vec::new(),
        };
        state.reclassify(false);
        Ok(state)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn estimate(&self) -> &SparseSpectrum {
        &self.estimate
    }

    pub fn recovered(&self) -> &HashSet<QIndex> {
        &self.recovered
    }

    pub fn events(&self) -> &[DecodeEvent] {
        &self.events
    }

    pub fn class(&self, c: usize, j_rank: usize) -> &BinClass {
        &self.classes[c][j_rank]
    }

    /// Current observation vector of bin `j` in group `c`.
    pub fn bin(&self, c: usize, j_rank: usize) -> &[Complex64] {
        let p = self.plan.group(c).offsets.len();
        &self.observations[c][j_rank * p..(j_rank + 1) * p]
    }

    pub fn counts(&self) -> BinCounts {
        let mut counts = BinCounts::default();
        self.classes.iter().flatten().for_each(|c| counts.add(c));
        counts
    }

    pub fn residual_energy(&self) -> f64 {
        self.observations.iter().flatten().map(|u| u.norm_sqr()).sum()
    }

    /// Re-runs detection on every dirty bin.
    fn reclassify(&mut self, log: bool) {
        let cfg = &self.cfg;
        for c in 0..self.classes.len() {
            let p = self.plan.group(c).offsets.len();
            let det = &self.detectors[c];
            let obs = &self.observations[c];
            let dirty = &self.dirty[c];
            let fresh: Vec<(usize, BinClass)> = (0..dirty.len())
                .into_par_iter()
                .filter(|&j| dirty[j])
                .map(|j| (j, det.detect(j as u64, &obs[j * p..(j + 1) * p], cfg)))
                .collect();
            for (j, class) in fresh {
                let old = std::mem::replace(&mut self.classes[c][j], class);
                if log && self.record_events && old.label() != self.classes[c][j].label() {
                    self.events.push(DecodeEvent::Reclassify {
                        iteration: self.iteration,
                        c,
                        j: text(&self.detectors[c].bin_index(j as u64)),
                        from: old.label(),
                        to: self.classes[c][j].label(),
                    });
                }
                self.dirty[c][j] = false;
            }
        }
    }

    /// Fresh singletons in `(c, rank j)` order.
    pub fn singletons(&self) -> Vec<(usize, usize, QIndex, Complex64)> {
        let mut out = Vec::new();
        for (c, classes) in self.classes.iter().enumerate() {
            for (j, class) in classes.iter().enumerate() {
                if let BinClass::Singleton { k, value } = class {
                    if !self.recovered.contains(k) {
                        out.push((c, j, k.clone(), *value));
                    }
                }
            }
        }
        out
    }

    /// Records `F[k] = v` and subtracts `v omega^{D_c' k}` from bin
    /// `M_c'^T k` of every group `c'`.
    pub fn peel_one(&mut self, c: usize, j_rank: usize, k: &QIndex, value: Complex64) -> Result<()> {
        if self.recovered.contains(k) {
            return Err(Error::Invariant(format!("frequency {k} peeled twice")));
        }
        let q = self.plan.q();
        for (cc, group) in self.plan.groups().iter().enumerate() {
            let target = group.matrix.transpose_mul(k)?.rank() as usize;
            let p = group.offsets.len();
            let row = &mut self.observations[cc][target * p..(target + 1) * p];
            for (u, d) in row.iter_mut().zip(&group.offsets) {
                let phase = crate::qary::dot_mod(d.digits(), k.digits(), q);
                *u -= value * self.roots.pow(phase as u64);
            }
            self.dirty[cc][target] = true;
        }
        self.recovered.insert(k.clone());
        self.estimate.insert(k.clone(), value)?;
        if self.record_events {
            self.events.push(DecodeEvent::Peel {
                iteration: self.iteration,
                c,
                j: text(&self.detectors[c].bin_index(j_rank as u64)),
                k: text(k),
                value: [value.re, value.im],
            });
        }
        Ok(())
    }

    /// Peels until no fresh singleton remains or `cap` sweeps have run.
    /// Returns whether the cap stopped the loop.
    pub fn run(&mut self, cap: usize) -> Result<bool> {
        loop {
            let fresh = self.singletons();
            if fresh.is_empty() {
                return Ok(false);
            }
            if self.iteration >= cap {
                return Ok(true);
            }
            self.iteration += 1;
            let before = self.recovered.len();
            for (c, j, k, v) in fresh {
                if self.recovered.contains(&k) {
                    continue;
                }
                self.peel_one(c, j, &k, v)?;
            }
            if self.recovered.len() == before {
                return Err(Error::Invariant("peeling sweep made no progress".into()));
            }
            self.reclassify(true);
        }
    }

    pub fn iterations(&self) -> usize {
        self.iteration
    }
}

/// Runs every subsampled transform of the plan against the oracle.
/// Returns `[c][p][j]` tables plus the raw and unique query counts.
pub fn subsample_all(
    oracle: &dyn FunctionOracle,
    plan: &SamplingPlan,
) -> Result<(Vec<Vec<Vec<Complex64>>>, u64, u64)> {
    if oracle.q() != plan.q() || oracle.n() != plan.n() {
        return usage(format!(
            "oracle domain Z_{}^{} does not match plan domain Z_{}^{}",
            oracle.q(),
            oracle.n(),
            plan.q(),
            plan.n()
        ));
    }
    let points: Vec<Vec<QIndex>> = (0..plan.groups().len()).map(|c| plan.query_points(c)).collect();
    for p in &points {
        oracle.check_coverage(p)?;
    }
    let raw: u64 = points.iter().map(|p| p.len() as u64).sum();
    let unique = points.iter().flatten().map(QIndex::rank).collect::<HashSet<_>>().len() as u64;

    let roots = RootOfUnity::new(plan.q());
    let bins = plan.bins();
    let mut tables = Vec::with_capacity(points.len());
    for pts in &points {
        let samples = oracle.query_batch(pts)?;
        let per_offset: Vec<Vec<Complex64>> = samples
            .par_chunks(bins)
            .map(|chunk| subsampled_from_samples(chunk.to_vec(), plan.q(), plan.b(), &roots))
            .collect();
        tables.push(per_offset);
    }
    Ok((tables, raw, unique))
}

/// Full transform: subsampling phase then peeling phase.
pub fn decode(
    oracle: &dyn FunctionOracle,
    plan: &SamplingPlan,
    cfg: &DetectorConfig,
    options: &DecodeOptions,
) -> Result<DecodeResult> {
    plan.validate()?;
    let (tables, samples_raw, samples_unique) = subsample_all(oracle, plan)?;
    let mut state = DecoderState::new(plan, cfg.clone(), tables, options.record_events)?;
    let initial_counts = state.counts();
    let sparsity = options.sparsity_hint.unwrap_or_else(|| plan.bins()).max(1);
    let cap = options
        .max_iterations
        .unwrap_or(plan.groups().len() * sparsity * ITERATIONS_PER_COEFFICIENT);
    let hit_iteration_cap = state.run(cap)?;
    let final_counts = state.counts();
    Ok(DecodeResult {
        converged: !hit_iteration_cap,
        hit_iteration_cap,
        iterations: state.iterations(),
        peels: state.recovered().len(),
        samples_raw,
        samples_unique,
        initial_counts,
        final_counts,
        residual_energy: state.residual_energy(),
        spectrum: state.estimate.clone(),
        events: std::mem::take(&mut state.events),
    })
}
